//! The four training losses, their weighted combination, and the
//! momentum-based controller that adapts the combination weights.
//!
//! Every loss has a value function and a companion `_grad` function that
//! accumulates `scale * dL/dx` into caller-owned gradient buffers. A scale
//! of exactly zero contributes bitwise-zero gradient (the `_grad` functions
//! return early), which is what makes loss ablations exact rather than
//! approximate.

use crate::cohort::DdiMatrix;
use crate::error::{Error, Result};
use crate::model::PairForward;
use crate::numerics::sigmoid_scalar;

/// Guard inside the reconstruction gradient's square-root denominator. The
/// loss *value* stays the exact 2-norm so a perfect reconstruction reports
/// exactly zero; only the gradient needs the guard (the 2-norm is
/// non-smooth at zero).
const REC_GRAD_EPS: f64 = 1e-12;

/// Treat a running mean below this as zero when forming relative
/// differences; losses can legitimately collapse to ~0.
const MEAN_FLOOR: f64 = 1e-12;

fn check_same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} vs {b}")));
    }
    Ok(())
}

fn check_multi_hot(what: &str, target: &[f64]) -> Result<()> {
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Shape(format!("{what}: target entries must be 0 or 1")));
    }
    Ok(())
}

/// Unsupervised reconstruction loss: the (unsquared) 2-norm
/// `‖σ(m_prev + u) − σ(m_cur)‖₂`. Zero exactly when the shifted previous
/// scores reproduce the current scores through the sigmoid.
pub fn reconstruction_loss(m_prev: &[f64], u: &[f64], m_cur: &[f64]) -> Result<f64> {
    check_same_len("reconstruction_loss", m_prev.len(), u.len())?;
    check_same_len("reconstruction_loss", m_prev.len(), m_cur.len())?;
    let mut sum_sq = 0.0;
    for i in 0..m_prev.len() {
        let e = sigmoid_scalar(m_prev[i] + u[i]) - sigmoid_scalar(m_cur[i]);
        sum_sq += e * e;
    }
    Ok(sum_sq.sqrt())
}

/// Accumulates `scale * d(reconstruction_loss)/d{m_prev, u, m_cur}`.
pub fn reconstruction_loss_grad(
    m_prev: &[f64],
    u: &[f64],
    m_cur: &[f64],
    scale: f64,
    dm_prev: &mut [f64],
    du: &mut [f64],
    dm_cur: &mut [f64],
) -> Result<()> {
    if scale == 0.0 {
        return Ok(());
    }
    check_same_len("reconstruction_loss_grad", m_prev.len(), u.len())?;
    check_same_len("reconstruction_loss_grad", m_prev.len(), m_cur.len())?;
    let n = m_prev.len();
    let mut shifted = Vec::with_capacity(n);
    let mut cur = Vec::with_capacity(n);
    let mut sum_sq = 0.0;
    for i in 0..n {
        let a = sigmoid_scalar(m_prev[i] + u[i]);
        let b = sigmoid_scalar(m_cur[i]);
        shifted.push(a);
        cur.push(b);
        let e = a - b;
        sum_sq += e * e;
    }
    let denom = (sum_sq + REC_GRAD_EPS).sqrt();
    for i in 0..n {
        let e = shifted[i] - cur[i];
        let da = scale * e * shifted[i] * (1.0 - shifted[i]) / denom;
        let db = -scale * e * cur[i] * (1.0 - cur[i]) / denom;
        dm_prev[i] += da;
        du[i] += da;
        dm_cur[i] += db;
    }
    Ok(())
}

/// Interaction penalty on the current visit: `Σᵢ Σⱼ Aᵢⱼ ôᵢ ôⱼ` with
/// `ô = σ(m_cur)`. The full double sum counts each symmetric pair twice,
/// exactly as the objective is written.
pub fn ddi_loss(m_cur: &[f64], ddi: &DdiMatrix) -> Result<f64> {
    check_same_len("ddi_loss", m_cur.len(), ddi.n_med())?;
    let o: Vec<f64> = m_cur.iter().map(|&x| sigmoid_scalar(x)).collect();
    let mut loss = 0.0;
    for i in 0..o.len() {
        for j in 0..o.len() {
            if ddi.get(i, j) {
                loss += o[i] * o[j];
            }
        }
    }
    Ok(loss)
}

/// Accumulates `scale * d(ddi_loss)/d(m_cur)`.
pub fn ddi_loss_grad(m_cur: &[f64], ddi: &DdiMatrix, scale: f64, dm_cur: &mut [f64]) -> Result<()> {
    if scale == 0.0 {
        return Ok(());
    }
    check_same_len("ddi_loss_grad", m_cur.len(), ddi.n_med())?;
    let o: Vec<f64> = m_cur.iter().map(|&x| sigmoid_scalar(x)).collect();
    for i in 0..o.len() {
        let mut row_sum = 0.0;
        for j in 0..o.len() {
            if ddi.get(i, j) {
                row_sum += o[j];
            }
        }
        // dL/dô_i = 2 Σ_j A_ij ô_j by symmetry of A.
        dm_cur[i] += scale * 2.0 * row_sum * o[i] * (1.0 - o[i]);
    }
    Ok(())
}

/// Sum-form binary cross entropy against a 0/1 target, evaluated in the
/// numerically stable logit arrangement (no direct `log σ` at large |x|).
pub fn bce_loss(m_hat: &[f64], target: &[f64]) -> Result<f64> {
    check_same_len("bce_loss", m_hat.len(), target.len())?;
    check_multi_hot("bce_loss", target)?;
    let mut loss = 0.0;
    for (&x, &t) in m_hat.iter().zip(target) {
        loss += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
    }
    Ok(loss)
}

/// Accumulates `scale * d(bce_loss)/d(m_hat)`; the per-entry gradient is
/// `σ(x) − t`.
pub fn bce_loss_grad(m_hat: &[f64], target: &[f64], scale: f64, dm: &mut [f64]) -> Result<()> {
    if scale == 0.0 {
        return Ok(());
    }
    check_same_len("bce_loss_grad", m_hat.len(), target.len())?;
    check_multi_hot("bce_loss_grad", target)?;
    for i in 0..m_hat.len() {
        dm[i] += scale * (sigmoid_scalar(m_hat[i]) - target[i]);
    }
    Ok(())
}

/// Multi-label margin loss: over every (positive i, negative j) pair,
/// `max(0, 1 − (ôᵢ − ôⱼ)) / |M|`. Because `ô ∈ (0,1)`, no pair can reach
/// the margin and every pair contributes.
pub fn margin_loss(m_hat: &[f64], target: &[f64]) -> Result<f64> {
    check_same_len("margin_loss", m_hat.len(), target.len())?;
    check_multi_hot("margin_loss", target)?;
    let n = m_hat.len();
    let o: Vec<f64> = m_hat.iter().map(|&x| sigmoid_scalar(x)).collect();
    let mut loss = 0.0;
    for i in 0..n {
        if target[i] != 1.0 {
            continue;
        }
        for j in 0..n {
            if target[j] == 1.0 {
                continue;
            }
            loss += (1.0 - (o[i] - o[j])).max(0.0) / n as f64;
        }
    }
    Ok(loss)
}

/// Accumulates `scale * d(margin_loss)/d(m_hat)`.
pub fn margin_loss_grad(m_hat: &[f64], target: &[f64], scale: f64, dm: &mut [f64]) -> Result<()> {
    if scale == 0.0 {
        return Ok(());
    }
    check_same_len("margin_loss_grad", m_hat.len(), target.len())?;
    check_multi_hot("margin_loss_grad", target)?;
    let n = m_hat.len();
    let o: Vec<f64> = m_hat.iter().map(|&x| sigmoid_scalar(x)).collect();
    let mut do_: Vec<f64> = vec![0.0; n];
    for i in 0..n {
        if target[i] != 1.0 {
            continue;
        }
        for j in 0..n {
            if target[j] == 1.0 {
                continue;
            }
            if 1.0 - (o[i] - o[j]) > 0.0 {
                do_[i] -= 1.0 / n as f64;
                do_[j] += 1.0 / n as f64;
            }
        }
    }
    for i in 0..n {
        dm[i] += scale * do_[i] * o[i] * (1.0 - o[i]);
    }
    Ok(())
}

/// Combination weights for the four losses plus the visit-balance
/// coefficient γ that mixes current-visit and previous-visit supervision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// (reconstruction, interaction, cross-entropy, margin) weights.
    pub lambda: [f64; 4],
    pub gamma: f64,
}

impl LossWeights {
    /// Equal quarter weights, the published default.
    pub fn uniform(gamma: f64) -> Self {
        LossWeights {
            lambda: [0.25; 4],
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative and finite, got {:?}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// The six raw loss terms of one visit pair, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub rec: f64,
    pub ddi: f64,
    pub bce_cur: f64,
    pub bce_prev: f64,
    pub multi_cur: f64,
    pub multi_prev: f64,
}

impl LossTerms {
    /// Collapses to the 4-vector seen by the weighted sum and the momentum
    /// controller: visit-balanced cross-entropy and margin terms.
    pub fn summary(&self, gamma: f64) -> [f64; 4] {
        [
            self.rec,
            self.ddi,
            gamma * self.bce_cur + (1.0 - gamma) * self.bce_prev,
            gamma * self.multi_cur + (1.0 - gamma) * self.multi_prev,
        ]
    }

    /// Weighted total: `Σᵢ λᵢ · summaryᵢ`.
    pub fn total(&self, lambda: &[f64; 4], gamma: f64) -> f64 {
        self.summary(gamma)
            .iter()
            .zip(lambda)
            .map(|(l, w)| w * l)
            .sum()
    }
}

/// Evaluates all loss terms for one pair of score vectors.
pub fn pair_loss_terms(
    m_prev: &[f64],
    m_cur: &[f64],
    u: &[f64],
    target_prev: &[f64],
    target_cur: &[f64],
    ddi: &DdiMatrix,
) -> Result<LossTerms> {
    Ok(LossTerms {
        rec: reconstruction_loss(m_prev, u, m_cur)?,
        ddi: ddi_loss(m_cur, ddi)?,
        bce_cur: bce_loss(m_cur, target_cur)?,
        bce_prev: bce_loss(m_prev, target_prev)?,
        multi_cur: margin_loss(m_cur, target_cur)?,
        multi_prev: margin_loss(m_prev, target_prev)?,
    })
}

/// Weighted total loss of one forward pair.
pub fn total_loss(
    pf: &PairForward,
    target_prev: &[f64],
    target_cur: &[f64],
    ddi: &DdiMatrix,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let terms = pair_loss_terms(&pf.m_prev, &pf.m_cur, &pf.u, target_prev, target_cur, ddi)?;
    Ok(terms.total(&weights.lambda, weights.gamma))
}

/// Evaluates the loss terms of one pair and accumulates the gradient of the
/// weighted total with respect to the three score vectors. Returns the terms
/// plus `(dm_prev, dm_cur, du)`.
///
/// Each component is skipped entirely when its effective weight is exactly
/// zero, so ablations contribute bitwise-zero gradient.
pub fn pair_loss_backward(
    pf: &PairForward,
    target_prev: &[f64],
    target_cur: &[f64],
    ddi: &DdiMatrix,
    lambda: &[f64; 4],
    gamma: f64,
) -> Result<(LossTerms, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let terms = pair_loss_terms(&pf.m_prev, &pf.m_cur, &pf.u, target_prev, target_cur, ddi)?;
    let n = pf.m_cur.len();
    let mut dm_prev = vec![0.0; n];
    let mut dm_cur = vec![0.0; n];
    let mut du = vec![0.0; n];

    reconstruction_loss_grad(
        &pf.m_prev,
        &pf.u,
        &pf.m_cur,
        lambda[0],
        &mut dm_prev,
        &mut du,
        &mut dm_cur,
    )?;
    ddi_loss_grad(&pf.m_cur, ddi, lambda[1], &mut dm_cur)?;
    bce_loss_grad(&pf.m_cur, target_cur, lambda[2] * gamma, &mut dm_cur)?;
    bce_loss_grad(&pf.m_prev, target_prev, lambda[2] * (1.0 - gamma), &mut dm_prev)?;
    margin_loss_grad(&pf.m_cur, target_cur, lambda[3] * gamma, &mut dm_cur)?;
    margin_loss_grad(&pf.m_prev, target_prev, lambda[3] * (1.0 - gamma), &mut dm_prev)?;

    Ok((terms, dm_prev, dm_cur, du))
}

/// State of the momentum-based weight controller: running mean of each loss,
/// a sample counter, the carried weight vector, and the interaction-rate
/// gate threshold η.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub mean_loss: [f64; 4],
    pub count: u64,
    pub lambda: [f64; 4],
    pub eta: f64,
}

impl MomentumState {
    /// Fresh state with equal quarter weights.
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("eta must be in [0, 1], got {eta}")));
        }
        Ok(MomentumState {
            mean_loss: [0.0; 4],
            count: 0,
            lambda: [0.25; 4],
            eta,
        })
    }

    /// Forgets the running means (and the sample counter) while keeping the
    /// weight vector. Called at each epoch boundary so "mean of the previous
    /// training points" is well defined within an epoch.
    pub fn reset_means(&mut self) {
        self.mean_loss = [0.0; 4];
        self.count = 0;
    }
}

fn softmax4(x: &[f64; 4]) -> [f64; 4] {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s, e[3] / s]
}

/// One momentum-controller step on the k-th training sample.
///
/// From the second sample onward the weights move toward
/// `softmax((L − L̄)/L̄)` with step γ; then the running means absorb the new
/// losses. The first sample only initializes the means. Returns the
/// *effective* weights for this sample: a copy of the stored weights with
/// λ₂ forced to zero when the sample's interaction rate is already below η.
/// The stored λ₂ keeps updating regardless, so the gate is an override, not
/// a freeze.
pub fn update_momentum_weights(
    state: &mut MomentumState,
    losses: &[f64; 4],
    gamma: f64,
    current_ddi_rate: f64,
) -> Result<[f64; 4]> {
    if losses.iter().any(|&l| !l.is_finite() || l < 0.0) {
        return Err(Error::Numeric(format!(
            "momentum update needs finite non-negative losses, got {losses:?}"
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must be in [0, 1], got {gamma}")));
    }
    let k = state.count + 1;
    if k >= 2 {
        let mut diff = [0.0; 4];
        for i in 0..4 {
            diff[i] = if state.mean_loss[i] < MEAN_FLOOR {
                0.0
            } else {
                (losses[i] - state.mean_loss[i]) / state.mean_loss[i]
            };
        }
        let sm = softmax4(&diff);
        for i in 0..4 {
            state.lambda[i] = gamma * sm[i] + (1.0 - gamma) * state.lambda[i];
        }
    }
    for i in 0..4 {
        state.mean_loss[i] = (losses[i] + (k - 1) as f64 * state.mean_loss[i]) / k as f64;
    }
    state.count = k;

    let mut effective = state.lambda;
    if current_ddi_rate < state.eta {
        effective[1] = 0.0;
    }
    Ok(effective)
}
