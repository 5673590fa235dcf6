//! The medication-change network.
//!
//! A visit's multi-hot diagnosis and procedure vectors are embedded by two
//! lookup matrices, combined into a health representation by a bias-free
//! linear map, and turned into per-medication scores by a two-layer
//! prescription network. For a consecutive visit pair the same prescription
//! network is also applied to the *residual* health representation
//! `r = h_cur - h_prev`, yielding a medication-change vector `u` that the
//! reconstruction loss ties to the pair of score vectors.
//!
//! The health map is deliberately bias-free and linear: that is what makes
//! `u ≈ m_cur - m_prev` structurally attainable and lets inference recompute
//! `r` from the sparse code-level differences between two visits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::Visit;
use crate::error::{Error, Result};
use crate::numerics::{
    ffn_backward, ffn_forward, linear_apply, linear_backward, Activation, FfnCache, FfnParams,
    Matrix, ParamMatrix, ParamSet,
};

/// All learnable parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Diagnosis embeddings, `s x n_diag`.
    pub e_d: ParamMatrix,
    /// Procedure embeddings, `s x n_proc`.
    pub e_p: ParamMatrix,
    /// Health map over `[d_e ‖ p_e]`, `s x 2s`, no bias.
    pub w_h: ParamMatrix,
    /// Prescription network, `s -> hidden -> n_med`.
    pub ffn: FfnParams,
}

impl ModelParams {
    /// All-zero parameters with the given shape.
    pub fn zeros(
        n_diag: usize,
        n_proc: usize,
        n_med: usize,
        embed_dim: usize,
        hidden_dim: usize,
        activation: Activation,
    ) -> Self {
        ModelParams {
            e_d: ParamMatrix::new(Matrix::zeros(embed_dim, n_diag)),
            e_p: ParamMatrix::new(Matrix::zeros(embed_dim, n_proc)),
            w_h: ParamMatrix::new(Matrix::zeros(embed_dim, 2 * embed_dim)),
            ffn: FfnParams::zeros(embed_dim, hidden_dim, n_med, activation),
        }
    }

    /// Seeded initialization: every matrix (and bias) is uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]` of its layer. Deterministic per
    /// seed; tensors are filled in the same order they are exposed by
    /// [`ParamSet::tensors`].
    pub fn init(
        n_diag: usize,
        n_proc: usize,
        n_med: usize,
        embed_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if embed_dim == 0 || hidden_dim == 0 || n_diag == 0 || n_proc == 0 || n_med == 0 {
            return Err(Error::Config(
                "model dimensions must all be >= 1".into(),
            ));
        }
        let mut params = ModelParams::zeros(
            n_diag,
            n_proc,
            n_med,
            embed_dim,
            hidden_dim,
            Activation::Relu,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_ins = [
            n_diag,     // e_d
            n_proc,     // e_p
            2 * embed_dim, // w_h
            embed_dim,  // ffn.w1
            embed_dim,  // ffn.b1
            hidden_dim, // ffn.w2
            hidden_dim, // ffn.b2
        ];
        for ((values, _), fan_in) in params.tensors().into_iter().zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in values.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    pub fn embed_dim(&self) -> usize {
        self.e_d.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.ffn.hidden_dim()
    }

    pub fn n_diag(&self) -> usize {
        self.e_d.value.cols()
    }

    pub fn n_proc(&self) -> usize {
        self.e_p.value.cols()
    }

    pub fn n_med(&self) -> usize {
        self.ffn.output_dim()
    }
}

impl ParamSet for ModelParams {
    fn tensors(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        let mut out = vec![
            (self.e_d.value.data_mut(), self.e_d.grad.data_mut()),
            (self.e_p.value.data_mut(), self.e_p.grad.data_mut()),
            (self.w_h.value.data_mut(), self.w_h.grad.data_mut()),
        ];
        out.extend(self.ffn.tensors());
        out
    }
}

/// Multi-hot vector from a strictly increasing index list, with an explicit
/// bounds check so inconsistent visits surface as shape errors.
fn checked_multi_hot(indices: &[usize], dim: usize, what: &str) -> Result<Vec<f64>> {
    let mut v = vec![0.0; dim];
    for &i in indices {
        if i >= dim {
            return Err(Error::Shape(format!(
                "{what} index {i} out of range for vocabulary size {dim}"
            )));
        }
        v[i] = 1.0;
    }
    Ok(v)
}

/// Embeds multi-hot diagnosis and procedure vectors: `d_e = E_d d`,
/// `p_e = E_p p` (a sum of embedding columns at the active indices).
pub fn embed_visit(params: &ModelParams, d: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d_e = linear_apply(&params.e_d.value, d)?;
    let p_e = linear_apply(&params.e_p.value, p)?;
    Ok((d_e, p_e))
}

/// Health representation `h = W_h [d_e ‖ p_e]` (diagnosis embedding first).
pub fn health_repr(params: &ModelParams, d_e: &[f64], p_e: &[f64]) -> Result<Vec<f64>> {
    let s = params.embed_dim();
    if d_e.len() != s || p_e.len() != s {
        return Err(Error::Shape(format!(
            "health_repr: embeddings have lengths {} and {}, expected {s}",
            d_e.len(),
            p_e.len()
        )));
    }
    let mut concat = Vec::with_capacity(2 * s);
    concat.extend_from_slice(d_e);
    concat.extend_from_slice(p_e);
    linear_apply(&params.w_h.value, &concat)
}

/// Raw (pre-sigmoid) per-medication scores for a health representation.
pub fn prescribe(params: &ModelParams, h: &[f64]) -> Result<Vec<f64>> {
    Ok(ffn_forward(&params.ffn, h)?.y)
}

/// Everything computed for one consecutive visit pair, with the cached
/// intermediates the backward pass needs.
#[derive(Debug, Clone)]
pub struct PairForward {
    /// Health representation of the earlier visit.
    pub h_prev: Vec<f64>,
    /// Health representation of the later visit.
    pub h_cur: Vec<f64>,
    /// Residual health representation, exactly `h_cur - h_prev`.
    pub r: Vec<f64>,
    /// Raw medication scores of the earlier visit.
    pub m_prev: Vec<f64>,
    /// Raw medication scores of the later visit.
    pub m_cur: Vec<f64>,
    /// Medication-change vector: the prescription network applied to `r`.
    pub u: Vec<f64>,
    d_prev: Vec<f64>,
    p_prev: Vec<f64>,
    d_cur: Vec<f64>,
    p_cur: Vec<f64>,
    concat_prev: Vec<f64>,
    concat_cur: Vec<f64>,
    ffn_prev: FfnCache,
    ffn_cur: FfnCache,
    ffn_res: FfnCache,
}

fn embed_concat(params: &ModelParams, d: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let (d_e, p_e) = embed_visit(params, d, p)?;
    let mut concat = d_e;
    concat.extend_from_slice(&p_e);
    Ok(concat)
}

/// Runs the full forward pass for one consecutive visit pair.
pub fn forward_pair(
    params: &ModelParams,
    visit_prev: &Visit,
    visit_cur: &Visit,
) -> Result<PairForward> {
    let d_prev = checked_multi_hot(&visit_prev.diagnoses, params.n_diag(), "diagnosis")?;
    let p_prev = checked_multi_hot(&visit_prev.procedures, params.n_proc(), "procedure")?;
    let d_cur = checked_multi_hot(&visit_cur.diagnoses, params.n_diag(), "diagnosis")?;
    let p_cur = checked_multi_hot(&visit_cur.procedures, params.n_proc(), "procedure")?;

    let concat_prev = embed_concat(params, &d_prev, &p_prev)?;
    let concat_cur = embed_concat(params, &d_cur, &p_cur)?;
    let h_prev = linear_apply(&params.w_h.value, &concat_prev)?;
    let h_cur = linear_apply(&params.w_h.value, &concat_cur)?;
    let r: Vec<f64> = h_cur.iter().zip(&h_prev).map(|(c, p)| c - p).collect();

    let ffn_prev = ffn_forward(&params.ffn, &h_prev)?;
    let ffn_cur = ffn_forward(&params.ffn, &h_cur)?;
    let ffn_res = ffn_forward(&params.ffn, &r)?;

    Ok(PairForward {
        h_prev,
        h_cur,
        r,
        m_prev: ffn_prev.y.clone(),
        m_cur: ffn_cur.y.clone(),
        u: ffn_res.y.clone(),
        d_prev,
        p_prev,
        d_cur,
        p_cur,
        concat_prev,
        concat_cur,
        ffn_prev,
        ffn_cur,
        ffn_res,
    })
}

/// Forward pass for a single visit: health representation plus the
/// prescription-network output, with cached intermediates. Used for the
/// first-visit initialization at inference time and by the comparison
/// models, whose heads hang off the same representation stack.
#[derive(Debug, Clone)]
pub struct VisitForward {
    /// Health representation of the visit.
    pub h: Vec<f64>,
    /// Output of the network's own head applied to `h`.
    pub y: Vec<f64>,
    d: Vec<f64>,
    p: Vec<f64>,
    concat: Vec<f64>,
    /// Cache of the head application, public so extra heads applied to the
    /// same `h` can be backpropagated alongside (see `backward_stack`).
    pub ffn_cache: FfnCache,
}

/// Runs embeddings, health map, and the head for one visit.
pub fn forward_visit(params: &ModelParams, visit: &Visit) -> Result<VisitForward> {
    let d = checked_multi_hot(&visit.diagnoses, params.n_diag(), "diagnosis")?;
    let p = checked_multi_hot(&visit.procedures, params.n_proc(), "procedure")?;
    let concat = embed_concat(params, &d, &p)?;
    let h = linear_apply(&params.w_h.value, &concat)?;
    let ffn_cache = ffn_forward(&params.ffn, &h)?;
    Ok(VisitForward {
        h,
        y: ffn_cache.y.clone(),
        d,
        p,
        concat,
        ffn_cache,
    })
}

/// Backpropagates a gradient on the health representation through the
/// health map and embeddings only (not the head). Lets callers with extra
/// heads sum their `dL/dh` contributions before walking the shared stack.
pub fn backward_stack(params: &mut ModelParams, fwd: &VisitForward, dh: &[f64]) {
    let dconcat = linear_backward(&mut params.w_h, &fwd.concat, dh);
    let s = params.embed_dim();
    let _ = linear_backward(&mut params.e_d, &fwd.d, &dconcat[..s]);
    let _ = linear_backward(&mut params.e_p, &fwd.p, &dconcat[s..]);
}

/// Full single-visit backward pass: through the head, then the stack.
pub fn backward_visit(params: &mut ModelParams, fwd: &VisitForward, dy: &[f64]) {
    let dh = ffn_backward(&mut params.ffn, &fwd.ffn_cache, dy);
    backward_stack(params, fwd, &dh);
}

/// Reverse-mode pass for one pair: accumulates parameter gradients given the
/// loss gradients with respect to the three score vectors.
///
/// The residual contributes through both visits: `r = h_cur - h_prev`, so
/// its upstream gradient adds to `h_cur` and subtracts from `h_prev`.
pub fn backward_pair(
    params: &mut ModelParams,
    fwd: &PairForward,
    dm_prev: &[f64],
    dm_cur: &[f64],
    du: &[f64],
) {
    let mut dh_prev = ffn_backward(&mut params.ffn, &fwd.ffn_prev, dm_prev);
    let mut dh_cur = ffn_backward(&mut params.ffn, &fwd.ffn_cur, dm_cur);
    let dr = ffn_backward(&mut params.ffn, &fwd.ffn_res, du);
    for i in 0..dr.len() {
        dh_cur[i] += dr[i];
        dh_prev[i] -= dr[i];
    }

    let dconcat_prev = linear_backward(&mut params.w_h, &fwd.concat_prev, &dh_prev);
    let dconcat_cur = linear_backward(&mut params.w_h, &fwd.concat_cur, &dh_cur);

    let s = params.embed_dim();
    let _ = linear_backward(&mut params.e_d, &fwd.d_prev, &dconcat_prev[..s]);
    let _ = linear_backward(&mut params.e_p, &fwd.p_prev, &dconcat_prev[s..]);
    let _ = linear_backward(&mut params.e_d, &fwd.d_cur, &dconcat_cur[..s]);
    let _ = linear_backward(&mut params.e_p, &fwd.p_cur, &dconcat_cur[s..]);
}
