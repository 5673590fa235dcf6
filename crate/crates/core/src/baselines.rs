//! The two comparison models that share the representation stack: a 3-way
//! per-medication classifier and a pair of independent add/remove heads.
//!
//! Both consume the *current* visit's health representation and the
//! previous medication set, predict per-visit addition and removal sets,
//! and update the running set with the same set formula the main model
//! uses. Training supervises against change targets derived from
//! consecutive ground-truth sets; evaluation chains on predicted sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cohort::{Cohort, Visit};
use crate::error::{Error, Result};
use crate::inference::apply_change;
use crate::model::{backward_stack, forward_visit, ModelParams};
use crate::numerics::{
    ffn_backward, ffn_forward, sigmoid_scalar, Activation, FfnParams, ParamSet,
};
use crate::trainer::{
    rmsprop_step, EpochLog, Hyperparams, OptState, RMSPROP_ALPHA, RMSPROP_EPS,
};

/// Which comparison model a parameter set or checkpoint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Per-medication 3-way classifier (add / remove / remain).
    SimNn,
    /// Two independent binary heads, one for additions, one for removals.
    DualNn,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::SimNn => "simnn",
            BaselineKind::DualNn => "dualnn",
        }
    }
}

/// 3-way classifier: the shared stack's head outputs `3 * n_med` logits,
/// laid out medication-major as `[add_0, remove_0, remain_0, add_1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimNnParams {
    pub base: ModelParams,
    n_med: usize,
}

impl SimNnParams {
    pub fn new(base: ModelParams, n_med: usize) -> Result<Self> {
        if base.n_med() != 3 * n_med {
            return Err(Error::Shape(format!(
                "3-way head must output 3*{n_med} logits, got {}",
                base.n_med()
            )));
        }
        Ok(SimNnParams { base, n_med })
    }

    pub fn init(
        n_diag: usize,
        n_proc: usize,
        n_med: usize,
        embed_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let base = ModelParams::init(n_diag, n_proc, 3 * n_med, embed_dim, hidden_dim, seed)?;
        SimNnParams::new(base, n_med)
    }

    pub fn n_med(&self) -> usize {
        self.n_med
    }
}

impl ParamSet for SimNnParams {
    fn tensors(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        self.base.tensors()
    }
}

/// Dual binary heads: the shared stack's own head scores additions; a
/// second feed-forward network of the same shape scores removals.
#[derive(Debug, Clone, PartialEq)]
pub struct DualNnParams {
    pub base: ModelParams,
    pub remove_head: FfnParams,
}

impl DualNnParams {
    pub fn new(base: ModelParams, remove_head: FfnParams) -> Result<Self> {
        if remove_head.input_dim() != base.embed_dim()
            || remove_head.output_dim() != base.n_med()
        {
            return Err(Error::Shape(
                "removal head shape inconsistent with the shared stack".into(),
            ));
        }
        Ok(DualNnParams { base, remove_head })
    }

    pub fn init(
        n_diag: usize,
        n_proc: usize,
        n_med: usize,
        embed_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let base = ModelParams::init(n_diag, n_proc, n_med, embed_dim, hidden_dim, seed)?;
        // The removal head draws from its own stream so the two heads do
        // not start identical.
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
        let mut remove_head = FfnParams::zeros(embed_dim, hidden_dim, n_med, Activation::Relu);
        let fan_ins = [embed_dim, embed_dim, hidden_dim, hidden_dim];
        for ((values, _), fan_in) in remove_head.tensors().into_iter().zip(fan_ins) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in values.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        DualNnParams::new(base, remove_head)
    }

    pub fn n_med(&self) -> usize {
        self.base.n_med()
    }
}

impl ParamSet for DualNnParams {
    fn tensors(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        let mut out = self.base.tensors();
        out.extend(self.remove_head.tensors());
        out
    }
}

/// Per-medication choice of the 3-way classifier. On exact logit ties the
/// conservative order wins: remain over add over remove.
fn three_way_argmax(add: f64, remove: f64, remain: f64) -> ThreeWay {
    // "remain >= both" checked first, then "add >= remove".
    if remain >= add && remain >= remove {
        ThreeWay::Remain
    } else if add >= remove {
        ThreeWay::Add
    } else {
        ThreeWay::Remove
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ThreeWay {
    Add,
    Remove,
    Remain,
}

/// 3-way classifier prediction for one visit: per medication, argmax over
/// (add, remove, remain) logits; returns the addition and removal sets.
pub fn simnn_predict(params: &SimNnParams, visit_cur: &Visit) -> Result<(Vec<usize>, Vec<usize>)> {
    let fwd = forward_visit(&params.base, visit_cur)?;
    let mut n = Vec::new();
    let mut o = Vec::new();
    for i in 0..params.n_med {
        let add = fwd.y[3 * i];
        let remove = fwd.y[3 * i + 1];
        let remain = fwd.y[3 * i + 2];
        match three_way_argmax(add, remove, remain) {
            ThreeWay::Add => n.push(i),
            ThreeWay::Remove => o.push(i),
            ThreeWay::Remain => {}
        }
    }
    Ok((n, o))
}

/// Dual-head prediction for one visit: each head thresholds at `delta`;
/// an index claimed by both heads is treated as a removal.
pub fn dualnn_predict(
    params: &DualNnParams,
    visit_cur: &Visit,
    delta: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let fwd = forward_visit(&params.base, visit_cur)?;
    let remove_scores = ffn_forward(&params.remove_head, &fwd.h)?.y;
    let mut n = Vec::new();
    let mut o = Vec::new();
    for i in 0..params.n_med() {
        let wants_add = sigmoid_scalar(fwd.y[i]) >= delta;
        let wants_remove = sigmoid_scalar(remove_scores[i]) >= delta;
        if wants_remove {
            o.push(i);
        } else if wants_add {
            n.push(i);
        }
    }
    Ok((n, o))
}

/// Change targets of a consecutive ground-truth pair: additions are
/// `cur \ prev`, removals are `prev \ cur`. Reapplying them to `prev`
/// reconstructs `cur` exactly.
pub fn change_targets(prev: &[usize], cur: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let added = cur.iter().copied().filter(|m| !prev.contains(m)).collect();
    let removed = prev.iter().copied().filter(|m| !cur.contains(m)).collect();
    (added, removed)
}

/// Stable 3-way softmax cross-entropy and its logit gradient.
/// Returns (loss, grad over the 3 logits) for one medication.
fn softmax3_ce(logits: [f64; 3], class: usize) -> (f64, [f64; 3]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = [
        (logits[0] - m).exp(),
        (logits[1] - m).exp(),
        (logits[2] - m).exp(),
    ];
    let z: f64 = e.iter().sum();
    let log_z = z.ln() + m;
    let loss = log_z - logits[class];
    let mut grad = [e[0] / z, e[1] / z, e[2] / z];
    grad[class] -= 1.0;
    (loss, grad)
}

/// Trains a comparison model on consecutive-pair change targets, mirroring
/// the main training protocol: seeded init, per-epoch patient shuffle, sum
/// of pair losses per patient, one optimizer step per patient.
pub fn train_baseline(
    kind: BaselineKind,
    train_cohort: &Cohort,
    hp: &Hyperparams,
) -> Result<crate::trainer::Checkpoint> {
    hp.validate()?;
    if train_cohort.patients.is_empty() {
        return Err(Error::Config("training cohort has no patients".into()));
    }
    let vocab = train_cohort.vocabulary;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let init_seed = rng.gen::<u64>();

    enum P {
        Sim(SimNnParams),
        Dual(DualNnParams),
    }
    let mut params = match kind {
        BaselineKind::SimNn => P::Sim(SimNnParams::init(
            vocab.n_diag,
            vocab.n_proc,
            vocab.n_med,
            hp.embed_dim,
            hp.hidden_dim,
            init_seed,
        )?),
        BaselineKind::DualNn => P::Dual(DualNnParams::init(
            vocab.n_diag,
            vocab.n_proc,
            vocab.n_med,
            hp.embed_dim,
            hp.hidden_dim,
            init_seed,
        )?),
    };
    let flat_len = match &mut params {
        P::Sim(p) => p.flat_len(),
        P::Dual(p) => p.flat_len(),
    };
    let mut opt = OptState::new(flat_len);
    let mut order: Vec<usize> = (0..train_cohort.patients.len()).collect();
    let mut epoch_log = Vec::with_capacity(hp.epochs);

    for epoch in 1..=hp.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_pairs = 0usize;
        for &pi in &order {
            let patient = &train_cohort.patients[pi];
            let mut batch_loss = 0.0;
            match &mut params {
                P::Sim(p) => p.zero_grad(),
                P::Dual(p) => p.zero_grad(),
            }
            for w in patient.visits.windows(2) {
                let (n_target, o_target) = change_targets(&w[0].medications, &w[1].medications);
                batch_loss += match &mut params {
                    P::Sim(p) => simnn_pair_loss(p, &w[1], &n_target, &o_target)?,
                    P::Dual(p) => dualnn_pair_loss(p, &w[1], &n_target, &o_target)?,
                };
                epoch_pairs += 1;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, patient {}",
                    patient.patient_id
                )));
            }
            epoch_loss += batch_loss;
            let step = |ps: &mut dyn ParamSet, opt: &mut OptState| {
                rmsprop_step(ps, opt, hp.lr, hp.weight_decay, RMSPROP_ALPHA, RMSPROP_EPS)
            };
            match &mut params {
                P::Sim(p) => step(p, &mut opt),
                P::Dual(p) => step(p, &mut opt),
            }
            .map_err(|e| {
                Error::Numeric(format!(
                    "{e} at epoch {epoch}, patient {}",
                    patient.patient_id
                ))
            })?;
        }
        epoch_log.push(EpochLog {
            epoch,
            total: epoch_loss / epoch_pairs.max(1) as f64,
            rec: 0.0,
            ddi: 0.0,
            bce: epoch_loss / epoch_pairs.max(1) as f64,
            multi: 0.0,
            val_total: 0.0,
            lambda: [0.0; 4],
        });
    }

    let params = match params {
        P::Sim(p) => crate::trainer::CheckpointParams::Sim(p),
        P::Dual(p) => crate::trainer::CheckpointParams::Dual(p),
    };
    Ok(crate::trainer::Checkpoint {
        params,
        hyperparams: hp.clone(),
        vocabulary: vocab,
        epoch_log,
    })
}

/// 3-way cross-entropy over all medications for one visit, with gradients.
fn simnn_pair_loss(
    params: &mut SimNnParams,
    visit_cur: &Visit,
    n_target: &[usize],
    o_target: &[usize],
) -> Result<f64> {
    let fwd = forward_visit(&params.base, visit_cur)?;
    let n_med = params.n_med;
    let mut loss = 0.0;
    let mut dy = vec![0.0; 3 * n_med];
    for i in 0..n_med {
        let class = if n_target.contains(&i) {
            0 // add
        } else if o_target.contains(&i) {
            1 // remove
        } else {
            2 // remain
        };
        let logits = [fwd.y[3 * i], fwd.y[3 * i + 1], fwd.y[3 * i + 2]];
        let (l, g) = softmax3_ce(logits, class);
        loss += l;
        dy[3 * i] = g[0];
        dy[3 * i + 1] = g[1];
        dy[3 * i + 2] = g[2];
    }
    crate::model::backward_visit(&mut params.base, &fwd, &dy);
    Ok(loss)
}

/// Two binary cross-entropies (addition membership, removal membership)
/// for one visit, with gradients through both heads and the shared stack.
fn dualnn_pair_loss(
    params: &mut DualNnParams,
    visit_cur: &Visit,
    n_target: &[usize],
    o_target: &[usize],
) -> Result<f64> {
    let fwd = forward_visit(&params.base, visit_cur)?;
    let remove_cache = ffn_forward(&params.remove_head, &fwd.h)?;
    let n_med = params.n_med();
    let add_target = crate::cohort::multi_hot(n_target, n_med);
    let remove_target = crate::cohort::multi_hot(o_target, n_med);

    let loss = crate::losses::bce_loss(&fwd.y, &add_target)?
        + crate::losses::bce_loss(&remove_cache.y, &remove_target)?;
    let mut d_add = vec![0.0; n_med];
    let mut d_remove = vec![0.0; n_med];
    crate::losses::bce_loss_grad(&fwd.y, &add_target, 1.0, &mut d_add)?;
    crate::losses::bce_loss_grad(&remove_cache.y, &remove_target, 1.0, &mut d_remove)?;

    let mut dh = ffn_backward(&mut params.base.ffn, &fwd.ffn_cache, &d_add);
    let dh_remove = ffn_backward(&mut params.remove_head, &remove_cache, &d_remove);
    for (a, b) in dh.iter_mut().zip(&dh_remove) {
        *a += b;
    }
    backward_stack(&mut params.base, &fwd, &dh);
    Ok(loss)
}

/// Rolls a comparison model across one patient: predicted sets chain on the
/// *predicted* previous set, exactly like the main model's evaluation.
pub fn baseline_rollout(
    checkpoint: &crate::trainer::Checkpoint,
    patient: &crate::cohort::PatientRecord,
) -> Result<crate::inference::Rollout> {
    if patient.visits.len() < 2 {
        return Err(Error::Evaluation(format!(
            "patient {} has fewer than two visits",
            patient.patient_id
        )));
    }
    let mut set: Vec<usize> = patient.visits[0].medications.clone();
    let mut steps = Vec::with_capacity(patient.visits.len() - 1);
    for visit in &patient.visits[1..] {
        let (n, o) = match &checkpoint.params {
            crate::trainer::CheckpointParams::Sim(p) => simnn_predict(p, visit)?,
            crate::trainer::CheckpointParams::Dual(p) => dualnn_predict(p, visit, 0.5)?,
            crate::trainer::CheckpointParams::Micron(_) => {
                return Err(Error::Evaluation(
                    "baseline rollout called with a main-model checkpoint".into(),
                ))
            }
        };
        set = apply_change(&set, &n, &o);
        steps.push(crate::inference::RolloutStep {
            additions: n,
            removals: o,
            predicted_set: set.clone(),
        });
    }
    Ok(crate::inference::Rollout {
        patient_id: patient.patient_id,
        steps,
    })
}
