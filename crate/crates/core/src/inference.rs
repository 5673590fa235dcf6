//! Recurrent medication updating: the cumulative medication vector plays
//! the role of an RNN memory cell, and each later visit contributes a
//! residual update followed by threshold-based addition/removal sets.
//!
//! Two routes compute the residual health representation: the dense route
//! re-encodes both visits and subtracts; the sparse route touches only the
//! codes that changed between the visits. Because the encoder is linear
//! and bias-free, the two agree to floating-point noise, and both are kept
//! so each can check the other.

use serde::Serialize;

use crate::calibration::Thresholds;
use crate::cohort::{PatientRecord, Visit};
use crate::error::{Error, Result};
use crate::model::{forward_visit, ModelParams};
use crate::numerics::{ffn_apply, linear_apply, sigmoid_scalar};
use crate::trainer::Checkpoint;

/// The evolving prediction state for one patient: raw (un-squashed)
/// cumulative medication scores plus the current predicted set.
#[derive(Debug, Clone, PartialEq)]
pub struct MedicationState {
    /// Cumulative raw scores, one per medication.
    pub vector: Vec<f64>,
    /// Currently predicted medication set, strictly increasing indices.
    pub set: Vec<usize>,
}

/// One predicted visit transition: what was added, what was removed, and
/// the resulting set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutStep {
    pub additions: Vec<usize>,
    pub removals: Vec<usize>,
    pub predicted_set: Vec<usize>,
}

/// Predictions for visits 2..V of one patient, in visit order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rollout {
    pub patient_id: u64,
    pub steps: Vec<RolloutStep>,
}

/// Which route computes the residual health representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Re-encode both visits and subtract the representations.
    Dense,
    /// Encode only the signed code-level differences.
    Smart,
}

impl RolloutMode {
    pub fn name(self) -> &'static str {
        match self {
            RolloutMode::Dense => "dense",
            RolloutMode::Smart => "smart",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "dense" => Some(RolloutMode::Dense),
            "smart" => Some(RolloutMode::Smart),
            _ => None,
        }
    }
}

/// Initial state from the first visit: the predicted set starts at the
/// visit's recorded medications, and the score vector at the prescription
/// network's output for that visit.
pub fn init_state(params: &ModelParams, first_visit: &Visit) -> Result<MedicationState> {
    let fwd = forward_visit(params, first_visit)?;
    for &m in &first_visit.medications {
        if m >= params.n_med() {
            return Err(Error::Shape(format!(
                "medication index {m} out of range for vocabulary size {}",
                params.n_med()
            )));
        }
    }
    Ok(MedicationState {
        vector: fwd.y,
        set: first_visit.medications.clone(),
    })
}

/// Signed sparse difference between two strictly increasing index lists:
/// which indices were added and which removed, each strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseDiff {
    pub added: Vec<usize>,
    pub removed: Vec<usize>,
}

/// Computes the signed sparse difference `cur − prev` of two sorted index
/// lists by a single merge pass.
pub fn sparse_diff(prev: &[usize], cur: &[usize]) -> SparseDiff {
    let mut diff = SparseDiff::default();
    let (mut i, mut j) = (0, 0);
    while i < prev.len() && j < cur.len() {
        match prev[i].cmp(&cur[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                diff.removed.push(prev[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                diff.added.push(cur[j]);
                j += 1;
            }
        }
    }
    diff.removed.extend_from_slice(&prev[i..]);
    diff.added.extend_from_slice(&cur[j..]);
    diff
}

/// Residual health representation from signed sparse code differences:
/// the embedding deltas are sums of ±columns at the changed indices only,
/// then the (linear, bias-free) health map is applied. Equals the dense
/// subtraction `health_repr(cur) − health_repr(prev)` up to rounding.
pub fn smart_residual(
    params: &ModelParams,
    delta_d: &SparseDiff,
    delta_p: &SparseDiff,
) -> Result<Vec<f64>> {
    let s = params.embed_dim();
    let mut concat = vec![0.0; 2 * s];
    accumulate_columns(&params.e_d.value, delta_d, &mut concat[..s], "diagnosis")?;
    accumulate_columns(&params.e_p.value, delta_p, &mut concat[s..], "procedure")?;
    linear_apply(&params.w_h.value, &concat)
}

fn accumulate_columns(
    embedding: &crate::numerics::Matrix,
    diff: &SparseDiff,
    out: &mut [f64],
    what: &str,
) -> Result<()> {
    let check = |idx: usize| -> Result<()> {
        if idx >= embedding.cols() {
            return Err(Error::Shape(format!(
                "{what} index {idx} out of range for vocabulary size {}",
                embedding.cols()
            )));
        }
        Ok(())
    };
    for &k in &diff.added {
        check(k)?;
        for r in 0..embedding.rows() {
            out[r] += embedding.get(r, k);
        }
    }
    for &k in &diff.removed {
        check(k)?;
        for r in 0..embedding.rows() {
            out[r] -= embedding.get(r, k);
        }
    }
    Ok(())
}

/// Adds a residual update to the cumulative medication vector.
pub fn update_medication_vector(state: &mut MedicationState, u: &[f64]) -> Result<()> {
    if u.len() != state.vector.len() {
        return Err(Error::Shape(format!(
            "update has length {}, state has {}",
            u.len(),
            state.vector.len()
        )));
    }
    for (v, du) in state.vector.iter_mut().zip(u) {
        *v += du;
    }
    Ok(())
}

/// Threshold step: `N = {i : σ(m̃_i) ≥ δ1}`, `O = {i : σ(m̃_i) ≤ δ2}`,
/// with an index never in both — when δ1 = δ2 a score exactly at the
/// threshold counts as an addition, not a removal.
pub fn change_sets(vector: &[f64], th: &Thresholds) -> Result<(Vec<usize>, Vec<usize>)> {
    th.validate()?;
    let mut additions = Vec::new();
    let mut removals = Vec::new();
    for (i, &m) in vector.iter().enumerate() {
        let p = sigmoid_scalar(m);
        if p >= th.delta1 {
            additions.push(i);
        } else if p <= th.delta2 {
            removals.push(i);
        }
    }
    Ok((additions, removals))
}

/// Set update `(prev ∪ additions) \ removals`; the result is strictly
/// increasing. Overlaps between the inputs are harmless — removal wins
/// over mere retention, addition wins over removal only by never being
/// offered the same index (see [`change_sets`]).
pub fn apply_change(prev: &[usize], additions: &[usize], removals: &[usize]) -> Vec<usize> {
    let mut keep: Vec<usize> = prev
        .iter()
        .chain(additions.iter())
        .copied()
        .filter(|i| !removals.contains(i))
        .collect();
    keep.sort_unstable();
    keep.dedup();
    keep
}

/// Rolls the three-step update across one patient's visit sequence,
/// chaining on the *predicted* previous set throughout. Steps cover
/// visits 2..V in order.
pub fn rollout(
    checkpoint: &Checkpoint,
    thresholds: &Thresholds,
    patient: &PatientRecord,
    mode: RolloutMode,
) -> Result<Rollout> {
    let params = checkpoint.params.as_micron()?;
    if patient.visits.len() < 2 {
        return Err(Error::Evaluation(format!(
            "patient {} has fewer than two visits",
            patient.patient_id
        )));
    }
    let mut state = init_state(params, &patient.visits[0])?;
    let mut steps = Vec::with_capacity(patient.visits.len() - 1);

    for w in patient.visits.windows(2) {
        let (prev_visit, cur_visit) = (&w[0], &w[1]);
        let r = match mode {
            RolloutMode::Dense => {
                let h_prev = forward_visit(params, prev_visit)?.h;
                let h_cur = forward_visit(params, cur_visit)?.h;
                h_cur.iter().zip(&h_prev).map(|(c, p)| c - p).collect()
            }
            RolloutMode::Smart => {
                let dd = sparse_diff(&prev_visit.diagnoses, &cur_visit.diagnoses);
                let dp = sparse_diff(&prev_visit.procedures, &cur_visit.procedures);
                smart_residual(params, &dd, &dp)?
            }
        };
        let u = ffn_apply(&params.ffn, &r)?;
        update_medication_vector(&mut state, &u)?;
        let (additions, removals) = change_sets(&state.vector, thresholds)?;
        state.set = apply_change(&state.set, &additions, &removals);
        steps.push(RolloutStep {
            additions,
            removals,
            predicted_set: state.set.clone(),
        });
    }

    Ok(Rollout {
        patient_id: patient.patient_id,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, DdiMatrix, GeneratorConfig, Vocabulary};
    use crate::model::health_repr;
    use crate::numerics::{Activation, Matrix};
    use crate::trainer::{CheckpointParams, Hyperparams};
    use proptest::prelude::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn visit(d: &[usize], p: &[usize], m: &[usize]) -> Visit {
        Visit {
            diagnoses: d.to_vec(),
            procedures: p.to_vec(),
            medications: m.to_vec(),
        }
    }

    fn checkpoint_around(params: ModelParams) -> Checkpoint {
        let vocabulary = Vocabulary {
            n_diag: params.n_diag(),
            n_proc: params.n_proc(),
            n_med: params.n_med(),
        };
        let hyperparams = Hyperparams {
            embed_dim: params.embed_dim(),
            hidden_dim: params.hidden_dim(),
            ..Hyperparams::default()
        };
        Checkpoint {
            params: CheckpointParams::Micron(params),
            hyperparams,
            vocabulary,
            epoch_log: Vec::new(),
        }
    }

    // --- set update -------------------------------------------------------

    #[test]
    fn apply_change_follows_the_set_formula() {
        assert_eq!(apply_change(&[0, 1], &[2], &[1]), vec![0, 2]);
        // Overlapping inputs are harmless no-ops.
        assert_eq!(apply_change(&[0, 1], &[0, 1], &[]), vec![0, 1]);
        assert_eq!(apply_change(&[0, 1], &[], &[5, 6]), vec![0, 1]);
        // Removing everything empties the set.
        assert_eq!(apply_change(&[0, 1], &[2], &[0, 1, 2]), Vec::<usize>::new());
        assert_eq!(apply_change(&[], &[], &[]), Vec::<usize>::new());
    }

    #[test]
    fn sparse_diff_splits_added_and_removed() {
        let d = sparse_diff(&[0, 2, 5], &[2, 3, 6]);
        assert_eq!(d.added, vec![3, 6]);
        assert_eq!(d.removed, vec![0, 5]);
        let d = sparse_diff(&[], &[1, 2]);
        assert_eq!(d.added, vec![1, 2]);
        assert!(d.removed.is_empty());
        let d = sparse_diff(&[1, 2], &[1, 2]);
        assert!(d.added.is_empty() && d.removed.is_empty());
    }

    // --- vector update ----------------------------------------------------

    #[test]
    fn update_medication_vector_adds_elementwise() {
        let mut state = MedicationState {
            vector: vec![1.0, -1.0],
            set: vec![],
        };
        update_medication_vector(&mut state, &[0.0, 0.0]).unwrap();
        assert_eq!(state.vector, vec![1.0, -1.0], "zero update is a no-op");
        update_medication_vector(&mut state, &[-1.0, 1.0]).unwrap();
        assert_eq!(state.vector, vec![0.0, 0.0], "updates cancel exactly");
        let err = update_medication_vector(&mut state, &[1.0]).expect_err("length mismatch");
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn two_updates_compose_like_their_sum() {
        let u1 = [0.25, -0.5, 1.0];
        let u2 = [0.125, 0.75, -2.0];
        let mut a = MedicationState {
            vector: vec![1.0, 2.0, 3.0],
            set: vec![],
        };
        update_medication_vector(&mut a, &u1).unwrap();
        update_medication_vector(&mut a, &u2).unwrap();
        let mut b = MedicationState {
            vector: vec![1.0, 2.0, 3.0],
            set: vec![],
        };
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| x + y).collect();
        update_medication_vector(&mut b, &sum).unwrap();
        for (x, y) in a.vector.iter().zip(&b.vector) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    // --- thresholding -----------------------------------------------------

    #[test]
    fn extreme_thresholds_produce_no_changes() {
        let th = Thresholds::new(1.0, 0.0).unwrap();
        let (n, o) = change_sets(&[100.0, -100.0, 0.0], &th).unwrap();
        assert!(n.is_empty(), "σ never reaches 1 exactly");
        assert!(o.is_empty(), "σ never reaches 0 exactly");
    }

    #[test]
    fn change_sets_compare_elementwise_against_both_thresholds() {
        let v = [logit(0.99), logit(0.5), logit(0.01)];
        let th = Thresholds::new(0.9, 0.1).unwrap();
        let (n, o) = change_sets(&v, &th).unwrap();
        assert_eq!(n, vec![0]);
        assert_eq!(o, vec![2]);
    }

    #[test]
    fn equal_thresholds_partition_every_index() {
        let v = [2.0, 0.0, -3.0, 0.7];
        let th = Thresholds::new(0.5, 0.5).unwrap();
        let (n, o) = change_sets(&v, &th).unwrap();
        let mut all: Vec<usize> = n.iter().chain(o.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3], "every index lands in exactly one set");
        // σ(0) = 0.5 sits exactly on both thresholds; addition wins.
        assert!(n.contains(&1), "a tie goes to the addition set");
        assert_eq!(n, vec![0, 1, 3]);
        assert_eq!(o, vec![2]);
    }

    #[test]
    fn change_sets_reject_invalid_thresholds() {
        let th = Thresholds {
            delta1: 0.2,
            delta2: 0.9,
        };
        assert!(matches!(
            change_sets(&[0.0], &th),
            Err(Error::Calibration(_))
        ));
    }

    // --- sparse residual route ---------------------------------------------

    #[test]
    fn zero_deltas_give_a_zero_residual() {
        let params = ModelParams::init(6, 4, 3, 4, 5, 11).unwrap();
        let r = smart_residual(&params, &SparseDiff::default(), &SparseDiff::default()).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_added_diagnosis_reads_one_embedding_column() {
        let params = ModelParams::init(6, 4, 3, 4, 5, 12).unwrap();
        let diff = SparseDiff {
            added: vec![2],
            removed: vec![],
        };
        let r = smart_residual(&params, &diff, &SparseDiff::default()).unwrap();
        // Expected: W_h applied to [col_2(E_d) ‖ 0].
        let s = params.embed_dim();
        let mut concat = vec![0.0; 2 * s];
        concat[..s].copy_from_slice(&params.e_d.value.column(2));
        let expected = linear_apply(&params.w_h.value, &concat).unwrap();
        assert_eq!(r, expected);
    }

    #[test]
    fn sparse_residual_matches_dense_subtraction() {
        let params = ModelParams::init(10, 6, 5, 6, 7, 13).unwrap();
        let vocab = Vocabulary {
            n_diag: 10,
            n_proc: 6,
            n_med: 5,
        };
        let pairs = [
            (visit(&[0, 3, 7], &[1, 4], &[0]), visit(&[3, 5], &[1, 2], &[0])),
            (visit(&[], &[], &[]), visit(&[9], &[5], &[4])),
            (visit(&[1, 2], &[0], &[1]), visit(&[1, 2], &[0], &[1])),
        ];
        for (prev, cur) in &pairs {
            let dd = sparse_diff(&prev.diagnoses, &cur.diagnoses);
            let dp = sparse_diff(&prev.procedures, &cur.procedures);
            let r_sparse = smart_residual(&params, &dd, &dp).unwrap();

            let embed = |v: &Visit| {
                let d = v.diagnosis_vector(&vocab);
                let p = v.procedure_vector(&vocab);
                let (d_e, p_e) = crate::model::embed_visit(&params, &d, &p).unwrap();
                health_repr(&params, &d_e, &p_e).unwrap()
            };
            let h_prev = embed(prev);
            let h_cur = embed(cur);
            for i in 0..r_sparse.len() {
                let dense = h_cur[i] - h_prev[i];
                assert!(
                    (r_sparse[i] - dense).abs() < 1e-10,
                    "sparse and dense residuals diverged: {} vs {dense}",
                    r_sparse[i]
                );
            }
        }
    }

    #[test]
    fn smart_residual_rejects_out_of_range_indices() {
        let params = ModelParams::init(6, 4, 3, 4, 5, 14).unwrap();
        let diff = SparseDiff {
            added: vec![6],
            removed: vec![],
        };
        assert!(matches!(
            smart_residual(&params, &diff, &SparseDiff::default()),
            Err(Error::Shape(_))
        ));
    }

    // --- initialization -----------------------------------------------------

    #[test]
    fn init_state_copies_the_first_visit_set_and_scores_it() {
        let params = ModelParams::init(6, 4, 3, 4, 5, 15).unwrap();
        let first = visit(&[0, 2], &[1], &[0, 2]);
        let state = init_state(&params, &first).unwrap();
        assert_eq!(state.set, vec![0, 2]);
        let fwd = forward_visit(&params, &first).unwrap();
        assert_eq!(state.vector, fwd.y);
    }

    #[test]
    fn zero_parameter_model_initializes_to_the_bias_response() {
        let params = ModelParams::zeros(6, 4, 3, 4, 5, Activation::Relu);
        let state = init_state(&params, &visit(&[1], &[0], &[1])).unwrap();
        assert_eq!(state.vector, vec![0.0; 3], "all-zero network outputs its bias");
    }

    #[test]
    fn init_state_rejects_out_of_range_medications() {
        let params = ModelParams::init(6, 4, 3, 4, 5, 16).unwrap();
        let bad = visit(&[0], &[0], &[7]);
        assert!(matches!(init_state(&params, &bad), Err(Error::Shape(_))));
    }

    // --- full rollout -------------------------------------------------------

    fn small_cohort() -> crate::cohort::Cohort {
        let mut config = GeneratorConfig::default();
        config.n_patients = 8;
        config.n_diag = 14;
        config.n_proc = 6;
        config.n_med = 9;
        config.visits_min = 3;
        config.visits_max = 6;
        generate_cohort(&config, 21).unwrap()
    }

    #[test]
    fn dense_and_smart_rollouts_agree_exactly_on_sets() {
        let cohort = small_cohort();
        let params = ModelParams::init(14, 6, 9, 6, 8, 17).unwrap();
        let ckpt = checkpoint_around(params);
        let th = Thresholds::new(0.6, 0.4).unwrap();
        for patient in &cohort.patients {
            let dense = rollout(&ckpt, &th, patient, RolloutMode::Dense).unwrap();
            let smart = rollout(&ckpt, &th, patient, RolloutMode::Smart).unwrap();
            assert_eq!(dense, smart, "patient {}", patient.patient_id);
        }
    }

    #[test]
    fn rollout_steps_obey_the_set_update_invariant() {
        let cohort = small_cohort();
        let params = ModelParams::init(14, 6, 9, 6, 8, 18).unwrap();
        let ckpt = checkpoint_around(params);
        let th = Thresholds::new(0.55, 0.45).unwrap();
        for patient in &cohort.patients {
            let r = rollout(&ckpt, &th, patient, RolloutMode::Dense).unwrap();
            assert_eq!(r.patient_id, patient.patient_id);
            assert_eq!(r.steps.len(), patient.visits.len() - 1);
            let mut prev = patient.visits[0].medications.clone();
            for step in &r.steps {
                assert!(
                    step.additions.iter().all(|i| !step.removals.contains(i)),
                    "additions and removals must be disjoint"
                );
                let expected = apply_change(&prev, &step.additions, &step.removals);
                assert_eq!(step.predicted_set, expected);
                prev = step.predicted_set.clone();
            }
        }
    }

    #[test]
    fn identical_visits_with_wide_thresholds_keep_the_initial_set() {
        // Zero parameters: every score is 0, the zero residual maps to a
        // zero update, and σ(0)=0.5 crosses neither 0.9 nor 0.1.
        let params = ModelParams::zeros(6, 4, 3, 4, 5, Activation::Relu);
        let ckpt = checkpoint_around(params);
        let th = Thresholds::new(0.9, 0.1).unwrap();
        let v = visit(&[1, 3], &[0], &[0, 2]);
        let patient = PatientRecord {
            patient_id: 5,
            visits: vec![v.clone(), v.clone(), v.clone(), v],
        };
        let r = rollout(&ckpt, &th, &patient, RolloutMode::Dense).unwrap();
        for step in &r.steps {
            assert!(step.additions.is_empty() && step.removals.is_empty());
            assert_eq!(step.predicted_set, vec![0, 2]);
        }
    }

    #[test]
    fn rollout_rejects_short_patients_and_foreign_checkpoints() {
        let params = ModelParams::init(6, 4, 3, 4, 5, 19).unwrap();
        let ckpt = checkpoint_around(params);
        let th = Thresholds::new(0.6, 0.4).unwrap();
        let one_visit = PatientRecord {
            patient_id: 1,
            visits: vec![visit(&[0], &[0], &[0])],
        };
        assert!(matches!(
            rollout(&ckpt, &th, &one_visit, RolloutMode::Dense),
            Err(Error::Evaluation(_))
        ));

        let base = ModelParams::init(6, 4, 3, 4, 5, 20).unwrap();
        let sim = crate::baselines::SimNnParams::init(6, 4, 3, 4, 5, 20).unwrap();
        let mut bad = checkpoint_around(base);
        bad.params = CheckpointParams::Sim(sim);
        let two_visits = PatientRecord {
            patient_id: 2,
            visits: vec![visit(&[0], &[0], &[0]), visit(&[1], &[1], &[1])],
        };
        assert!(matches!(
            rollout(&bad, &th, &two_visits, RolloutMode::Dense),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn rollout_mode_names_round_trip() {
        for mode in [RolloutMode::Dense, RolloutMode::Smart] {
            assert_eq!(RolloutMode::from_name(mode.name()), Some(mode));
        }
        assert_eq!(RolloutMode::from_name("clever"), None);
    }

    // --- quantified properties ----------------------------------------------

    proptest! {
        #[test]
        fn addition_and_removal_sets_never_intersect(
            v in proptest::collection::vec(-10.0f64..10.0, 1..12),
            d1 in 0.0f64..=1.0,
            d2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let th = Thresholds::new(hi, lo).unwrap();
            let (n, o) = change_sets(&v, &th).unwrap();
            for i in &n {
                prop_assert!(!o.contains(i));
            }
        }

        #[test]
        fn raising_delta1_never_grows_the_addition_set(
            v in proptest::collection::vec(-10.0f64..10.0, 1..12),
            d1a in 0.5f64..=1.0,
            d1b in 0.5f64..=1.0,
        ) {
            let (lo, hi) = if d1a <= d1b { (d1a, d1b) } else { (d1b, d1a) };
            let th_lo = Thresholds::new(lo, 0.0).unwrap();
            let th_hi = Thresholds::new(hi, 0.0).unwrap();
            let (n_lo, _) = change_sets(&v, &th_lo).unwrap();
            let (n_hi, _) = change_sets(&v, &th_hi).unwrap();
            for i in &n_hi {
                prop_assert!(n_lo.contains(i), "higher δ1 must be a subset");
            }
        }

        #[test]
        fn lowering_delta2_never_grows_the_removal_set(
            v in proptest::collection::vec(-10.0f64..10.0, 1..12),
            d2a in 0.0f64..=0.5,
            d2b in 0.0f64..=0.5,
        ) {
            let (lo, hi) = if d2a <= d2b { (d2a, d2b) } else { (d2b, d2a) };
            let th_lo = Thresholds::new(0.9, lo).unwrap();
            let th_hi = Thresholds::new(0.9, hi).unwrap();
            let (_, o_lo) = change_sets(&v, &th_lo).unwrap();
            let (_, o_hi) = change_sets(&v, &th_hi).unwrap();
            for i in &o_lo {
                prop_assert!(o_hi.contains(i), "lower δ2 must be a subset");
            }
        }

        #[test]
        fn sparse_diff_reconstructs_the_target_set(
            prev in proptest::collection::btree_set(0usize..30, 0..10),
            cur in proptest::collection::btree_set(0usize..30, 0..10),
        ) {
            let prev: Vec<usize> = prev.into_iter().collect();
            let cur: Vec<usize> = cur.into_iter().collect();
            let d = sparse_diff(&prev, &cur);
            let rebuilt = apply_change(&prev, &d.added, &d.removed);
            prop_assert_eq!(rebuilt, cur);
        }
    }
}
