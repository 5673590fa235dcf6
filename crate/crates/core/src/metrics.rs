//! Evaluation metrics over per-visit medication sets, computed from each
//! patient's second visit onward and averaged per patient, then over
//! patients.
//!
//! The per-patient normalization divides by the full visit count V even
//! though only V−1 visits are evaluated; that convention is kept as the
//! default for comparability, with the per-evaluated-visit variant behind
//! [`Normalization::EvaluatedVisits`].

use std::collections::HashMap;

use serde::Serialize;

use crate::cohort::{Cohort, DdiMatrix};
use crate::error::{Error, Result};
use crate::inference::{sparse_diff, Rollout};

/// Fraction of unordered distinct medication pairs in one set that are
/// known interactions. A set with fewer than two medications has no pairs
/// and rates 0.
pub fn set_ddi_rate(set: &[usize], ddi: &DdiMatrix) -> f64 {
    if set.len() < 2 {
        return 0.0;
    }
    let mut interacting = 0usize;
    let mut pairs = 0usize;
    for (k, &i) in set.iter().enumerate() {
        for &j in &set[k + 1..] {
            pairs += 1;
            if ddi.get(i, j) {
                interacting += 1;
            }
        }
    }
    interacting as f64 / pairs as f64
}

/// Size of the intersection of two strictly increasing index slices.
pub fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let mut i = 0;
    let mut j = 0;
    let mut n = 0;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Jaccard similarity of two strictly increasing index slices. Two empty
/// sets are identical, so the similarity is 1.
pub fn set_jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// F1 of a predicted set against a true set: harmonic mean of precision
/// and recall, defined as 0 when the intersection is empty.
pub fn set_f1(pred: &[usize], truth: &[usize]) -> f64 {
    let inter = intersection_size(pred, truth);
    if inter == 0 {
        return 0.0;
    }
    let p = inter as f64 / pred.len() as f64;
    let r = inter as f64 / truth.len() as f64;
    2.0 * p * r / (p + r)
}

/// How per-patient visit sums are turned into means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the full visit count V, counting the never-evaluated
    /// first visit in the denominator (the published convention).
    #[default]
    FullVisitCount,
    /// Divide by the number of visits actually evaluated, V − 1.
    EvaluatedVisits,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::FullVisitCount => "full",
            Normalization::EvaluatedVisits => "evaluated",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Normalization::FullVisitCount),
            "evaluated" => Some(Normalization::EvaluatedVisits),
            _ => None,
        }
    }

    /// The divisor for a patient whose sets cover visits 2..V.
    fn divisor(self, evaluated_visits: usize) -> f64 {
        match self {
            Normalization::FullVisitCount => (evaluated_visits + 1) as f64,
            Normalization::EvaluatedVisits => evaluated_visits.max(1) as f64,
        }
    }
}

fn check_aligned(pred: &[Vec<usize>], truth: &[Vec<usize>], what: &str) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Evaluation(format!(
            "{what}: {} predicted visits but {} target visits",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean per-visit Jaccard for one patient; the lists cover visits 2..V
/// in order.
pub fn jaccard_patient(
    pred_sets: &[Vec<usize>],
    true_sets: &[Vec<usize>],
    norm: Normalization,
) -> Result<f64> {
    check_aligned(pred_sets, true_sets, "jaccard")?;
    let sum: f64 = pred_sets
        .iter()
        .zip(true_sets)
        .map(|(p, t)| set_jaccard(p, t))
        .sum();
    Ok(sum / norm.divisor(pred_sets.len()))
}

/// Mean per-visit F1 for one patient.
pub fn f1_patient(
    pred_sets: &[Vec<usize>],
    true_sets: &[Vec<usize>],
    norm: Normalization,
) -> Result<f64> {
    check_aligned(pred_sets, true_sets, "f1")?;
    let sum: f64 = pred_sets
        .iter()
        .zip(true_sets)
        .map(|(p, t)| set_f1(p, t))
        .sum();
    Ok(sum / norm.divisor(pred_sets.len()))
}

/// Interaction rate of one patient's predicted sets: interacting pairs
/// summed over visits divided by all pairs summed over visits; 0 when no
/// visit has two medications.
pub fn ddi_rate_patient(pred_sets: &[Vec<usize>], ddi: &DdiMatrix) -> f64 {
    let mut interacting = 0usize;
    let mut pairs = 0usize;
    for set in pred_sets {
        for (k, &i) in set.iter().enumerate() {
            for &j in &set[k + 1..] {
                pairs += 1;
                if ddi.get(i, j) {
                    interacting += 1;
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        interacting as f64 / pairs as f64
    }
}

fn err_patient(
    pred_sets: &[Vec<usize>],
    target_sets: &[Vec<usize>],
    norm: Normalization,
    what: &str,
) -> Result<f64> {
    check_aligned(pred_sets, target_sets, what)?;
    let sum: f64 = pred_sets
        .iter()
        .zip(target_sets)
        .map(|(p, t)| {
            let inter = intersection_size(p, t);
            (p.len() + t.len() - 2 * inter) as f64
        })
        .sum();
    Ok(sum / norm.divisor(pred_sets.len()))
}

/// Mean per-visit addition error: the symmetric difference between the
/// predicted and target addition sets, counted element-wise.
pub fn err_add_patient(
    pred_add_sets: &[Vec<usize>],
    target_add_sets: &[Vec<usize>],
    norm: Normalization,
) -> Result<f64> {
    err_patient(pred_add_sets, target_add_sets, norm, "err_add")
}

/// Mean per-visit removal error, analogous to [`err_add_patient`].
pub fn err_remove_patient(
    pred_remove_sets: &[Vec<usize>],
    target_remove_sets: &[Vec<usize>],
    norm: Normalization,
) -> Result<f64> {
    err_patient(pred_remove_sets, target_remove_sets, norm, "err_remove")
}

/// One patient's metric values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientMetrics {
    pub patient_id: u64,
    pub ddi_rate: f64,
    pub jaccard: f64,
    pub f1: f64,
    pub err_add: f64,
    pub err_remove: f64,
}

/// Metrics for a whole cohort: per-patient values plus their unweighted
/// means and the evaluated counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_patient: Vec<PatientMetrics>,
    pub mean_ddi_rate: f64,
    pub mean_jaccard: f64,
    pub mean_f1: f64,
    pub mean_err_add: f64,
    pub mean_err_remove: f64,
    pub n_patients: usize,
    pub n_visits_evaluated: usize,
}

/// Scores rollouts against a cohort's recorded visits. Every patient in
/// the cohort must have a rollout whose steps align with its visits; the
/// addition/removal targets chain on the *predicted* previous set, so an
/// early mistake legitimately costs later visits too.
pub fn evaluate(rollouts: &[Rollout], cohort: &Cohort, norm: Normalization) -> Result<MetricsReport> {
    let by_id: HashMap<u64, &Rollout> = rollouts.iter().map(|r| (r.patient_id, r)).collect();
    let mut per_patient = Vec::with_capacity(cohort.patients.len());
    let mut n_visits_evaluated = 0usize;

    for patient in &cohort.patients {
        let rollout = by_id.get(&patient.patient_id).ok_or_else(|| {
            Error::Evaluation(format!("no rollout for patient {}", patient.patient_id))
        })?;
        if rollout.steps.len() + 1 != patient.visits.len() {
            return Err(Error::Evaluation(format!(
                "patient {} has {} visits but the rollout covers {}",
                patient.patient_id,
                patient.visits.len(),
                rollout.steps.len() + 1
            )));
        }

        let pred_sets: Vec<Vec<usize>> = rollout
            .steps
            .iter()
            .map(|s| s.predicted_set.clone())
            .collect();
        let true_sets: Vec<Vec<usize>> = patient.visits[1..]
            .iter()
            .map(|v| v.medications.clone())
            .collect();

        let mut pred_adds = Vec::with_capacity(rollout.steps.len());
        let mut pred_removes = Vec::with_capacity(rollout.steps.len());
        let mut target_adds = Vec::with_capacity(rollout.steps.len());
        let mut target_removes = Vec::with_capacity(rollout.steps.len());
        for (k, step) in rollout.steps.iter().enumerate() {
            let prev_pred = if k == 0 {
                &patient.visits[0].medications
            } else {
                &rollout.steps[k - 1].predicted_set
            };
            let diff = sparse_diff(prev_pred, &patient.visits[k + 1].medications);
            target_adds.push(diff.added);
            target_removes.push(diff.removed);
            pred_adds.push(step.additions.clone());
            pred_removes.push(step.removals.clone());
        }

        per_patient.push(PatientMetrics {
            patient_id: patient.patient_id,
            ddi_rate: ddi_rate_patient(&pred_sets, &cohort.ddi),
            jaccard: jaccard_patient(&pred_sets, &true_sets, norm)?,
            f1: f1_patient(&pred_sets, &true_sets, norm)?,
            err_add: err_add_patient(&pred_adds, &target_adds, norm)?,
            err_remove: err_remove_patient(&pred_removes, &target_removes, norm)?,
        });
        n_visits_evaluated += rollout.steps.len();
    }

    if per_patient.is_empty() {
        return Err(Error::Evaluation("no patients to evaluate".into()));
    }
    let n = per_patient.len() as f64;
    let mean = |f: fn(&PatientMetrics) -> f64| per_patient.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mean_ddi_rate: mean(|p| p.ddi_rate),
        mean_jaccard: mean(|p| p.jaccard),
        mean_f1: mean(|p| p.f1),
        mean_err_add: mean(|p| p.err_add),
        mean_err_remove: mean(|p| p.err_remove),
        n_patients: per_patient.len(),
        n_visits_evaluated,
        per_patient,
    })
}

/// Number of histogram bins used by [`consecutive_jaccard_stats`].
pub const JACCARD_BINS: usize = 20;

/// Histogram of Jaccard similarities over [0, 1], with the mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JaccardHistogram {
    /// Counts for 20 equal-width bins over [0, 1]; a similarity of
    /// exactly 1 lands in the last bin.
    pub bins: Vec<usize>,
    pub mean: f64,
    pub count: usize,
}

impl JaccardHistogram {
    fn from_values(values: &[f64]) -> Self {
        let mut bins = vec![0usize; JACCARD_BINS];
        for &v in values {
            let idx = ((v * JACCARD_BINS as f64) as usize).min(JACCARD_BINS - 1);
            bins[idx] += 1;
        }
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        JaccardHistogram {
            bins,
            mean,
            count: values.len(),
        }
    }
}

/// Consecutive-visit overlap statistics for a cohort: how much diagnosis
/// codes and medication sets repeat between adjacent visits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JaccardStats {
    pub diagnosis: JaccardHistogram,
    pub medication: JaccardHistogram,
}

/// Jaccard similarity of consecutive visits' diagnosis sets and
/// medication sets, pooled over every patient, as binned histograms.
pub fn consecutive_jaccard_stats(cohort: &Cohort) -> JaccardStats {
    let mut diag = Vec::new();
    let mut med = Vec::new();
    for patient in &cohort.patients {
        for w in patient.visits.windows(2) {
            diag.push(set_jaccard(&w[0].diagnoses, &w[1].diagnoses));
            med.push(set_jaccard(&w[0].medications, &w[1].medications));
        }
    }
    JaccardStats {
        diagnosis: JaccardHistogram::from_values(&diag),
        medication: JaccardHistogram::from_values(&med),
    }
}
