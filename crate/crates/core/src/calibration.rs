//! Threshold selection: the addition threshold δ1 and removal threshold δ2
//! are picked from per-medication ROC cut-off candidates on a held-out
//! cohort — δ1 averages each medication's 5th-percentile cut-off (keeping
//! false negatives low), δ2 averages the 95th-percentile cut-off (keeping
//! false positives low).

use std::path::Path;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::model::forward_visit;
use crate::numerics::sigmoid;
use crate::trainer::Checkpoint;

/// Addition/removal decision thresholds on the σ scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// A medication whose score reaches this is added.
    pub delta1: f64,
    /// A medication whose score falls to this (or below) is removed.
    pub delta2: f64,
}

impl Thresholds {
    pub fn new(delta1: f64, delta2: f64) -> Result<Self> {
        let th = Thresholds { delta1, delta2 };
        th.validate()?;
        Ok(th)
    }

    /// Enforces `1 ≥ δ1 ≥ δ2 ≥ 0`. The ordering is load-bearing: it is
    /// what keeps the addition and removal sets disjoint.
    pub fn validate(&self) -> Result<()> {
        if !self.delta1.is_finite() || !self.delta2.is_finite() {
            return Err(Error::Calibration(format!(
                "thresholds must be finite, got δ1={} δ2={}",
                self.delta1, self.delta2
            )));
        }
        if !(self.delta1 <= 1.0 && self.delta2 >= 0.0 && self.delta1 >= self.delta2) {
            return Err(Error::Calibration(format!(
                "thresholds must satisfy 1 ≥ δ1 ≥ δ2 ≥ 0, got δ1={} δ2={}",
                self.delta1, self.delta2
            )));
        }
        Ok(())
    }
}

/// ROC cut-off candidates: the distinct predicted scores, descending.
/// Labels must be 0/1 and aligned with the scores; they define what the
/// curve would discriminate but do not change the candidate list.
pub fn roc_cutoffs(scores: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Calibration("no scores to build cut-offs from".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Calibration(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Calibration(format!("labels must be 0 or 1, got {l}")));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Calibration(format!("non-finite score {s}")));
    }
    let mut cuts = scores.to_vec();
    cuts.sort_by(|a, b| b.partial_cmp(a).expect("finite scores compare"));
    cuts.dedup();
    Ok(cuts)
}

/// Nearest-rank percentile pick on a descending list: the element at
/// 1-based index ⌈p/100 · n⌉.
fn nearest_rank_pick(descending: &[f64], percentile: f64) -> f64 {
    let n = descending.len();
    debug_assert!(n > 0, "pick from empty list");
    let rank = ((percentile / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    descending[rank - 1]
}

/// Averages the per-medication percentile picks into the two thresholds,
/// clamping δ2 to preserve the ordering invariant in pathological cases.
fn thresholds_from_pools(pool1: &[f64], pool2: &[f64]) -> Result<Thresholds> {
    if pool1.is_empty() || pool2.is_empty() {
        return Err(Error::Calibration(
            "no medication produced calibration scores".into(),
        ));
    }
    let mean = |p: &[f64]| p.iter().sum::<f64>() / p.len() as f64;
    let delta1 = mean(pool1);
    let delta2 = mean(pool2).min(delta1);
    Thresholds::new(delta1, delta2)
}

/// Selects thresholds from a trained model and a held-out cohort: per
/// medication, σ-scores are collected over every patient's second and
/// later visits; medications absent from all those visits are skipped.
/// δ1 averages the 5th-percentile cut-off of each remaining medication's
/// descending candidate list, δ2 the 95th-percentile cut-off.
pub fn select_thresholds(checkpoint: &Checkpoint, val_cohort: &Cohort) -> Result<Thresholds> {
    let params = checkpoint.params.as_micron()?;
    if checkpoint.vocabulary != val_cohort.vocabulary {
        return Err(Error::Shape(format!(
            "checkpoint vocabulary {:?} does not match cohort vocabulary {:?}",
            checkpoint.vocabulary, val_cohort.vocabulary
        )));
    }
    let n_med = val_cohort.vocabulary.n_med;
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); n_med];
    let mut labels: Vec<Vec<u8>> = vec![Vec::new(); n_med];

    for patient in &val_cohort.patients {
        for visit in patient.visits.iter().skip(1) {
            let fwd = forward_visit(params, visit)?;
            let probs = sigmoid(&fwd.y)?;
            for i in 0..n_med {
                scores[i].push(probs[i]);
                labels[i].push(u8::from(visit.medications.binary_search(&i).is_ok()));
            }
        }
    }

    let mut pool1 = Vec::new();
    let mut pool2 = Vec::new();
    for i in 0..n_med {
        // A medication never present in the held-out visits has no
        // positive labels to anchor a cut-off; skip it.
        if labels[i].iter().all(|&l| l == 0) {
            continue;
        }
        let cuts = roc_cutoffs(&scores[i], &labels[i])?;
        pool1.push(nearest_rank_pick(&cuts, 5.0));
        pool2.push(nearest_rank_pick(&cuts, 95.0));
    }
    thresholds_from_pools(&pool1, &pool2)
}

/// Writes thresholds as two decimal text lines (δ1 then δ2), rendered so
/// a load restores the exact values.
pub fn save_thresholds(th: &Thresholds, path: &Path) -> Result<()> {
    th.validate()?;
    std::fs::write(path, format!("{}\n{}\n", th.delta1, th.delta2))?;
    Ok(())
}

/// Reads and validates a thresholds sidecar written by [`save_thresholds`].
pub fn load_thresholds(path: &Path) -> Result<Thresholds> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut next = |what: &str| -> Result<f64> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Calibration(format!("thresholds file is missing {what}")))?;
        line.trim()
            .parse()
            .map_err(|_| Error::Calibration(format!("invalid {what} value {line:?}")))
    };
    let delta1 = next("δ1")?;
    let delta2 = next("δ2")?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Calibration(
            "thresholds file has trailing content".into(),
        ));
    }
    Thresholds::new(delta1, delta2)
}
