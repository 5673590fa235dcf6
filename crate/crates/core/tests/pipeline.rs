//! End-to-end exercise of the library surface: generate a cohort, split it,
//! train the model, calibrate decision thresholds on the validation split,
//! roll out predictions on the test split, and score them — with every
//! artifact passed through its on-disk format along the way.

use micron_core::baselines::{baseline_rollout, train_baseline, BaselineKind};
use micron_core::calibration::{
    load_thresholds, save_thresholds, select_thresholds, Thresholds,
};
use micron_core::cohort::{
    generate_cohort, load_cohort, save_cohort, split_cohort, GeneratorConfig,
};
use micron_core::inference::{rollout, RolloutMode};
use micron_core::metrics::{consecutive_jaccard_stats, evaluate, Normalization};
use micron_core::trainer::{load_checkpoint, save_checkpoint, train, Hyperparams};
use micron_core::Error;

fn pipeline_config() -> GeneratorConfig {
    GeneratorConfig {
        n_patients: 30,
        n_diag: 24,
        n_proc: 10,
        n_med: 16,
        visits_min: 3,
        visits_max: 5,
        ..GeneratorConfig::default()
    }
}

fn pipeline_hyperparams() -> Hyperparams {
    Hyperparams {
        embed_dim: 8,
        hidden_dim: 16,
        epochs: 4,
        lr: 1e-3,
        seed: 13,
        ..Hyperparams::default()
    }
}

#[test]
fn full_pipeline_produces_finite_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = generate_cohort(&pipeline_config(), 4242).unwrap();

    // Round-trip the cohort through its file format before using it.
    let cohort_path = dir.path().join("cohort.txt");
    save_cohort(&cohort, &cohort_path).unwrap();
    let cohort = load_cohort(&cohort_path).unwrap();

    let (train_split, val_split, test_split) =
        split_cohort(&cohort, (0.6, 0.2, 0.2), 99).unwrap();
    assert!(!train_split.patients.is_empty());
    assert!(!val_split.patients.is_empty());
    assert!(!test_split.patients.is_empty());

    let checkpoint = train(&train_split, &val_split, &pipeline_hyperparams()).unwrap();
    assert_eq!(checkpoint.epoch_log.len(), 4);
    for entry in &checkpoint.epoch_log {
        assert!(entry.total.is_finite());
        assert!(entry.val_total.is_finite());
    }

    let ckpt_path = dir.path().join("model.ckpt");
    save_checkpoint(&checkpoint, &ckpt_path).unwrap();
    let checkpoint = load_checkpoint(&ckpt_path).unwrap();

    let thresholds = select_thresholds(&checkpoint, &val_split).unwrap();
    assert!(thresholds.delta1 >= thresholds.delta2);
    let th_path = dir.path().join("thresholds.txt");
    save_thresholds(&thresholds, &th_path).unwrap();
    let thresholds = load_thresholds(&th_path).unwrap();

    let rollouts: Vec<_> = test_split
        .patients
        .iter()
        .map(|p| rollout(&checkpoint, &thresholds, p, RolloutMode::Dense).unwrap())
        .collect();
    let report = evaluate(&rollouts, &test_split, Normalization::FullVisitCount).unwrap();
    assert_eq!(report.n_patients, test_split.patients.len());
    assert!(report.mean_jaccard.is_finite());
    assert!((0.0..=1.0).contains(&report.mean_jaccard));
    assert!((0.0..=1.0).contains(&report.mean_f1));
    assert!(report.mean_err_add >= 0.0);
    assert!(report.mean_err_remove >= 0.0);

    // The sparse-update route must agree with the dense recomputation.
    for (patient, dense) in test_split.patients.iter().zip(&rollouts) {
        let smart = rollout(&checkpoint, &thresholds, patient, RolloutMode::Smart).unwrap();
        assert_eq!(&smart, dense, "routes diverged for patient {}", patient.patient_id);
    }

    // Cohort descriptive statistics run on the same data.
    let stats = consecutive_jaccard_stats(&cohort);
    assert!(stats.medication.mean > 0.0, "carried meds overlap across visits");
    assert_eq!(stats.medication.bins.len(), 20);
    assert_eq!(
        stats.medication.count,
        cohort.total_pairs(),
        "one histogram entry per consecutive pair"
    );
}

#[test]
fn baselines_run_on_the_same_splits() {
    let cohort = generate_cohort(&pipeline_config(), 4242).unwrap();
    let (train_split, _, test_split) = split_cohort(&cohort, (0.6, 0.2, 0.2), 99).unwrap();
    let hp = pipeline_hyperparams();
    for kind in [BaselineKind::SimNn, BaselineKind::DualNn] {
        let ckpt = train_baseline(kind, &train_split, &hp).unwrap();
        let rollouts: Vec<_> = test_split
            .patients
            .iter()
            .map(|p| baseline_rollout(&ckpt, p).unwrap())
            .collect();
        let report = evaluate(&rollouts, &test_split, Normalization::FullVisitCount).unwrap();
        assert!((0.0..=1.0).contains(&report.mean_f1), "{}", kind.name());
    }
}

#[test]
fn evaluation_rejects_rollouts_from_a_different_cohort() {
    let cohort = generate_cohort(&pipeline_config(), 4242).unwrap();
    let (train_split, val_split, test_split) =
        split_cohort(&cohort, (0.6, 0.2, 0.2), 99).unwrap();
    let hp = Hyperparams {
        epochs: 1,
        ..pipeline_hyperparams()
    };
    let checkpoint = train(&train_split, &val_split, &hp).unwrap();
    let thresholds = Thresholds::new(0.6, 0.4).unwrap();
    let rollouts: Vec<_> = test_split
        .patients
        .iter()
        .map(|p| rollout(&checkpoint, &thresholds, p, RolloutMode::Dense).unwrap())
        .collect();
    // Scoring against the wrong split cannot find the patients.
    let err = evaluate(&rollouts, &val_split, Normalization::FullVisitCount).unwrap_err();
    assert!(matches!(err, Error::Evaluation(_)));
}
