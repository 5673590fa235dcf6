//! Acceptance gate: ten end-to-end properties the finished system must
//! hold, one test per criterion. Each test prints a single `PASS:` line on
//! success (visible with `--nocapture`); a failing criterion shows up as a
//! failing test naming it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use micron_cli::copy_forward_baseline;
use micron_core::calibration::{select_thresholds, Thresholds};
use micron_core::cohort::{
    generate_cohort, generate_ddi_matrix, multi_hot, split_cohort, Cohort, DdiMatrix,
    GeneratorConfig, Visit,
};
use micron_core::inference::{
    change_sets, rollout, sparse_diff, smart_residual, RolloutMode,
};
use micron_core::losses::{
    pair_loss_backward, reconstruction_loss, update_momentum_weights, LossTerms,
    MomentumState,
};
use micron_core::metrics::{
    ddi_rate_patient, err_add_patient, err_remove_patient, evaluate, f1_patient,
    jaccard_patient, Normalization,
};
use micron_core::model::{backward_pair, forward_pair, forward_visit, ModelParams};
use micron_core::numerics::{grad_check, Activation, ParamSet};
use micron_core::trainer::{train, Checkpoint, CheckpointParams, Hyperparams};

fn random_visit(rng: &mut ChaCha8Rng, n_diag: usize, n_proc: usize, n_med: usize) -> Visit {
    let draw = |rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize| -> Vec<usize> {
        let count = rng.gen_range(lo..=hi.min(n));
        let mut picks: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = rng.gen_range(i..n);
            picks.swap(i, j);
        }
        let mut out = picks[..count].to_vec();
        out.sort_unstable();
        out
    };
    Visit {
        diagnoses: draw(rng, n_diag, 1, 4),
        procedures: draw(rng, n_proc, 1, 3),
        medications: draw(rng, n_med, 1, 4),
    }
}

/// Wraps bare model parameters in a checkpoint so inference and
/// calibration can run on an untrained model.
fn checkpoint_around(params: ModelParams, cohort: &Cohort, hp: &Hyperparams) -> Checkpoint {
    Checkpoint {
        params: CheckpointParams::Micron(params),
        hyperparams: hp.clone(),
        vocabulary: cohort.vocabulary,
        epoch_log: Vec::new(),
    }
}

#[test]
fn gradient_correctness() {
    let started = Instant::now();
    let (n_diag, n_proc, n_med) = (10, 10, 6);
    let mut params = ModelParams::init(n_diag, n_proc, n_med, 4, 8, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prev = random_visit(&mut rng, n_diag, n_proc, n_med);
    let cur = random_visit(&mut rng, n_diag, n_proc, n_med);
    let t_prev = multi_hot(&prev.medications, n_med);
    let t_cur = multi_hot(&cur.medications, n_med);
    let mut ddi = DdiMatrix::zeros(n_med);
    ddi.set_pair(0, 1);
    ddi.set_pair(2, 5);
    ddi.set_pair(1, 4);
    let lambda = [0.25; 4];
    let gamma = 0.75;

    let max_rel = grad_check(
        &mut params,
        |p| {
            let fwd = forward_pair(p, &prev, &cur)?;
            let (terms, dm_prev, dm_cur, du) =
                pair_loss_backward(&fwd, &t_prev, &t_cur, &ddi, &lambda, gamma)?;
            backward_pair(p, &fwd, &dm_prev, &dm_cur, &du);
            Ok(terms.total(&lambda, gamma))
        },
        1e-5,
    )
    .unwrap();
    assert!(
        max_rel < 1e-4,
        "analytic vs central-difference max relative error {max_rel}"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("PASS: gradient correctness (max rel err {max_rel:.2e}, {elapsed:?})");
}

#[test]
fn reconstruction_identity_in_linear_mode() {
    let (n_diag, n_proc, n_med) = (12, 6, 8);
    // Linear prescription network: identity activation, zero biases. The
    // residual update then reproduces the next visit's scores exactly.
    let mut params = ModelParams::zeros(n_diag, n_proc, n_med, 5, 9, Activation::Identity);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in [
        &mut params.e_d.value,
        &mut params.e_p.value,
        &mut params.w_h.value,
        &mut params.ffn.w1.value,
        &mut params.ffn.w2.value,
    ] {
        for v in m.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let prev = random_visit(&mut rng, n_diag, n_proc, n_med);
        let cur = random_visit(&mut rng, n_diag, n_proc, n_med);
        let fwd = forward_pair(&params, &prev, &cur).unwrap();
        let rec = reconstruction_loss(&fwd.m_prev, &fwd.u, &fwd.m_cur).unwrap();
        worst = worst.max(rec);
    }
    assert!(
        worst < 1e-10,
        "reconstruction loss should vanish in linear mode, worst {worst:e}"
    );
    println!("PASS: reconstruction identity in linear mode (worst {worst:.2e} over 100 pairs)");
}

#[test]
fn smart_inference_equivalence() {
    let started = Instant::now();
    let cohort = generate_cohort(&GeneratorConfig::default(), 7).unwrap();
    assert_eq!(cohort.patients.len(), 50);
    let vocab = cohort.vocabulary;
    let hp = Hyperparams::default();
    let params =
        ModelParams::init(vocab.n_diag, vocab.n_proc, vocab.n_med, hp.embed_dim, hp.hidden_dim, 11)
            .unwrap();

    // The residual from sparse code differences matches the dense
    // difference of health representations.
    let mut worst = 0.0f64;
    for patient in &cohort.patients {
        for pair in patient.visits.windows(2) {
            let h_prev = forward_visit(&params, &pair[0]).unwrap().h;
            let h_cur = forward_visit(&params, &pair[1]).unwrap().h;
            let dense: Vec<f64> = h_cur.iter().zip(&h_prev).map(|(c, p)| c - p).collect();
            let dd = sparse_diff(&pair[0].diagnoses, &pair[1].diagnoses);
            let dp = sparse_diff(&pair[0].procedures, &pair[1].procedures);
            let smart = smart_residual(&params, &dd, &dp).unwrap();
            for (s, d) in smart.iter().zip(&dense) {
                worst = worst.max((s - d).abs());
            }
        }
    }
    assert!(worst < 1e-10, "residual routes diverged by {worst:e}");

    // Identical rollout sets on every patient.
    let checkpoint = checkpoint_around(params, &cohort, &hp);
    let thresholds = Thresholds::new(0.7, 0.3).unwrap();
    for patient in &cohort.patients {
        let dense = rollout(&checkpoint, &thresholds, patient, RolloutMode::Dense).unwrap();
        let smart = rollout(&checkpoint, &thresholds, patient, RolloutMode::Smart).unwrap();
        assert_eq!(dense, smart, "rollouts diverged for patient {}", patient.patient_id);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("PASS: smart inference equivalence (worst residual gap {worst:.2e}, {elapsed:?})");
}

#[test]
fn threshold_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let never = Thresholds::new(1.0, 0.0).unwrap();
    for _ in 0..1000 {
        let scores: Vec<f64> = (0..16).map(|_| rng.gen_range(-40.0..40.0)).collect();
        let (n, o) = change_sets(&scores, &never).unwrap();
        assert!(n.is_empty(), "no probability reaches 1");
        assert!(o.is_empty(), "no probability reaches 0");

        let delta = rng.gen_range(0.05..0.95);
        let full = Thresholds::new(delta, delta).unwrap();
        let (n, o) = change_sets(&scores, &full).unwrap();
        assert_eq!(
            n.len() + o.len(),
            scores.len(),
            "equal thresholds classify every medication"
        );
        for i in &n {
            assert!(!o.contains(i), "classification must be exclusive");
        }
    }
    println!("PASS: threshold semantics (1000 random score vectors)");
}

#[test]
fn metric_oracle_equivalence() {
    use std::collections::HashSet;

    fn jaccard_oracle(pred: &[Vec<usize>], truth: &[Vec<usize>], full: bool) -> f64 {
        let per: Vec<f64> = pred
            .iter()
            .zip(truth)
            .map(|(p, t)| {
                let ps: HashSet<_> = p.iter().collect();
                let ts: HashSet<_> = t.iter().collect();
                let inter = ps.intersection(&ts).count() as f64;
                let union = ps.union(&ts).count() as f64;
                if union == 0.0 {
                    1.0
                } else {
                    inter / union
                }
            })
            .collect();
        per.iter().sum::<f64>() / divisor(pred.len(), full)
    }

    fn f1_oracle(pred: &[Vec<usize>], truth: &[Vec<usize>], full: bool) -> f64 {
        let per: Vec<f64> = pred
            .iter()
            .zip(truth)
            .map(|(p, t)| {
                let ps: HashSet<_> = p.iter().collect();
                let ts: HashSet<_> = t.iter().collect();
                let inter = ps.intersection(&ts).count();
                if inter == 0 {
                    return 0.0;
                }
                let prec = inter as f64 / p.len() as f64;
                let rec = inter as f64 / t.len() as f64;
                2.0 * prec * rec / (prec + rec)
            })
            .collect();
        per.iter().sum::<f64>() / divisor(pred.len(), full)
    }

    fn ddi_oracle(pred: &[Vec<usize>], ddi: &DdiMatrix) -> f64 {
        let mut bad = 0usize;
        let mut all = 0usize;
        for set in pred {
            for (a, &i) in set.iter().enumerate() {
                for &j in &set[a + 1..] {
                    all += 1;
                    if ddi.get(i, j) {
                        bad += 1;
                    }
                }
            }
        }
        if all == 0 {
            0.0
        } else {
            bad as f64 / all as f64
        }
    }

    fn err_oracle(pred: &[Vec<usize>], target: &[Vec<usize>], full: bool) -> f64 {
        let per: Vec<f64> = pred
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let ps: HashSet<_> = p.iter().collect();
                let ts: HashSet<_> = t.iter().collect();
                (ps.difference(&ts).count() + ts.difference(&ps).count()) as f64
            })
            .collect();
        per.iter().sum::<f64>() / divisor(pred.len(), full)
    }

    fn divisor(evaluated: usize, full: bool) -> f64 {
        if full {
            (evaluated + 1) as f64
        } else {
            evaluated.max(1) as f64
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..200 {
        let n_med = rng.gen_range(2..=8);
        let visits = rng.gen_range(1..=4); // evaluated visits (t = 2..V, V ≤ 5)
        let random_sets = |rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
            (0..visits)
                .map(|_| (0..n_med).filter(|_| rng.gen_bool(0.4)).collect())
                .collect()
        };
        let pred = random_sets(&mut rng);
        let truth = random_sets(&mut rng);
        let ddi = generate_ddi_matrix(n_med, 0.3, case as u64).unwrap();

        for (norm, full) in [
            (Normalization::FullVisitCount, true),
            (Normalization::EvaluatedVisits, false),
        ] {
            assert_eq!(
                jaccard_patient(&pred, &truth, norm).unwrap(),
                jaccard_oracle(&pred, &truth, full),
                "jaccard mismatch on case {case}"
            );
            assert_eq!(
                f1_patient(&pred, &truth, norm).unwrap(),
                f1_oracle(&pred, &truth, full),
                "f1 mismatch on case {case}"
            );
            assert_eq!(
                err_add_patient(&pred, &truth, norm).unwrap(),
                err_oracle(&pred, &truth, full),
                "err_add mismatch on case {case}"
            );
            assert_eq!(
                err_remove_patient(&pred, &truth, norm).unwrap(),
                err_oracle(&pred, &truth, full),
                "err_remove mismatch on case {case}"
            );
        }
        assert_eq!(
            ddi_rate_patient(&pred, &ddi),
            ddi_oracle(&pred, &ddi),
            "ddi rate mismatch on case {case}"
        );
    }
    println!("PASS: metric oracle equivalence (200 randomized instances, both normalizations)");
}

#[test]
fn trainability_beats_baselines() {
    let started = Instant::now();
    let cohort = generate_cohort(&GeneratorConfig::default(), 7).unwrap();
    assert_eq!(cohort.patients.len(), 50);
    let (train_split, val_split, test_split) =
        split_cohort(&cohort, (0.6, 0.2, 0.2), 17).unwrap();
    let hp = Hyperparams {
        lr: 2e-3,
        ..Hyperparams::default()
    };
    assert_eq!(hp.epochs, 50);

    let trained = train(&train_split, &val_split, &hp).unwrap();
    let first = trained.epoch_log.first().unwrap().total;
    let last = trained.epoch_log.last().unwrap().total;
    assert!(
        last < 0.5 * first,
        "final mean epoch loss {last} is not below half the first {first}"
    );

    let norm = Normalization::FullVisitCount;
    let thresholds = select_thresholds(&trained, &val_split).unwrap();
    let rollouts: Vec<_> = test_split
        .patients
        .iter()
        .map(|p| rollout(&trained, &thresholds, p, RolloutMode::Dense).unwrap())
        .collect();
    let report = evaluate(&rollouts, &test_split, norm).unwrap();

    let copy_report = evaluate(&copy_forward_baseline(&test_split), &test_split, norm).unwrap();
    assert!(
        report.mean_f1 > copy_report.mean_f1,
        "trained f1 {} must beat copy-forward {}",
        report.mean_f1,
        copy_report.mean_f1
    );
    assert!(
        report.mean_jaccard > copy_report.mean_jaccard,
        "trained jaccard {} must beat copy-forward {}",
        report.mean_jaccard,
        copy_report.mean_jaccard
    );

    let vocab = cohort.vocabulary;
    let untrained = checkpoint_around(
        ModelParams::init(vocab.n_diag, vocab.n_proc, vocab.n_med, hp.embed_dim, hp.hidden_dim, hp.seed)
            .unwrap(),
        &cohort,
        &hp,
    );
    let un_thresholds = select_thresholds(&untrained, &val_split).unwrap();
    let un_rollouts: Vec<_> = test_split
        .patients
        .iter()
        .map(|p| rollout(&untrained, &un_thresholds, p, RolloutMode::Dense).unwrap())
        .collect();
    let un_report = evaluate(&un_rollouts, &test_split, norm).unwrap();
    assert!(
        report.mean_err_add < un_report.mean_err_add,
        "trained err_add {} must beat untrained {}",
        report.mean_err_add,
        un_report.mean_err_add
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "PASS: trainability (loss {first:.3} -> {last:.3}; f1 {:.4} vs copy-forward {:.4}; \
         jaccard {:.4} vs {:.4}; err_add {:.3} vs untrained {:.3}; {elapsed:?})",
        report.mean_f1,
        copy_report.mean_f1,
        report.mean_jaccard,
        copy_report.mean_jaccard,
        report.mean_err_add,
        un_report.mean_err_add
    );
}

#[test]
fn ddi_loss_direction() {
    let config = GeneratorConfig {
        ddi_density: 0.2,
        ..GeneratorConfig::default()
    };
    let cohort = generate_cohort(&config, 7).unwrap();
    let (train_split, val_split, test_split) =
        split_cohort(&cohort, (0.6, 0.2, 0.2), 17).unwrap();

    let mut with_sum = 0.0;
    let mut without_sum = 0.0;
    for seed in [1, 2, 3] {
        for ablate in [false, true] {
            let hp = Hyperparams {
                seed,
                no_ddi: ablate,
                ..Hyperparams::default()
            };
            let ckpt = train(&train_split, &val_split, &hp).unwrap();
            let th = select_thresholds(&ckpt, &val_split).unwrap();
            let rollouts: Vec<_> = test_split
                .patients
                .iter()
                .map(|p| rollout(&ckpt, &th, p, RolloutMode::Dense).unwrap())
                .collect();
            let report =
                evaluate(&rollouts, &test_split, Normalization::FullVisitCount).unwrap();
            if ablate {
                without_sum += report.mean_ddi_rate;
            } else {
                with_sum += report.mean_ddi_rate;
            }
        }
    }
    let with_mean = with_sum / 3.0;
    let without_mean = without_sum / 3.0;
    assert!(
        with_mean < without_mean,
        "mean DDI rate with the interaction loss ({with_mean}) must be strictly below \
         the ablated run ({without_mean})"
    );
    println!(
        "PASS: DDI loss direction (mean over 3 seeds: {with_mean:.4} with vs \
         {without_mean:.4} without)"
    );
}

#[test]
fn ablation_flags_zero_their_gradients() {
    let (n_diag, n_proc, n_med) = (10, 10, 6);
    let params = ModelParams::init(n_diag, n_proc, n_med, 4, 8, 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prev = random_visit(&mut rng, n_diag, n_proc, n_med);
    let cur = random_visit(&mut rng, n_diag, n_proc, n_med);
    let t_prev = multi_hot(&prev.medications, n_med);
    let t_cur = multi_hot(&cur.medications, n_med);
    let ddi = generate_ddi_matrix(n_med, 0.4, 2).unwrap();

    // (term index, flag setter) for the three ablatable terms.
    let cases: [(usize, fn(&mut Hyperparams)); 3] = [
        (0, |hp| hp.no_rec = true),
        (1, |hp| hp.no_ddi = true),
        (3, |hp| hp.no_multi = true),
    ];
    for (idx, set_flag) in cases {
        let mut only_term = [0.0; 4];
        only_term[idx] = 0.25;

        // The lone term produces some gradient when enabled...
        let mut active = params.clone();
        let fwd = forward_pair(&active, &prev, &cur).unwrap();
        let (_, dm_prev, dm_cur, du) =
            pair_loss_backward(&fwd, &t_prev, &t_cur, &ddi, &only_term, 0.75).unwrap();
        backward_pair(&mut active, &fwd, &dm_prev, &dm_cur, &du);
        assert!(
            active.flat_grads().iter().any(|&g| g != 0.0),
            "term {idx} should contribute gradient when enabled"
        );

        // ...and bitwise-zero gradient once its flag is set.
        let mut hp = Hyperparams {
            lambda: only_term,
            ..Hyperparams::default()
        };
        set_flag(&mut hp);
        let mut ablated = params.clone();
        let fwd = forward_pair(&ablated, &prev, &cur).unwrap();
        let (_, dm_prev, dm_cur, du) =
            pair_loss_backward(&fwd, &t_prev, &t_cur, &ddi, &hp.effective_lambda(), 0.75)
                .unwrap();
        backward_pair(&mut ablated, &fwd, &dm_prev, &dm_cur, &du);
        for (k, &g) in ablated.flat_grads().iter().enumerate() {
            assert!(
                g == 0.0 && g.is_sign_positive(),
                "ablated term {idx} left gradient {g:e} at parameter {k}"
            );
        }
    }
    println!("PASS: ablation flags zero their gradient contributions bitwise");
}

#[test]
fn momentum_weights_stay_a_probability_vector() {
    // 1000 random updates with the interaction gate disabled (η = 0 never
    // fires): weights stay non-negative and sum to one.
    let mut state = MomentumState::new(0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for step in 0..1000 {
        let losses = [
            rng.gen_range(0.01..10.0),
            rng.gen_range(0.01..10.0),
            rng.gen_range(0.01..10.0),
            rng.gen_range(0.01..10.0),
        ];
        let effective = update_momentum_weights(&mut state, &losses, 0.75, 1.0).unwrap();
        let sum: f64 = state.lambda.iter().sum();
        assert!(
            (sum - 1.0).abs() < 1e-9,
            "weights sum {sum} after update {step}"
        );
        for &l in &state.lambda {
            assert!(l >= 0.0, "negative weight after update {step}");
        }
        assert_eq!(effective, state.lambda, "gate must not fire at η = 0");
    }

    // Uniform relative drift is a fixed point: weights stay at equal
    // quarters when every loss sits exactly on its running mean.
    let mut state = MomentumState::new(0.0).unwrap();
    let losses = [2.0, 2.0, 2.0, 2.0];
    update_momentum_weights(&mut state, &losses, 0.75, 1.0).unwrap(); // bootstrap
    update_momentum_weights(&mut state, &losses, 0.75, 1.0).unwrap();
    assert_eq!(
        state.lambda,
        [0.25; 4],
        "uniform drift must leave the uniform weights unchanged"
    );
    println!("PASS: momentum weights stay a probability vector; uniform fixed point holds");
}

#[test]
fn determinism_byte_for_byte() {
    let steps = |dir: &std::path::Path| {
        let run = |args: &[&str]| {
            let out = std::process::Command::new(env!("CARGO_BIN_EXE_micron"))
                .args(args)
                .current_dir(dir)
                .output()
                .expect("binary runs");
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        };
        run(&["generate", "--seed", "5", "--patients", "20", "-o", "c.ehr"]);
        run(&[
            "train", "-i", "c.ehr", "-o", "m.ckpt", "--embed-dim", "8",
            "--hidden-dim", "16", "--epochs", "3", "--lr", "0.001",
        ]);
        run(&["calibrate", "-i", "c.ehr", "--checkpoint", "m.ckpt", "-o", "th.txt"]);
        run(&[
            "evaluate", "-i", "c.ehr", "--checkpoint", "m.ckpt", "--thresholds",
            "th.txt", "--format", "json", "-o", "report.json",
        ]);
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    steps(dir_a.path());
    steps(dir_b.path());
    for name in ["c.ehr", "m.ckpt", "th.txt", "report.json"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    println!("PASS: determinism (cohort, checkpoint, thresholds, report byte-identical)");
}
