//! Training loop, RMSprop optimizer, and the kind-tagged text checkpoint
//! format shared by the main model and the comparison models.
//!
//! One batch is one patient: the loss of every consecutive visit pair is
//! summed (no normalization) and backpropagated, then a single optimizer
//! step is taken. Patients are visited in a freshly shuffled order each
//! epoch; all randomness flows from one seeded generator, so a fixed seed
//! reproduces the whole trajectory bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{DualNnParams, SimNnParams};
use crate::cohort::{Cohort, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{
    pair_loss_backward, pair_loss_terms, update_momentum_weights, MomentumState,
};
use crate::metrics::set_ddi_rate;
use crate::model::{backward_pair, forward_pair, ModelParams};
use crate::numerics::{Activation, FfnParams, Matrix, ParamMatrix, ParamSet, ParamVector};

/// Smoothing factor of the squared-gradient accumulator.
pub const RMSPROP_ALPHA: f64 = 0.99;
/// Denominator guard of the optimizer step.
pub const RMSPROP_EPS: f64 = 1e-8;

/// Everything that configures a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Embedding size s.
    pub embed_dim: usize,
    /// Hidden units of the prescription network.
    pub hidden_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Visit-balance coefficient, also the momentum-controller step size.
    pub gamma: f64,
    /// Interaction-rate gate threshold of the momentum controller.
    pub eta: f64,
    /// Fixed loss weights (reconstruction, interaction, cross-entropy,
    /// margin), used verbatim unless the momentum controller is enabled.
    pub lambda: [f64; 4],
    /// Adapt the loss weights with the momentum controller instead of
    /// keeping them fixed.
    pub mbl_enabled: bool,
    pub seed: u64,
    /// Ablations: drop the reconstruction / margin / interaction term.
    pub no_rec: bool,
    pub no_multi: bool,
    pub no_ddi: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embed_dim: 64,
            hidden_dim: 256,
            lr: 2e-4,
            weight_decay: 1e-5,
            epochs: 50,
            gamma: 0.75,
            eta: 0.08,
            lambda: [0.25; 4],
            mbl_enabled: false,
            seed: 7,
            no_rec: false,
            no_multi: false,
            no_ddi: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return err("embed_dim and hidden_dim must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return err(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.epochs == 0 {
            return err("epochs must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return err(format!("eta must be in [0, 1], got {}", self.eta));
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return err(format!(
                "loss weights must be non-negative, got {:?}",
                self.lambda
            ));
        }
        Ok(())
    }

    /// The fixed loss weights with ablation flags applied.
    pub fn effective_lambda(&self) -> [f64; 4] {
        let mut l = self.lambda;
        if self.no_rec {
            l[0] = 0.0;
        }
        if self.no_ddi {
            l[1] = 0.0;
        }
        if self.no_multi {
            l[3] = 0.0;
        }
        l
    }

    /// Masks the ablated entries of an adapted weight vector.
    fn mask_ablations(&self, mut l: [f64; 4]) -> [f64; 4] {
        if self.no_rec {
            l[0] = 0.0;
        }
        if self.no_ddi {
            l[1] = 0.0;
        }
        if self.no_multi {
            l[3] = 0.0;
        }
        l
    }

    /// Key=value tokens in a fixed order, used by the checkpoint header.
    fn tokens(&self) -> Vec<(&'static str, String)> {
        vec![
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("gamma", self.gamma.to_string()),
            ("eta", self.eta.to_string()),
            (
                "lambda",
                format!(
                    "{},{},{},{}",
                    self.lambda[0], self.lambda[1], self.lambda[2], self.lambda[3]
                ),
            ),
            ("mbl", self.mbl_enabled.to_string()),
            ("seed", self.seed.to_string()),
            ("no_rec", self.no_rec.to_string()),
            ("no_multi", self.no_multi.to_string()),
            ("no_ddi", self.no_ddi.to_string()),
        ]
    }

    /// Applies one `key=value` setting; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
        }
        match key {
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "lambda" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 4 {
                    return Err(Error::Config(format!(
                        "lambda needs 4 comma-separated values, got {value:?}"
                    )));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.lambda[i] = parse("lambda", p)?;
                }
            }
            "mbl" => self.mbl_enabled = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "no_rec" => self.no_rec = parse(key, value)?,
            "no_multi" => self.no_multi = parse(key, value)?,
            "no_ddi" => self.no_ddi = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown hyperparameter {key:?}"))),
        }
        Ok(())
    }
}

/// Per-epoch record of mean pair losses (and the weight vector in force at
/// the end of the epoch).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean weighted total loss per visit pair.
    pub total: f64,
    /// Mean raw term values per visit pair.
    pub rec: f64,
    pub ddi: f64,
    pub bce: f64,
    pub multi: f64,
    /// Mean total loss on the validation cohort (0 when it is empty).
    pub val_total: f64,
    pub lambda: [f64; 4],
}

/// RMSprop accumulator state, one entry per flattened parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    v: Vec<f64>,
}

impl OptState {
    pub fn new(n_params: usize) -> Self {
        OptState {
            v: vec![0.0; n_params],
        }
    }
}

/// One RMSprop step over every parameter:
/// `v ← α v + (1−α) g²`, `θ ← θ − lr·g/(√v + eps) − lr·wd·θ`.
/// Gradients are read from the parameter set and must be finite.
pub fn rmsprop_step<P: ParamSet + ?Sized>(
    params: &mut P,
    opt: &mut OptState,
    lr: f64,
    weight_decay: f64,
    alpha: f64,
    eps: f64,
) -> Result<()> {
    let n_params = params.flat_len();
    if n_params != opt.v.len() {
        return Err(Error::Shape(format!(
            "optimizer state has {} entries, parameters have {n_params}",
            opt.v.len()
        )));
    }
    let mut offset = 0;
    for (values, grads) in params.tensors() {
        for i in 0..values.len() {
            let g = grads[i];
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient {g}")));
            }
            let v = &mut opt.v[offset + i];
            *v = alpha * *v + (1.0 - alpha) * g * g;
            values[i] -= lr * g / (v.sqrt() + eps) + lr * weight_decay * values[i];
        }
        offset += values.len();
    }
    Ok(())
}

/// Parameters stored in a checkpoint, tagged by model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointParams {
    Micron(ModelParams),
    Sim(SimNnParams),
    Dual(DualNnParams),
}

impl CheckpointParams {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CheckpointParams::Micron(_) => "micron",
            CheckpointParams::Sim(_) => "simnn",
            CheckpointParams::Dual(_) => "dualnn",
        }
    }

    /// The main-model parameters, or an error for a comparison-model file.
    pub fn as_micron(&self) -> Result<&ModelParams> {
        match self {
            CheckpointParams::Micron(p) => Ok(p),
            other => Err(Error::Checkpoint(format!(
                "expected a main-model checkpoint, found kind {}",
                other.kind_name()
            ))),
        }
    }
}

/// A trained model with its provenance: hyperparameters, vocabulary sizes,
/// and the per-epoch training log.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: CheckpointParams,
    pub hyperparams: Hyperparams,
    pub vocabulary: Vocabulary,
    pub epoch_log: Vec<EpochLog>,
}

/// Trains the main model. `val_cohort` is never trained on; its mean total
/// loss is recorded per epoch (pass an empty cohort to skip).
pub fn train(train_cohort: &Cohort, val_cohort: &Cohort, hp: &Hyperparams) -> Result<Checkpoint> {
    hp.validate()?;
    if train_cohort.patients.is_empty() {
        return Err(Error::Config("training cohort has no patients".into()));
    }
    let vocab = train_cohort.vocabulary;
    if train_cohort.ddi.n_med() != vocab.n_med {
        return Err(Error::Shape(format!(
            "interaction matrix covers {} medications, vocabulary has {}",
            train_cohort.ddi.n_med(),
            vocab.n_med
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let init_seed = rng.gen::<u64>();
    let mut params = ModelParams::init(
        vocab.n_diag,
        vocab.n_proc,
        vocab.n_med,
        hp.embed_dim,
        hp.hidden_dim,
        init_seed,
    )?;
    let mut opt = OptState::new(params.flat_len());
    let mut mbl = MomentumState::new(hp.eta)?;
    let fixed_lambda = hp.effective_lambda();

    let mut order: Vec<usize> = (0..train_cohort.patients.len()).collect();
    let mut epoch_log = Vec::with_capacity(hp.epochs);

    for epoch in 1..=hp.epochs {
        if hp.mbl_enabled {
            mbl.reset_means();
        }
        order.shuffle(&mut rng);
        let mut sums = (0.0, [0.0f64; 4]); // (total, term summaries)
        let mut n_pairs = 0usize;

        for &pi in &order {
            let patient = &train_cohort.patients[pi];
            // Numeric failures get stamped with where training stood.
            let here = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!(
                    "{m} at epoch {epoch}, patient {}",
                    patient.patient_id
                )),
                other => other,
            };
            params.zero_grad();
            let mut batch_total = 0.0;

            for w in patient.visits.windows(2) {
                let fwd = forward_pair(&params, &w[0], &w[1])?;
                let t_prev = crate::cohort::multi_hot(&w[0].medications, vocab.n_med);
                let t_cur = crate::cohort::multi_hot(&w[1].medications, vocab.n_med);

                let lambda = if hp.mbl_enabled {
                    let terms = pair_loss_terms(
                        &fwd.m_prev,
                        &fwd.m_cur,
                        &fwd.u,
                        &t_prev,
                        &t_cur,
                        &train_cohort.ddi,
                    )
                    .map_err(here)?;
                    // Gate input: interaction rate of the currently
                    // predicted set (probability >= 1/2, i.e. raw score
                    // >= 0) — calibrated thresholds don't exist yet.
                    let predicted: Vec<usize> = (0..vocab.n_med)
                        .filter(|&i| fwd.m_cur[i] >= 0.0)
                        .collect();
                    let rate = set_ddi_rate(&predicted, &train_cohort.ddi);
                    let eff =
                        update_momentum_weights(&mut mbl, &terms.summary(hp.gamma), hp.gamma, rate)
                            .map_err(here)?;
                    hp.mask_ablations(eff)
                } else {
                    fixed_lambda
                };

                let (terms, dm_prev, dm_cur, du) = pair_loss_backward(
                    &fwd,
                    &t_prev,
                    &t_cur,
                    &train_cohort.ddi,
                    &lambda,
                    hp.gamma,
                )
                .map_err(here)?;
                backward_pair(&mut params, &fwd, &dm_prev, &dm_cur, &du);

                let total = terms.total(&lambda, hp.gamma);
                batch_total += total;
                sums.0 += total;
                let summary = terms.summary(hp.gamma);
                for i in 0..4 {
                    sums.1[i] += summary[i];
                }
                n_pairs += 1;
            }

            if !batch_total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, patient {}",
                    patient.patient_id
                )));
            }
            rmsprop_step(
                &mut params,
                &mut opt,
                hp.lr,
                hp.weight_decay,
                RMSPROP_ALPHA,
                RMSPROP_EPS,
            )
            .map_err(here)?;
        }

        let lambda_now = if hp.mbl_enabled {
            hp.mask_ablations(mbl.lambda)
        } else {
            fixed_lambda
        };
        let val_total = mean_total_loss(&params, val_cohort, &lambda_now, hp.gamma)?;
        let denom = n_pairs.max(1) as f64;
        log::info!(
            "epoch {epoch}: train {:.6}, validation {:.6}",
            sums.0 / denom,
            val_total
        );
        epoch_log.push(EpochLog {
            epoch,
            total: sums.0 / denom,
            rec: sums.1[0] / denom,
            ddi: sums.1[1] / denom,
            bce: sums.1[2] / denom,
            multi: sums.1[3] / denom,
            val_total,
            lambda: lambda_now,
        });
    }

    Ok(Checkpoint {
        params: CheckpointParams::Micron(params),
        hyperparams: hp.clone(),
        vocabulary: vocab,
        epoch_log,
    })
}

/// Mean weighted pair loss over a cohort, without touching gradients.
fn mean_total_loss(
    params: &ModelParams,
    cohort: &Cohort,
    lambda: &[f64; 4],
    gamma: f64,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for patient in &cohort.patients {
        for w in patient.visits.windows(2) {
            let fwd = forward_pair(params, &w[0], &w[1])?;
            let t_prev = crate::cohort::multi_hot(&w[0].medications, cohort.vocabulary.n_med);
            let t_cur = crate::cohort::multi_hot(&w[1].medications, cohort.vocabulary.n_med);
            let terms =
                pair_loss_terms(&fwd.m_prev, &fwd.m_cur, &fwd.u, &t_prev, &t_cur, &cohort.ddi)?;
            sum += terms.total(lambda, gamma);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

// --- checkpoint text format -------------------------------------------------

const CHECKPOINT_VERSION: &str = "checkpoint-v1";

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    writeln!(out, "tensor {name} {rows} {cols}").expect("write to string");
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    write_tensor(out, name, m.rows(), m.cols(), m.data());
}

fn write_ffn(out: &mut String, prefix: &str, ffn: &FfnParams) {
    write_matrix(out, &format!("{prefix}w1"), &ffn.w1.value);
    write_tensor(out, &format!("{prefix}b1"), 1, ffn.b1.value.len(), &ffn.b1.value);
    write_matrix(out, &format!("{prefix}w2"), &ffn.w2.value);
    write_tensor(out, &format!("{prefix}b2"), 1, ffn.b2.value.len(), &ffn.b2.value);
}

/// Writes a checkpoint as versioned UTF-8 text. Floats are rendered with
/// the shortest decimal form that round-trips, so a load reproduces every
/// parameter bit for bit.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_VERSION} kind={}", ckpt.params.kind_name())
        .expect("write to string");
    writeln!(
        out,
        "vocab diag={} proc={} med={}",
        ckpt.vocabulary.n_diag, ckpt.vocabulary.n_proc, ckpt.vocabulary.n_med
    )
    .expect("write to string");
    let mut hyper = String::from("hyper");
    for (k, v) in ckpt.hyperparams.tokens() {
        hyper.push(' ');
        hyper.push_str(k);
        hyper.push('=');
        hyper.push_str(&v);
    }
    out.push_str(&hyper);
    out.push('\n');

    let (base, extra_head) = match &ckpt.params {
        CheckpointParams::Micron(p) => (p, None),
        CheckpointParams::Sim(p) => (&p.base, None),
        CheckpointParams::Dual(p) => (&p.base, Some(&p.remove_head)),
    };
    for (values, _) in base.clone().tensors() {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
    }
    writeln!(out, "activation {}", base.ffn.activation.name()).expect("write to string");

    writeln!(out, "epoch_log {}", ckpt.epoch_log.len()).expect("write to string");
    for e in &ckpt.epoch_log {
        writeln!(
            out,
            "epoch {} total={} rec={} ddi={} bce={} multi={} val={} lambda={},{},{},{}",
            e.epoch,
            e.total,
            e.rec,
            e.ddi,
            e.bce,
            e.multi,
            e.val_total,
            e.lambda[0],
            e.lambda[1],
            e.lambda[2],
            e.lambda[3]
        )
        .expect("write to string");
    }

    write_matrix(&mut out, "e_d", &base.e_d.value);
    write_matrix(&mut out, "e_p", &base.e_p.value);
    write_matrix(&mut out, "w_h", &base.w_h.value);
    write_ffn(&mut out, "", &base.ffn);
    if let Some(head) = extra_head {
        write_ffn(&mut out, "r", head);
    }
    out.push_str("end\n");
    std::fs::write(path, out)?;
    Ok(())
}

struct CheckpointReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> CheckpointReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn expect_kv(&mut self, token: &str, key: &str, line: usize) -> Result<String> {
        token
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| {
                Error::Checkpoint(format!("line {line}: expected {key}=<value>, got {token:?}"))
            })
    }

    fn read_tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (line_no, header) = self.next_line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(Error::Checkpoint(format!(
                "line {line_no}: expected tensor header, got {header:?}"
            )));
        }
        if parts[1] != name {
            return Err(Error::Checkpoint(format!(
                "line {line_no}: expected tensor {name}, found {}",
                parts[1]
            )));
        }
        let got_rows: usize = parts[2]
            .parse()
            .map_err(|_| Error::Checkpoint(format!("line {line_no}: bad row count")))?;
        let got_cols: usize = parts[3]
            .parse()
            .map_err(|_| Error::Checkpoint(format!("line {line_no}: bad column count")))?;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} is {got_rows}x{got_cols}, expected {rows}x{cols}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line_no, row) = self.next_line()?;
            let mut count = 0;
            for tok in row.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::Checkpoint(format!("line {line_no}: invalid number {tok:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::Checkpoint(format!(
                        "line {line_no}: non-finite parameter"
                    )));
                }
                data.push(v);
                count += 1;
            }
            if count != cols {
                return Err(Error::Checkpoint(format!(
                    "line {line_no}: row has {count} entries, expected {cols}"
                )));
            }
        }
        Ok(data)
    }

    fn read_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamMatrix> {
        let data = self.read_tensor(name, rows, cols)?;
        let mut m = Matrix::zeros(rows, cols);
        m.data_mut().copy_from_slice(&data);
        Ok(ParamMatrix::new(m))
    }

    fn read_ffn(
        &mut self,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
    ) -> Result<FfnParams> {
        let w1 = self.read_matrix(&format!("{prefix}w1"), hidden, input)?;
        let b1 = ParamVector::new(self.read_tensor(&format!("{prefix}b1"), 1, hidden)?);
        let w2 = self.read_matrix(&format!("{prefix}w2"), output, hidden)?;
        let b2 = ParamVector::new(self.read_tensor(&format!("{prefix}b2"), 1, output)?);
        Ok(FfnParams {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. Rejects unknown
/// versions and kinds, shape inconsistencies, and truncated files.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let mut r = CheckpointReader {
        lines: text.lines().enumerate(),
    };

    let (line_no, header) = r.next_line()?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.first().copied() != Some(CHECKPOINT_VERSION) {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {:?} (this build reads {CHECKPOINT_VERSION})",
            tokens.first().copied().unwrap_or("")
        )));
    }
    if tokens.len() != 2 {
        return Err(Error::Checkpoint(format!(
            "line {line_no}: header needs a kind field"
        )));
    }
    let kind = r.expect_kv(tokens[1], "kind", line_no)?;

    let (line_no, vocab_line) = r.next_line()?;
    let tokens: Vec<&str> = vocab_line.split_whitespace().collect();
    if tokens.len() != 4 || tokens[0] != "vocab" {
        return Err(Error::Checkpoint(format!("line {line_no}: expected vocab line")));
    }
    let parse_usize = |s: String, line: usize| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Checkpoint(format!("line {line}: invalid count {s:?}")))
    };
    let n_diag = parse_usize(r.expect_kv(tokens[1], "diag", line_no)?, line_no)?;
    let n_proc = parse_usize(r.expect_kv(tokens[2], "proc", line_no)?, line_no)?;
    let n_med = parse_usize(r.expect_kv(tokens[3], "med", line_no)?, line_no)?;
    let vocabulary = Vocabulary {
        n_diag,
        n_proc,
        n_med,
    };

    let (line_no, hyper_line) = r.next_line()?;
    let mut parts = hyper_line.split_whitespace();
    if parts.next() != Some("hyper") {
        return Err(Error::Checkpoint(format!("line {line_no}: expected hyper line")));
    }
    let mut hyperparams = Hyperparams::default();
    for token in parts {
        let (key, value) = token.split_once('=').ok_or_else(|| {
            Error::Checkpoint(format!("line {line_no}: expected key=value, got {token:?}"))
        })?;
        hyperparams
            .apply(key, value)
            .map_err(|e| Error::Checkpoint(format!("line {line_no}: {e}")))?;
    }

    let (line_no, act_line) = r.next_line()?;
    let activation = act_line
        .strip_prefix("activation ")
        .and_then(Activation::from_name)
        .ok_or_else(|| Error::Checkpoint(format!("line {line_no}: bad activation line")))?;

    let (line_no, log_line) = r.next_line()?;
    let n_epochs: usize = log_line
        .strip_prefix("epoch_log ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("line {line_no}: bad epoch_log line")))?;
    let mut epoch_log = Vec::with_capacity(n_epochs);
    for _ in 0..n_epochs {
        let (line_no, line) = r.next_line()?;
        epoch_log.push(parse_epoch_line(line, line_no)?);
    }

    let s = hyperparams.embed_dim;
    let hidden = hyperparams.hidden_dim;
    let head_out = match kind.as_str() {
        "micron" | "dualnn" => n_med,
        "simnn" => 3 * n_med,
        other => {
            return Err(Error::Checkpoint(format!("unknown model kind {other:?}")));
        }
    };
    let e_d = r.read_matrix("e_d", s, n_diag)?;
    let e_p = r.read_matrix("e_p", s, n_proc)?;
    let w_h = r.read_matrix("w_h", s, 2 * s)?;
    let ffn = r.read_ffn("", s, hidden, head_out, activation)?;
    let base = ModelParams { e_d, e_p, w_h, ffn };

    let params = match kind.as_str() {
        "micron" => CheckpointParams::Micron(base),
        "simnn" => CheckpointParams::Sim(SimNnParams::new(base, n_med)?),
        "dualnn" => {
            let remove_head = r.read_ffn("r", s, hidden, n_med, activation)?;
            CheckpointParams::Dual(DualNnParams::new(base, remove_head)?)
        }
        _ => unreachable!("kind validated above"),
    };

    let (line_no, end) = r.next_line()?;
    if end.trim() != "end" {
        return Err(Error::Checkpoint(format!(
            "line {line_no}: expected end marker, got {end:?}"
        )));
    }

    Ok(Checkpoint {
        params,
        hyperparams,
        vocabulary,
        epoch_log,
    })
}

fn parse_epoch_line(line: &str, line_no: usize) -> Result<EpochLog> {
    let bad = |m: &str| Error::Checkpoint(format!("line {line_no}: {m} in epoch record"));
    let mut parts = line.split_whitespace();
    if parts.next() != Some("epoch") {
        return Err(bad("missing epoch keyword"));
    }
    let epoch: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad epoch number"))?;
    let mut log = EpochLog {
        epoch,
        total: 0.0,
        rec: 0.0,
        ddi: 0.0,
        bce: 0.0,
        multi: 0.0,
        val_total: 0.0,
        lambda: [0.0; 4],
    };
    for token in parts {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad("expected key=value"))?;
        let parse_f = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| bad("invalid number"))
        };
        match key {
            "total" => log.total = parse_f(value)?,
            "rec" => log.rec = parse_f(value)?,
            "ddi" => log.ddi = parse_f(value)?,
            "bce" => log.bce = parse_f(value)?,
            "multi" => log.multi = parse_f(value)?,
            "val" => log.val_total = parse_f(value)?,
            "lambda" => {
                let vs: Vec<&str> = value.split(',').collect();
                if vs.len() != 4 {
                    return Err(bad("lambda needs 4 values"));
                }
                for (i, v) in vs.iter().enumerate() {
                    log.lambda[i] = parse_f(v)?;
                }
            }
            _ => return Err(bad("unknown field")),
        }
    }
    Ok(log)
}
