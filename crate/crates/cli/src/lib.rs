//! Command-line front end for the medication-change prediction pipeline.
//!
//! Six subcommands cover the full workflow: `generate` writes a synthetic
//! cohort, `train` fits the model (or a comparison model) on the train
//! split, `calibrate` picks the decision thresholds on the validation
//! split, `evaluate` scores rollouts on the test split, `predict` dumps
//! per-visit change predictions as JSON, and `stats` reports
//! consecutive-visit overlap histograms of a cohort.
//!
//! Conventions shared by every subcommand:
//! - deterministic output given identical flags and seeds;
//! - errors printed to standard error as `ERROR(<category>): <message>`;
//! - exit code 0 on success, 1 on usage/configuration errors, 2 on
//!   data or numeric errors;
//! - `--format json` carries exactly the numbers the table shows;
//! - the resolved configuration is echoed into the output for provenance
//!   (tables as `#` comment lines, JSON as a `config` object).

use std::ffi::OsString;
use std::fmt::Display;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use micron_core::baselines::{baseline_rollout, train_baseline, BaselineKind};
use micron_core::calibration::{
    load_thresholds, save_thresholds, select_thresholds, Thresholds,
};
use micron_core::cohort::{
    generate_cohort, load_cohort, save_cohort, split_cohort, Cohort, GeneratorConfig,
};
use micron_core::inference::{rollout, Rollout, RolloutMode, RolloutStep};
use micron_core::metrics::{
    consecutive_jaccard_stats, evaluate, JaccardHistogram, MetricsReport, Normalization,
};
use micron_core::trainer::{load_checkpoint, save_checkpoint, train, Checkpoint, Hyperparams};
use micron_core::{Error, Result};

/// Runs the command line given the full argument vector (program name
/// first) and returns the process exit code: 0 success, 1 usage error,
/// 2 data or numeric error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("ERROR(usage): {e}");
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR({}): {e}", e.category());
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "micron",
    version,
    about = "Medication change prediction on synthetic EHR cohorts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort file
    Generate(GenerateArgs),
    /// Train a model on the train split of a cohort
    Train(Box<TrainArgs>),
    /// Select decision thresholds on the validation split
    Calibrate(CalibrateArgs),
    /// Score predicted medication changes on the test split
    Evaluate(EvaluateArgs),
    /// Emit per-visit change predictions as JSON
    Predict(PredictArgs),
    /// Report consecutive-visit overlap histograms of a cohort
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    /// Residual-update change model
    Micron,
    /// Per-medication three-way classifier on the current visit
    Simnn,
    /// Separate addition and removal heads on the current visit
    Dualnn,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Micron => "micron",
            ModelKind::Simnn => "simnn",
            ModelKind::Dualnn => "dualnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    Json,
}

impl OutputFormat {
    fn name(self) -> &'static str {
        match self {
            OutputFormat::Table => "table",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Recompute both visit representations per step
    Dense,
    /// Update the residual from the sparse code difference
    Smart,
}

impl Mode {
    fn to_core(self) -> RolloutMode {
        match self {
            Mode::Dense => RolloutMode::Dense,
            Mode::Smart => RolloutMode::Smart,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Norm {
    /// Divide per-patient sums by the full visit count
    Full,
    /// Divide per-patient sums by the number of evaluated visits
    Evaluated,
}

impl Norm {
    fn to_core(self) -> Normalization {
        match self {
            Norm::Full => Normalization::FullVisitCount,
            Norm::Evaluated => Normalization::EvaluatedVisits,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Output cohort file
    #[arg(short, long)]
    output: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of patients
    #[arg(long)]
    patients: Option<usize>,
    /// Minimum visits per patient
    #[arg(long)]
    visits_min: Option<usize>,
    /// Maximum visits per patient
    #[arg(long)]
    visits_max: Option<usize>,
    /// Diagnosis vocabulary size
    #[arg(long)]
    n_diag: Option<usize>,
    /// Procedure vocabulary size
    #[arg(long)]
    n_proc: Option<usize>,
    /// Medication vocabulary size
    #[arg(long)]
    n_med: Option<usize>,
    /// Diagnosis codes drawn per visit
    #[arg(long)]
    diags_per_visit: Option<usize>,
    /// Procedure codes drawn per visit
    #[arg(long)]
    procs_per_visit: Option<usize>,
    /// Probability a diagnosis persists into the next visit
    #[arg(long)]
    diag_persistence: Option<f64>,
    /// Medications implied by each diagnosis
    #[arg(long)]
    med_rule_fanout: Option<usize>,
    /// Probability a medication is carried forward without its diagnosis
    #[arg(long)]
    med_carry: Option<f64>,
    /// Per-medication drop probability and spurious-add rate
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Expected fraction of interacting medication pairs
    #[arg(long)]
    ddi_density: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    /// Train/validation/test fractions (must sum to 1)
    #[arg(long, default_value = "0.6,0.2,0.2")]
    split_ratios: String,
    /// Seed of the patient shuffle behind the split
    #[arg(long, default_value_t = 17)]
    split_seed: u64,
}

impl SplitArgs {
    fn split(&self, cohort: &Cohort) -> Result<(Cohort, Cohort, Cohort)> {
        let ratios = parse_triple(&self.split_ratios, "--split-ratios")?;
        split_cohort(cohort, ratios, self.split_seed)
    }

    fn echo(&self, echo: &mut Echo) {
        echo.push("split_ratios", &self.split_ratios);
        echo.push("split_seed", self.split_seed);
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Input cohort file
    #[arg(short, long)]
    input: PathBuf,
    /// Output checkpoint file (single-seed runs)
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Config file of key=value hyperparameter lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model to train
    #[arg(long, value_enum, default_value_t = ModelKind::Micron)]
    model: ModelKind,
    /// Embedding size
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Hidden units of the prescription network
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// L2 weight decay
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Visit-balance coefficient (also the loss-weight controller step)
    #[arg(long)]
    gamma: Option<f64>,
    /// Interaction-rate gate of the loss-weight controller
    #[arg(long)]
    eta: Option<f64>,
    /// Fixed loss weights as four comma-separated values
    #[arg(long)]
    lambda: Option<String>,
    /// Adapt loss weights with the momentum controller (true/false)
    #[arg(long)]
    mbl: Option<bool>,
    /// Initialization and shuffle seed
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the reconstruction loss term
    #[arg(long)]
    no_rec: bool,
    /// Drop the margin loss term
    #[arg(long)]
    no_multi: bool,
    /// Drop the interaction loss term
    #[arg(long)]
    no_ddi: bool,
    /// Comma-separated seeds: run one train-calibrate-evaluate pipeline
    /// per seed and report mean and standard deviation per metric
    #[arg(long)]
    seeds: Option<String>,
    /// Print one JSON object per epoch after training
    #[arg(long)]
    log_json: bool,
    #[command(flatten)]
    split: SplitArgs,
    /// Output format of the run summary
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Input cohort file
    #[arg(short, long)]
    input: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output thresholds sidecar file
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Output format of the threshold report
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input cohort file
    #[arg(short, long)]
    input: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Thresholds sidecar (required for micron checkpoints)
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Score the no-change baseline that repeats the first visit's set
    #[arg(long)]
    copy_forward: bool,
    /// Inference route for micron checkpoints
    #[arg(long, value_enum, default_value_t = Mode::Dense)]
    mode: Mode,
    /// Per-patient metric normalization
    #[arg(long, value_enum, default_value_t = Norm::Full)]
    normalization: Norm,
    #[command(flatten)]
    split: SplitArgs,
    /// Output format of the metrics report
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
    /// Also write the report to this file
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Input cohort file
    #[arg(short, long)]
    input: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Thresholds sidecar (required for micron checkpoints)
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Predict a single patient id instead of the whole cohort
    #[arg(long)]
    patient: Option<u64>,
    /// Inference route for micron checkpoints
    #[arg(long, value_enum, default_value_t = Mode::Dense)]
    mode: Mode,
    /// Also write the JSON to this file
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Input cohort file
    #[arg(short, long)]
    input: PathBuf,
    /// Output format of the histogram report
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
    /// Also write the histogram bins as CSV to this file
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(*a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

// --- resolved-configuration echo ----------------------------------------------

/// Ordered key-value pairs describing the resolved run configuration,
/// echoed into every report for provenance.
#[derive(Default)]
struct Echo(Vec<(String, String)>);

impl Echo {
    fn push(&mut self, key: &str, value: impl Display) {
        self.0.push((key.to_string(), value.to_string()));
    }

    fn table_header(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in &self.0 {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

// --- shared helpers ------------------------------------------------------------

fn require_input(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} file {} does not exist",
            path.display()
        )))
    }
}

fn parse_triple(s: &str, flag: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "{flag} needs three comma-separated values, got {s:?}"
        )));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{flag}: invalid number {p:?}")))?;
    }
    Ok((out[0], out[1], out[2]))
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--seeds: invalid seed {p:?}")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("--seeds needs at least one seed".into()));
    }
    Ok(seeds)
}

fn to_json_string<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data structures always serialize")
}

/// Prints a report to standard output and mirrors it to a file if asked.
fn emit(report: &str, output: Option<&PathBuf>) -> Result<()> {
    print!("{report}");
    if let Some(path) = output {
        fs::write(path, report)?;
    }
    Ok(())
}

/// Loads a cohort after checking the path, so a missing file is a
/// configuration error rather than an opaque I/O failure.
fn read_cohort(path: &Path) -> Result<Cohort> {
    require_input(path, "cohort")?;
    load_cohort(path)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_input(path, "checkpoint")?;
    load_checkpoint(path)
}

/// Rolls out every patient of a cohort under the right engine for the
/// checkpoint kind. Micron checkpoints need thresholds; comparison
/// models must not get any.
fn rollout_cohort(
    checkpoint: &Checkpoint,
    thresholds: Option<&Thresholds>,
    cohort: &Cohort,
    mode: RolloutMode,
) -> Result<Vec<Rollout>> {
    match (checkpoint.params.kind_name(), thresholds) {
        ("micron", Some(th)) => cohort
            .patients
            .iter()
            .map(|p| rollout(checkpoint, th, p, mode))
            .collect(),
        ("micron", None) => Err(Error::Config(
            "micron checkpoints need a thresholds sidecar; run `micron calibrate` \
             and pass --thresholds"
                .into(),
        )),
        (_, None) => cohort
            .patients
            .iter()
            .map(|p| baseline_rollout(checkpoint, p))
            .collect(),
        (kind, Some(_)) => Err(Error::Config(format!(
            "--thresholds only applies to micron checkpoints, not {kind}"
        ))),
    }
}

// --- copy-forward baseline -----------------------------------------------------

/// The no-change baseline: every visit keeps the first visit's medication
/// set, predicting no additions and no removals. Under these empty
/// predictions the addition error collapses to the mean size of the true
/// addition sets.
pub fn copy_forward_baseline(cohort: &Cohort) -> Vec<Rollout> {
    cohort
        .patients
        .iter()
        .map(|p| Rollout {
            patient_id: p.patient_id,
            steps: (1..p.visits.len())
                .map(|_| RolloutStep {
                    additions: Vec::new(),
                    removals: Vec::new(),
                    predicted_set: p.visits[0].medications.clone(),
                })
                .collect(),
        })
        .collect()
}

// --- generate ---------------------------------------------------------------------

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut config = GeneratorConfig::default();
    macro_rules! apply {
        ($($field:ident <- $flag:ident),* $(,)?) => {
            $(if let Some(v) = a.$flag { config.$field = v; })*
        };
    }
    apply!(
        n_patients <- patients,
        visits_min <- visits_min,
        visits_max <- visits_max,
        n_diag <- n_diag,
        n_proc <- n_proc,
        n_med <- n_med,
        diags_per_visit <- diags_per_visit,
        procs_per_visit <- procs_per_visit,
        diag_persistence <- diag_persistence,
        med_rule_fanout <- med_rule_fanout,
        med_carry <- med_carry,
        noise_rate <- noise_rate,
        ddi_density <- ddi_density,
    );
    let cohort = generate_cohort(&config, a.seed)?;
    save_cohort(&cohort, &a.output)?;
    println!(
        "wrote {} patients ({} visits) to {}",
        cohort.patients.len(),
        cohort.total_visits(),
        a.output.display()
    );
    Ok(())
}

// --- train -----------------------------------------------------------------------

/// Resolves hyperparameters with flag > config file > default precedence.
fn resolve_hyperparams(a: &TrainArgs) -> Result<Hyperparams> {
    let mut hp = Hyperparams::default();
    if let Some(path) = &a.config {
        require_input(path, "config")?;
        apply_config_text(&mut hp, &fs::read_to_string(path)?)?;
    }
    if let Some(v) = a.embed_dim {
        hp.embed_dim = v;
    }
    if let Some(v) = a.hidden_dim {
        hp.hidden_dim = v;
    }
    if let Some(v) = a.lr {
        hp.lr = v;
    }
    if let Some(v) = a.weight_decay {
        hp.weight_decay = v;
    }
    if let Some(v) = a.epochs {
        hp.epochs = v;
    }
    if let Some(v) = a.gamma {
        hp.gamma = v;
    }
    if let Some(v) = a.eta {
        hp.eta = v;
    }
    if let Some(s) = &a.lambda {
        hp.apply("lambda", s)?;
    }
    if let Some(v) = a.mbl {
        hp.mbl_enabled = v;
    }
    if let Some(v) = a.seed {
        hp.seed = v;
    }
    if a.no_rec {
        hp.no_rec = true;
    }
    if a.no_multi {
        hp.no_multi = true;
    }
    if a.no_ddi {
        hp.no_ddi = true;
    }
    hp.validate()?;
    Ok(hp)
}

/// Applies `key=value` lines to the hyperparameters. Blank lines and `#`
/// comments are skipped; unknown keys are rejected.
fn apply_config_text(hp: &mut Hyperparams, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "config line {}: expected key=value, got {raw:?}",
                i + 1
            ))
        })?;
        hp.apply(key.trim(), value.trim())?;
    }
    Ok(())
}

fn train_any(
    model: ModelKind,
    train_split: &Cohort,
    val_split: &Cohort,
    hp: &Hyperparams,
) -> Result<Checkpoint> {
    match model {
        ModelKind::Micron => train(train_split, val_split, hp),
        ModelKind::Simnn => train_baseline(BaselineKind::SimNn, train_split, hp),
        ModelKind::Dualnn => train_baseline(BaselineKind::DualNn, train_split, hp),
    }
}

fn echo_hyperparams(echo: &mut Echo, hp: &Hyperparams) {
    echo.push("embed_dim", hp.embed_dim);
    echo.push("hidden_dim", hp.hidden_dim);
    echo.push("lr", hp.lr);
    echo.push("weight_decay", hp.weight_decay);
    echo.push("epochs", hp.epochs);
    echo.push("gamma", hp.gamma);
    echo.push("eta", hp.eta);
    echo.push(
        "lambda",
        format!(
            "{},{},{},{}",
            hp.lambda[0], hp.lambda[1], hp.lambda[2], hp.lambda[3]
        ),
    );
    echo.push("mbl", hp.mbl_enabled);
    echo.push("seed", hp.seed);
    echo.push("no_rec", hp.no_rec);
    echo.push("no_multi", hp.no_multi);
    echo.push("no_ddi", hp.no_ddi);
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let hp = resolve_hyperparams(&a)?;
    let cohort = read_cohort(&a.input)?;
    let (train_split, val_split, test_split) = a.split.split(&cohort)?;

    if let Some(seeds) = &a.seeds {
        if a.output.is_some() {
            return Err(Error::Config(
                "--output applies to single runs; drop --seeds to save a checkpoint".into(),
            ));
        }
        if a.log_json {
            return Err(Error::Config(
                "--log-json applies to single runs, not --seeds sweeps".into(),
            ));
        }
        let seeds = parse_seed_list(seeds)?;
        return run_sweep(&a, &hp, seeds, &train_split, &val_split, &test_split);
    }

    let output = a.output.as_ref().ok_or_else(|| {
        Error::Config("train needs --output to save the checkpoint".into())
    })?;
    let checkpoint = train_any(a.model, &train_split, &val_split, &hp)?;
    save_checkpoint(&checkpoint, output)?;
    if a.log_json {
        for entry in &checkpoint.epoch_log {
            println!("{}", to_json_string(entry));
        }
    }

    let mut echo = Echo::default();
    echo.push("subcommand", "train");
    echo.push("input", a.input.display());
    echo.push("output", output.display());
    echo.push("model", a.model.name());
    a.split.echo(&mut echo);
    echo_hyperparams(&mut echo, &hp);

    let last = checkpoint
        .epoch_log
        .last()
        .expect("training always records at least one epoch");
    let report = match a.format {
        OutputFormat::Table => {
            let mut s = echo.table_header();
            let _ = writeln!(s, "{:<18} {}", "checkpoint", output.display());
            let _ = writeln!(s, "{:<18} {}", "epochs", checkpoint.epoch_log.len());
            let _ = writeln!(s, "{:<18} {}", "final_train_loss", last.total);
            let _ = writeln!(s, "{:<18} {}", "final_val_loss", last.val_total);
            s
        }
        OutputFormat::Json => {
            let value = json!({
                "config": echo.to_json(),
                "checkpoint": output.display().to_string(),
                "epochs": checkpoint.epoch_log,
            });
            format!("{value}\n")
        }
    };
    emit(&report, None)
}

const SWEEP_METRICS: [&str; 5] = ["ddi_rate", "jaccard", "f1", "err_add", "err_remove"];

fn metric_values(report: &MetricsReport) -> [f64; 5] {
    [
        report.mean_ddi_rate,
        report.mean_jaccard,
        report.mean_f1,
        report.mean_err_add,
        report.mean_err_remove,
    ]
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One full train-calibrate-evaluate pipeline per seed; reports the
/// per-metric mean and standard deviation across seeds.
fn run_sweep(
    a: &TrainArgs,
    hp: &Hyperparams,
    seeds: Vec<u64>,
    train_split: &Cohort,
    val_split: &Cohort,
    test_split: &Cohort,
) -> Result<()> {
    let mut per_seed: Vec<[f64; 5]> = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let hp_seed = Hyperparams { seed, ..hp.clone() };
        let checkpoint = train_any(a.model, train_split, val_split, &hp_seed)?;
        let thresholds = match a.model {
            ModelKind::Micron => Some(select_thresholds(&checkpoint, val_split)?),
            _ => None,
        };
        let rollouts = rollout_cohort(
            &checkpoint,
            thresholds.as_ref(),
            test_split,
            RolloutMode::Dense,
        )?;
        let report = evaluate(&rollouts, test_split, Normalization::FullVisitCount)?;
        per_seed.push(metric_values(&report));
        log::info!("seed {seed}: f1 {}", report.mean_f1);
    }

    let mut echo = Echo::default();
    echo.push("subcommand", "train");
    echo.push("input", a.input.display());
    echo.push("model", a.model.name());
    echo.push(
        "seeds",
        seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    a.split.echo(&mut echo);
    echo_hyperparams(&mut echo, hp);

    let columns: Vec<(&str, Vec<f64>, f64, f64)> = SWEEP_METRICS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = per_seed.iter().map(|row| row[i]).collect();
            let (mean, std) = mean_std(&values);
            (*name, values, mean, std)
        })
        .collect();

    let report = match a.format {
        OutputFormat::Table => {
            let mut s = echo.table_header();
            let _ = writeln!(s, "{:<12} {:<22} {}", "metric", "mean", "std");
            for (name, _, mean, std) in &columns {
                let _ = writeln!(s, "{name:<12} {mean:<22} {std}");
            }
            s
        }
        OutputFormat::Json => {
            let mut metrics = serde_json::Map::new();
            for (name, values, mean, std) in &columns {
                metrics.insert(
                    name.to_string(),
                    json!({"mean": mean, "std": std, "values": values}),
                );
            }
            let value = json!({
                "config": echo.to_json(),
                "seeds": seeds,
                "metrics": metrics,
            });
            format!("{value}\n")
        }
    };
    emit(&report, None)
}

// --- calibrate -------------------------------------------------------------------

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let checkpoint = read_checkpoint(&a.checkpoint)?;
    let cohort = read_cohort(&a.input)?;
    let (_, val_split, _) = a.split.split(&cohort)?;
    let thresholds = select_thresholds(&checkpoint, &val_split)?;
    save_thresholds(&thresholds, &a.output)?;

    let mut echo = Echo::default();
    echo.push("subcommand", "calibrate");
    echo.push("input", a.input.display());
    echo.push("checkpoint", a.checkpoint.display());
    echo.push("output", a.output.display());
    a.split.echo(&mut echo);

    let report = match a.format {
        OutputFormat::Table => {
            let mut s = echo.table_header();
            let _ = writeln!(s, "{:<8} {}", "delta1", thresholds.delta1);
            let _ = writeln!(s, "{:<8} {}", "delta2", thresholds.delta2);
            s
        }
        OutputFormat::Json => {
            let value = json!({
                "config": echo.to_json(),
                "thresholds": {
                    "delta1": thresholds.delta1,
                    "delta2": thresholds.delta2,
                },
            });
            format!("{value}\n")
        }
    };
    emit(&report, None)
}

// --- evaluate --------------------------------------------------------------------

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cohort = read_cohort(&a.input)?;
    let (_, _, test_split) = a.split.split(&cohort)?;

    let mut echo = Echo::default();
    echo.push("subcommand", "evaluate");
    echo.push("input", a.input.display());

    let rollouts = if a.copy_forward {
        if a.checkpoint.is_some() || a.thresholds.is_some() {
            return Err(Error::Config(
                "--copy-forward is a model-free baseline; drop --checkpoint and \
                 --thresholds"
                    .into(),
            ));
        }
        echo.push("model", "copy-forward");
        copy_forward_baseline(&test_split)
    } else {
        let ckpt_path = a.checkpoint.as_ref().ok_or_else(|| {
            Error::Config("evaluate needs --checkpoint or --copy-forward".into())
        })?;
        let checkpoint = read_checkpoint(ckpt_path)?;
        echo.push("checkpoint", ckpt_path.display());
        echo.push("model", checkpoint.params.kind_name());
        let thresholds = match &a.thresholds {
            Some(path) => {
                require_input(path, "thresholds")?;
                echo.push("thresholds", path.display());
                Some(load_thresholds(path)?)
            }
            None => None,
        };
        rollout_cohort(&checkpoint, thresholds.as_ref(), &test_split, a.mode.to_core())?
    };

    let report = evaluate(&rollouts, &test_split, a.normalization.to_core())?;
    echo.push("mode", a.mode.to_core().name());
    echo.push("normalization", a.normalization.to_core().name());
    a.split.echo(&mut echo);
    echo.push("format", a.format.name());

    let text = match a.format {
        OutputFormat::Table => {
            let mut s = echo.table_header();
            let _ = writeln!(s, "{:<20} {}", "ddi_rate", report.mean_ddi_rate);
            let _ = writeln!(s, "{:<20} {}", "jaccard", report.mean_jaccard);
            let _ = writeln!(s, "{:<20} {}", "f1", report.mean_f1);
            let _ = writeln!(s, "{:<20} {}", "err_add", report.mean_err_add);
            let _ = writeln!(s, "{:<20} {}", "err_remove", report.mean_err_remove);
            let _ = writeln!(s, "{:<20} {}", "n_patients", report.n_patients);
            let _ = writeln!(
                s,
                "{:<20} {}",
                "n_visits_evaluated", report.n_visits_evaluated
            );
            s
        }
        OutputFormat::Json => {
            let value = json!({
                "config": echo.to_json(),
                "report": report,
            });
            format!("{value}\n")
        }
    };
    emit(&text, a.output.as_ref())
}

// --- predict ---------------------------------------------------------------------

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cohort = read_cohort(&a.input)?;
    let checkpoint = read_checkpoint(&a.checkpoint)?;
    let thresholds = match &a.thresholds {
        Some(path) => {
            require_input(path, "thresholds")?;
            Some(load_thresholds(path)?)
        }
        None => None,
    };

    let mut echo = Echo::default();
    echo.push("subcommand", "predict");
    echo.push("input", a.input.display());
    echo.push("checkpoint", a.checkpoint.display());
    if let Some(path) = &a.thresholds {
        echo.push("thresholds", path.display());
    }
    echo.push("model", checkpoint.params.kind_name());
    echo.push("mode", a.mode.to_core().name());

    let rollouts = match a.patient {
        Some(id) => {
            echo.push("patient", id);
            let patient = cohort
                .patients
                .iter()
                .find(|p| p.patient_id == id)
                .ok_or_else(|| {
                    Error::Config(format!("patient {id} is not in the cohort"))
                })?;
            let single = Cohort {
                patients: vec![patient.clone()],
                ..cohort.clone()
            };
            rollout_cohort(&checkpoint, thresholds.as_ref(), &single, a.mode.to_core())?
        }
        None => {
            let mut eligible = cohort.clone();
            let before = eligible.patients.len();
            eligible.patients.retain(|p| p.visits.len() >= 2);
            let skipped = before - eligible.patients.len();
            if skipped > 0 {
                log::warn!("skipped {skipped} patient(s) with fewer than two visits");
            }
            rollout_cohort(&checkpoint, thresholds.as_ref(), &eligible, a.mode.to_core())?
        }
    };

    let value = json!({
        "config": echo.to_json(),
        "rollouts": rollouts,
    });
    emit(&format!("{value}\n"), a.output.as_ref())
}

// --- stats -----------------------------------------------------------------------

fn histogram_text(name: &str, h: &JaccardHistogram) -> String {
    let mut s = format!(
        "{name} consecutive-visit jaccard: mean {} over {} pairs\n",
        h.mean, h.count
    );
    let tallest = h.bins.iter().copied().max().unwrap_or(0).max(1);
    for (i, &count) in h.bins.iter().enumerate() {
        let lo = i as f64 / 20.0;
        let hi = (i + 1) as f64 / 20.0;
        let close = if i + 1 == h.bins.len() { ']' } else { ')' };
        let bar = "#".repeat(count * 40 / tallest);
        let _ = writeln!(s, "  [{lo:.2},{hi:.2}{close} {count:>6} {bar}");
    }
    s
}

fn histogram_csv(diagnosis: &JaccardHistogram, medication: &JaccardHistogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,diagnosis_count,medication_count\n");
    for i in 0..diagnosis.bins.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            i as f64 / 20.0,
            (i + 1) as f64 / 20.0,
            diagnosis.bins[i],
            medication.bins[i]
        );
    }
    s
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let cohort = read_cohort(&a.input)?;
    let stats = consecutive_jaccard_stats(&cohort);

    let mut echo = Echo::default();
    echo.push("subcommand", "stats");
    echo.push("input", a.input.display());
    if let Some(path) = &a.csv {
        echo.push("csv", path.display());
    }

    let report = match a.format {
        OutputFormat::Table => {
            let mut s = echo.table_header();
            s.push_str(&histogram_text("diagnosis", &stats.diagnosis));
            s.push_str(&histogram_text("medication", &stats.medication));
            s
        }
        OutputFormat::Json => {
            let value = json!({
                "config": echo.to_json(),
                "stats": stats,
            });
            format!("{value}\n")
        }
    };
    if let Some(path) = &a.csv {
        fs::write(path, histogram_csv(&stats.diagnosis, &stats.medication))?;
    }
    emit(&report, None)
}
