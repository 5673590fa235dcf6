//! Synthetic EHR cohorts: domain types, a seeded generator with learnable
//! structure, a line-delimited text format, and patient-level splits.
//!
//! A cohort is a set of patients, each an ordered sequence of visits. Every
//! visit carries diagnosis codes, procedure codes, and a medication set over
//! dense index vocabularies. Medications are generated as a noisy image of
//! the diagnoses under a hidden per-cohort diagnosis→medication rule table,
//! plus a carry-over of the previous visit's medications, so that (a) the
//! mapping is learnable and (b) consecutive visits overlap more strongly in
//! medications than in diagnoses.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sizes of the three dense code vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub n_diag: usize,
    pub n_proc: usize,
    pub n_med: usize,
}

/// One hospital visit: diagnosis/procedure codes and the prescribed
/// medication set. All index lists are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub diagnoses: Vec<usize>,
    pub procedures: Vec<usize>,
    pub medications: Vec<usize>,
}

impl Visit {
    /// Multi-hot diagnosis vector of length `n_diag`.
    pub fn diagnosis_vector(&self, vocab: &Vocabulary) -> Vec<f64> {
        multi_hot(&self.diagnoses, vocab.n_diag)
    }

    /// Multi-hot procedure vector of length `n_proc`.
    pub fn procedure_vector(&self, vocab: &Vocabulary) -> Vec<f64> {
        multi_hot(&self.procedures, vocab.n_proc)
    }
}

/// 0/1 vector with ones at the given indices.
pub fn multi_hot(indices: &[usize], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &i in indices {
        debug_assert!(i < dim, "index {i} out of range {dim}");
        v[i] = 1.0;
    }
    v
}

/// One patient: an ordered visit sequence. Retained patients always have at
/// least two visits; shorter records are dropped at generation and at load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub visits: Vec<Visit>,
}

/// Symmetric, zero-diagonal binary matrix of known harmful medication pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdiMatrix {
    n: usize,
    data: Vec<u8>,
}

impl DdiMatrix {
    pub fn zeros(n: usize) -> Self {
        DdiMatrix {
            n,
            data: vec![0; n * n],
        }
    }

    pub fn n_med(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j] != 0
    }

    /// Sets both (i, j) and (j, i); the diagonal is immutable zero.
    pub fn set_pair(&mut self, i: usize, j: usize, value: bool) {
        assert_ne!(i, j, "DDI diagonal must stay zero");
        let v = u8::from(value);
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// Fraction of off-diagonal entries that are 1.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let ones: usize = self.data.iter().map(|&v| v as usize).sum();
        ones as f64 / (self.n * self.n - self.n) as f64
    }

    /// Row as a '0'/'1' string, used by the cohort file format.
    fn row_string(&self, i: usize) -> String {
        self.data[i * self.n..(i + 1) * self.n]
            .iter()
            .map(|&v| if v != 0 { '1' } else { '0' })
            .collect()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for i in 0..self.n {
            if self.get(i, i) {
                return Err(format!("nonzero diagonal at ({i}, {i})"));
            }
            for j in (i + 1)..self.n {
                if self.get(i, j) != self.get(j, i) {
                    return Err(format!("asymmetric at ({i}, {j})"));
                }
            }
        }
        Ok(())
    }
}

/// All knobs of the synthetic generator. Serialized into the cohort file
/// header as provenance, so a loaded cohort remembers how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub visits_min: usize,
    pub visits_max: usize,
    pub n_diag: usize,
    pub n_proc: usize,
    pub n_med: usize,
    /// Diagnosis codes drawn per visit.
    pub diags_per_visit: usize,
    /// Procedure codes drawn per visit.
    pub procs_per_visit: usize,
    /// Probability a diagnosis persists into the next visit.
    pub diag_persistence: f64,
    /// Medications implied by each diagnosis in the hidden rule table.
    pub med_rule_fanout: usize,
    /// Probability a previous-visit medication is carried forward even when
    /// its justifying diagnosis is gone. Keep above `diag_persistence` so
    /// consecutive medication overlap beats diagnosis overlap.
    pub med_carry: f64,
    /// Per-medication drop probability and per-visit spurious-add rate.
    pub noise_rate: f64,
    /// Expected fraction of off-diagonal DDI entries set to 1.
    pub ddi_density: f64,
}

impl Default for GeneratorConfig {
    /// Vocabulary sizes are kept small so every code recurs often enough
    /// for a fifty-patient cohort to be learnable under the default
    /// training budget, while medication overlap between consecutive
    /// visits stays well above diagnosis overlap.
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 50,
            visits_min: 3,
            visits_max: 8,
            n_diag: 20,
            n_proc: 8,
            n_med: 16,
            diags_per_visit: 3,
            procs_per_visit: 2,
            diag_persistence: 0.5,
            med_rule_fanout: 3,
            med_carry: 0.9,
            noise_rate: 0.05,
            ddi_density: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return err("n_patients must be >= 1".into());
        }
        if self.n_diag == 0 || self.n_proc == 0 || self.n_med == 0 {
            return err("vocabulary sizes must be >= 1".into());
        }
        if self.visits_min < 2 {
            return err("visits_min must be >= 2 (single-visit patients are dropped)".into());
        }
        if self.visits_min > self.visits_max {
            return err(format!(
                "visits_min {} > visits_max {}",
                self.visits_min, self.visits_max
            ));
        }
        if self.diags_per_visit == 0 || self.diags_per_visit > self.n_diag {
            return err(format!(
                "diags_per_visit must be in [1, {}]",
                self.n_diag
            ));
        }
        if self.procs_per_visit > self.n_proc {
            return err(format!(
                "procs_per_visit must be <= {}",
                self.n_proc
            ));
        }
        if self.med_rule_fanout == 0 || self.med_rule_fanout > self.n_med {
            return err(format!(
                "med_rule_fanout must be in [1, {}]",
                self.n_med
            ));
        }
        for (name, p) in [
            ("diag_persistence", self.diag_persistence),
            ("med_carry", self.med_carry),
            ("noise_rate", self.noise_rate),
            ("ddi_density", self.ddi_density),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    /// Provenance tokens for the cohort file header, in a fixed order.
    fn tokens(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_patients", self.n_patients.to_string()),
            ("visits_min", self.visits_min.to_string()),
            ("visits_max", self.visits_max.to_string()),
            ("n_diag", self.n_diag.to_string()),
            ("n_proc", self.n_proc.to_string()),
            ("n_med", self.n_med.to_string()),
            ("diags_per_visit", self.diags_per_visit.to_string()),
            ("procs_per_visit", self.procs_per_visit.to_string()),
            ("diag_persistence", self.diag_persistence.to_string()),
            ("med_rule_fanout", self.med_rule_fanout.to_string()),
            ("med_carry", self.med_carry.to_string()),
            ("noise_rate", self.noise_rate.to_string()),
            ("ddi_density", self.ddi_density.to_string()),
        ]
    }

    /// Applies one `key=value` setting. Unknown keys are rejected so typos
    /// in config files fail loudly instead of silently using defaults.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
        }
        match key {
            "n_patients" => self.n_patients = parse(key, value)?,
            "visits_min" => self.visits_min = parse(key, value)?,
            "visits_max" => self.visits_max = parse(key, value)?,
            "n_diag" => self.n_diag = parse(key, value)?,
            "n_proc" => self.n_proc = parse(key, value)?,
            "n_med" => self.n_med = parse(key, value)?,
            "diags_per_visit" => self.diags_per_visit = parse(key, value)?,
            "procs_per_visit" => self.procs_per_visit = parse(key, value)?,
            "diag_persistence" => self.diag_persistence = parse(key, value)?,
            "med_rule_fanout" => self.med_rule_fanout = parse(key, value)?,
            "med_carry" => self.med_carry = parse(key, value)?,
            "noise_rate" => self.noise_rate = parse(key, value)?,
            "ddi_density" => self.ddi_density = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown generator key {key:?}"))),
        }
        Ok(())
    }
}

/// A full dataset: vocabulary, patients, DDI matrix, and the generator
/// provenance (seed plus config) it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub vocabulary: Vocabulary,
    pub patients: Vec<PatientRecord>,
    pub ddi: DdiMatrix,
    pub generator_seed: u64,
    pub generator_config: GeneratorConfig,
}

impl Cohort {
    pub fn total_visits(&self) -> usize {
        self.patients.iter().map(|p| p.visits.len()).sum()
    }

    /// Number of ordered consecutive visit pairs, the unit of training.
    pub fn total_pairs(&self) -> usize {
        self.patients
            .iter()
            .map(|p| p.visits.len().saturating_sub(1))
            .sum()
    }
}

/// Draws `k` distinct values from `[0, n)`, returned sorted.
fn draw_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut set = BTreeSet::new();
    while set.len() < k {
        set.insert(rng.gen_range(0..n));
    }
    set.into_iter().collect()
}

/// The hidden diagnosis→medication rule table: `med_rule_fanout` distinct
/// medications per diagnosis code. Drawn first from the cohort RNG, so tests
/// can reproduce it from (config, seed) alone.
pub(crate) fn draw_rule_table(rng: &mut ChaCha8Rng, config: &GeneratorConfig) -> Vec<Vec<usize>> {
    (0..config.n_diag)
        .map(|_| draw_distinct(rng, config.n_med, config.med_rule_fanout))
        .collect()
}

/// Generates a random symmetric zero-diagonal interaction matrix where each
/// unordered off-diagonal pair is 1 with probability `density`.
pub fn generate_ddi_matrix(n_med: usize, density: f64, seed: u64) -> Result<DdiMatrix> {
    if n_med == 0 {
        return Err(Error::Config("DDI matrix needs n_med >= 1".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Config(format!(
            "DDI density must be in [0, 1], got {density}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ddi = DdiMatrix::zeros(n_med);
    for i in 0..n_med {
        for j in (i + 1)..n_med {
            if rng.gen::<f64>() < density {
                ddi.set_pair(i, j, true);
            }
        }
    }
    Ok(ddi)
}

/// Generates a deterministic synthetic cohort.
///
/// Per patient, the first visit draws fresh diagnoses; each later visit keeps
/// every diagnosis with probability `diag_persistence` and tops back up to
/// `diags_per_visit` with fresh draws. Medications are the rule-table image
/// of the current diagnoses, plus previous medications kept with probability
/// `med_carry`, then perturbed by noise (each medication dropped with
/// probability `noise_rate`; one spurious medication added with probability
/// `noise_rate`). Empty medication sets are repaired with the smallest
/// rule-image medication so every generated visit prescribes something.
pub fn generate_cohort(config: &GeneratorConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules = draw_rule_table(&mut rng, config);
    let ddi_seed = rng.gen::<u64>();
    let ddi = generate_ddi_matrix(config.n_med, config.ddi_density, ddi_seed)?;

    let mut patients = Vec::with_capacity(config.n_patients);
    for pid in 0..config.n_patients {
        let n_visits = rng.gen_range(config.visits_min..=config.visits_max);
        let mut visits: Vec<Visit> = Vec::with_capacity(n_visits);
        let mut prev_diags: BTreeSet<usize> = BTreeSet::new();
        let mut prev_meds: BTreeSet<usize> = BTreeSet::new();
        for _ in 0..n_visits {
            // Diagnoses: persisted subset of the previous visit, topped up.
            let mut diags: BTreeSet<usize> = prev_diags
                .iter()
                .copied()
                .filter(|_| rng.gen::<f64>() < config.diag_persistence)
                .collect();
            while diags.len() < config.diags_per_visit {
                diags.insert(rng.gen_range(0..config.n_diag));
            }

            let procs = draw_distinct(&mut rng, config.n_proc, config.procs_per_visit);

            // Medications: rule image of current diagnoses, plus carry-over.
            let image: BTreeSet<usize> = diags
                .iter()
                .flat_map(|&d| rules[d].iter().copied())
                .collect();
            let mut meds: BTreeSet<usize> = image.clone();
            for &m in &prev_meds {
                if rng.gen::<f64>() < config.med_carry {
                    meds.insert(m);
                }
            }
            // Noise: independent drops, then at most one spurious addition.
            meds.retain(|_| rng.gen::<f64>() >= config.noise_rate);
            if rng.gen::<f64>() < config.noise_rate {
                let absent: Vec<usize> =
                    (0..config.n_med).filter(|m| !meds.contains(m)).collect();
                if !absent.is_empty() {
                    meds.insert(absent[rng.gen_range(0..absent.len())]);
                }
            }
            if meds.is_empty() {
                // `image` is non-empty because every visit has a diagnosis.
                meds.insert(*image.iter().next().expect("non-empty rule image"));
            }

            visits.push(Visit {
                diagnoses: diags.iter().copied().collect(),
                procedures: procs,
                medications: meds.iter().copied().collect(),
            });
            prev_diags = diags;
            prev_meds = meds;
        }
        patients.push(PatientRecord {
            patient_id: pid as u64,
            visits,
        });
    }

    Ok(Cohort {
        vocabulary: Vocabulary {
            n_diag: config.n_diag,
            n_proc: config.n_proc,
            n_med: config.n_med,
        },
        patients,
        ddi,
        generator_seed: seed,
        generator_config: config.clone(),
    })
}

fn format_index_list(indices: &[usize]) -> String {
    indices
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes a cohort in the line-delimited text format (UTF-8, LF):
///
/// ```text
/// cohort-v1 diag=<n> proc=<n> med=<n> patients=<n> visits=<total>
/// config seed=<u64> <key=value provenance tokens>
/// <n_med rows of '0'/'1' DDI entries>
/// <one line per visit: patient_id,visit_index,diags,procs,meds>
/// ```
///
/// Index lists are semicolon-separated and strictly increasing.
pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "cohort-v1 diag={} proc={} med={} patients={} visits={}",
        cohort.vocabulary.n_diag,
        cohort.vocabulary.n_proc,
        cohort.vocabulary.n_med,
        cohort.patients.len(),
        cohort.total_visits()
    )
    .expect("write to string");
    let mut config_line = format!("config seed={}", cohort.generator_seed);
    for (k, v) in cohort.generator_config.tokens() {
        config_line.push(' ');
        config_line.push_str(k);
        config_line.push('=');
        config_line.push_str(&v);
    }
    out.push_str(&config_line);
    out.push('\n');
    for i in 0..cohort.vocabulary.n_med {
        out.push_str(&cohort.ddi.row_string(i));
        out.push('\n');
    }
    for patient in &cohort.patients {
        for (t, visit) in patient.visits.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                patient.patient_id,
                t,
                format_index_list(&visit.diagnoses),
                format_index_list(&visit.procedures),
                format_index_list(&visit.medications)
            )
            .expect("write to string");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_count(line: usize, token: &str, key: &str) -> Result<usize> {
    let value = token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| parse_err(line, format!("expected {key}=<count>, got {token:?}")))?;
    value
        .parse()
        .map_err(|_| parse_err(line, format!("invalid count for {key}: {value:?}")))
}

/// Parses a strictly increasing semicolon-separated index list.
fn parse_index_list(line: usize, field: &str, what: &str, bound: usize) -> Result<Vec<usize>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in field.split(';') {
        let idx: usize = part
            .parse()
            .map_err(|_| parse_err(line, format!("invalid {what} index {part:?}")))?;
        if idx >= bound {
            return Err(parse_err(
                line,
                format!("{what} index {idx} out of range (vocabulary size {bound})"),
            ));
        }
        if let Some(&last) = out.last() {
            if idx <= last {
                return Err(parse_err(
                    line,
                    format!("{what} indices must be strictly increasing"),
                ));
            }
        }
        out.push(idx);
    }
    Ok(out)
}

/// Reads a cohort written by [`save_cohort`]. The parse is all-or-nothing:
/// any malformed or missing line fails with a parse error naming the line,
/// and no partial cohort is returned. Patients with fewer than two visits
/// are dropped with a warning.
pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.first() != Some(&"cohort-v1") {
        return Err(parse_err(line_no, "expected header starting with cohort-v1"));
    }
    if tokens.len() != 6 {
        return Err(parse_err(line_no, "header needs 5 key=value fields"));
    }
    let n_diag = parse_count(line_no, tokens[1], "diag")?;
    let n_proc = parse_count(line_no, tokens[2], "proc")?;
    let n_med = parse_count(line_no, tokens[3], "med")?;
    let n_patients = parse_count(line_no, tokens[4], "patients")?;
    let n_visits = parse_count(line_no, tokens[5], "visits")?;
    if n_diag == 0 || n_proc == 0 || n_med == 0 {
        return Err(parse_err(line_no, "vocabulary sizes must be >= 1"));
    }
    let vocabulary = Vocabulary {
        n_diag,
        n_proc,
        n_med,
    };

    let (line_no, config_line) = lines
        .next()
        .ok_or_else(|| parse_err(2, "unexpected end of file, expected config line"))?;
    let mut parts = config_line.split_whitespace();
    if parts.next() != Some("config") {
        return Err(parse_err(line_no, "expected config line"));
    }
    let mut generator_seed = None;
    let mut generator_config = GeneratorConfig::default();
    let mut seen = BTreeSet::new();
    for token in parts {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected key=value, got {token:?}")))?;
        if !seen.insert(key.to_string()) {
            return Err(parse_err(line_no, format!("duplicate config key {key:?}")));
        }
        if key == "seed" {
            generator_seed = Some(value.parse().map_err(|_| {
                parse_err(line_no, format!("invalid seed {value:?}"))
            })?);
        } else {
            generator_config
                .apply(key, value)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
        }
    }
    let generator_seed =
        generator_seed.ok_or_else(|| parse_err(line_no, "config line missing seed"))?;

    let mut ddi = DdiMatrix::zeros(n_med);
    for i in 0..n_med {
        let (line_no, row) = lines.next().ok_or_else(|| {
            parse_err(2 + i, format!("unexpected end of file in DDI row {i}"))
        })?;
        if row.len() != n_med {
            return Err(parse_err(
                line_no,
                format!("DDI row has {} entries, expected {n_med}", row.len()),
            ));
        }
        for (j, ch) in row.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => {
                    if i == j {
                        return Err(parse_err(line_no, "nonzero DDI diagonal"));
                    }
                    ddi.data[i * n_med + j] = 1;
                }
                _ => return Err(parse_err(line_no, format!("invalid DDI entry {ch:?}"))),
            }
        }
    }
    if let Err(m) = ddi.validate() {
        return Err(parse_err(2 + n_med, format!("DDI matrix {m}")));
    }

    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for _ in 0..n_visits {
        let (line_no, line) = lines.next().ok_or_else(|| {
            parse_err(
                2 + n_med + n_visits,
                "unexpected end of file, visit lines missing",
            )
        })?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                line_no,
                format!("visit line has {} fields, expected 5", fields.len()),
            ));
        }
        let patient_id: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid patient id {:?}", fields[0])))?;
        let visit_index: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid visit index {:?}", fields[1])))?;
        let diagnoses = parse_index_list(line_no, fields[2], "diagnosis", n_diag)?;
        let procedures = parse_index_list(line_no, fields[3], "procedure", n_proc)?;
        let medications = parse_index_list(line_no, fields[4], "medication", n_med)?;
        let visit = Visit {
            diagnoses,
            procedures,
            medications,
        };

        let continues_current = patients
            .last()
            .map(|p: &PatientRecord| p.patient_id == patient_id)
            .unwrap_or(false);
        if continues_current {
            let patient = patients.last_mut().expect("non-empty");
            if visit_index != patient.visits.len() {
                return Err(parse_err(
                    line_no,
                    format!(
                        "visit index {visit_index} out of order for patient {patient_id} \
                         (expected {})",
                        patient.visits.len()
                    ),
                ));
            }
            patient.visits.push(visit);
        } else {
            if !seen_ids.insert(patient_id) {
                return Err(parse_err(
                    line_no,
                    format!("patient {patient_id} appears in two separate blocks"),
                ));
            }
            if visit_index != 0 {
                return Err(parse_err(
                    line_no,
                    format!("patient {patient_id} must start at visit index 0"),
                ));
            }
            patients.push(PatientRecord {
                patient_id,
                visits: vec![visit],
            });
        }
    }
    if let Some((line_no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(
            line_no,
            format!("unexpected trailing content {extra:?}"),
        ));
    }
    if patients.len() != n_patients {
        return Err(parse_err(
            2 + n_med + n_visits,
            format!(
                "header promised {n_patients} patients, file contains {}",
                patients.len()
            ),
        ));
    }

    let before = patients.len();
    patients.retain(|p| {
        if p.visits.len() < 2 {
            log::warn!(
                "dropping patient {} with only {} visit(s)",
                p.patient_id,
                p.visits.len()
            );
            false
        } else {
            true
        }
    });
    if patients.len() != before {
        log::warn!("dropped {} single-visit patient(s)", before - patients.len());
    }

    Ok(Cohort {
        vocabulary,
        patients,
        ddi,
        generator_seed,
        generator_config,
    })
}

/// Splits a cohort into train/validation/test by patient. Sizes are the
/// floors of `ratio * n`; leftover patients go to train. Each output keeps
/// the parent's vocabulary, DDI matrix, and provenance, with patients in
/// original id order.
pub fn split_cohort(
    cohort: &Cohort,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Cohort, Cohort, Cohort)> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative, got ({rt}, {rv}, {rs})"
        )));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            rt + rv + rs
        )));
    }
    let n = cohort.patients.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (rt * n as f64).floor() as usize;
    let n_val = (rv * n as f64).floor() as usize;
    let n_test = (rs * n as f64).floor() as usize;
    let leftover = n - n_train - n_val - n_test;
    let n_train = n_train + leftover;

    let take = |idx: &[usize]| -> Cohort {
        let mut picked: Vec<usize> = idx.to_vec();
        picked.sort_unstable();
        Cohort {
            vocabulary: cohort.vocabulary,
            patients: picked
                .iter()
                .map(|&i| cohort.patients[i].clone())
                .collect(),
            ddi: cohort.ddi.clone(),
            generator_seed: cohort.generator_seed,
            generator_config: cohort.generator_config.clone(),
        }
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    debug_assert_eq!(test.patients.len(), n_test);
    Ok((train, val, test))
}
