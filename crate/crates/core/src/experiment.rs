//! Config-driven experiments: synthesize, preprocess, split, train and
//! diagnose, with a manifest that pins everything needed to reproduce the
//! report files byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    blank_leakage, block_label_leakage, block_label_leakage_per_subject, fit_and_test, per_subject_vs_pooled, DiagnosticReport, Protocol, ReportRow,
};
use crate::error::{Error, Result};
use crate::models::{chance, evaluate, Family, Head, LabelKind, ModelSpec, TrainConfig};
use crate::par::par_map;
use crate::pipeline::{synthesize_cohort, CohortSpec, Preprocessing, COMPARISON_BAND, NOTCH_50HZ};
use crate::rng::derive_seed;
use crate::signal::{Phase, Segment, SEGMENT_LEN};
use crate::synth::{make_splits, rapid_images_per_class, DatasetSplit, Design, Geometry, NeuralModelParams, Ratios};

/// Named frequency bands; 45-55 Hz is avoided because of mains interference.
pub const BAND_PRESETS: [(&str, (f64, f64)); 5] = [
    ("theta-alpha-beta", (5.0, 32.0)),
    ("low-gamma", (32.0, 45.0)),
    ("high-gamma", (55.0, 95.0)),
    ("all-gamma", (32.0, 95.0)),
    ("all", (5.0, 95.0)),
];

pub fn band_preset(name: &str) -> Option<(f64, f64)> {
    BAND_PRESETS.iter().find(|(n, _)| *n == name).map(|(_, b)| *b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentDesign {
    Block,
    Rapid,
    /// Block design whose blank intervals are classified.
    Blank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Pooled,
    PerSubject,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Family default when absent.
    #[serde(default)]
    pub head: Option<Head>,
    #[serde(default)]
    pub encoder_dim: Option<usize>,
    #[serde(default)]
    pub downsample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub images_per_class: usize,
    pub sessions: usize,
    pub subjects: u32,
    pub channels: usize,
    pub sampling_rate: f64,
    /// Rapid design only: sets images per class from the session length.
    pub duration_min: Option<f64>,
    pub evoked_amplitude: f64,
    pub evoked_band: (f64, f64),
    pub drift_amplitude: f64,
    pub drift_timescale_s: f64,
    pub drift_fluctuation: f64,
    pub drift_channels: Option<Vec<usize>>,
    pub vigilance_tau_s: Option<f64>,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 40,
            images_per_class: 10,
            sessions: 4,
            subjects: 4,
            channels: 16,
            sampling_rate: 1000.0,
            duration_min: None,
            evoked_amplitude: 1.0,
            evoked_band: (55.0, 95.0),
            drift_amplitude: 0.0,
            drift_timescale_s: 20.0,
            drift_fluctuation: 0.0,
            drift_channels: None,
            vigilance_tau_s: None,
            noise_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub design: ExperimentDesign,
    /// Temporal bandpass; `None` skips temporal filtering.
    #[serde(default)]
    pub band: Option<(f64, f64)>,
    #[serde(default)]
    pub notch: bool,
    #[serde(default)]
    pub phase: Phase,
    /// Run the 14-70 Hz bandpass along the channel axis instead of time.
    #[serde(default)]
    pub contaminate: bool,
    pub model: ModelConfig,
    pub labels: LabelKind,
    pub analysis: Analysis,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Required; there is no implicit randomness.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| config_err("config", e.to_string()))
    }

    /// Accepts either a config or a manifest written by [`run`]; a manifest
    /// must match its recorded config hash.
    pub fn from_config_or_manifest(s: &str) -> Result<Self> {
        Ok(Self::load(s)?.0)
    }

    /// Like [`from_config_or_manifest`](Self::from_config_or_manifest), also
    /// returning the sweep plan recorded in a sweep manifest.
    pub fn load(s: &str) -> Result<(Self, Option<SweepPlan>)> {
        let v: serde_json::Value = serde_json::from_str(s).map_err(|e| config_err("config", e.to_string()))?;
        if v.get("config_sha256").is_none() {
            return Ok((Self::from_json(s)?, None));
        }
        let m: Manifest = serde_json::from_value(v).map_err(|e| config_err("manifest", e.to_string()))?;
        if m.config.sha256()? != m.config_sha256 {
            return Err(config_err("manifest", "config does not match config_sha256"));
        }
        Ok((m.config, m.sweep))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| config_err("seed", "a seed is required (config, --seed or EEGLAB_SEED)"))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let fs = self.synth.sampling_rate;
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(config_err("synth.sampling_rate", format!("must be > 0, got {fs}")));
        }
        if let Some((lo, hi)) = self.band {
            if !(lo > 0.0 && lo < hi && hi < 500.0 && hi < fs / 2.0) {
                return Err(config_err("band", format!("({lo}, {hi}) must satisfy 0 < low < high < 500 Hz")));
            }
        }
        if self.design == ExperimentDesign::Rapid && self.labels == LabelKind::BlankPair {
            return Err(config_err("labels", "blank-pair labels need the blank design"));
        }
        if self.design == ExperimentDesign::Blank && self.labels != LabelKind::BlankPair {
            return Err(config_err("labels", "the blank design is scored with blank-pair labels"));
        }
        if self.analysis == Analysis::Both && self.synth.subjects < 2 {
            return Err(config_err("analysis", "comparing per-subject and pooled needs at least 2 subjects"));
        }
        if self.synth.sessions == 0 {
            return Err(config_err("synth.sessions", "must be >= 1"));
        }
        if let Some(d) = self.synth.duration_min {
            if !(d > 0.0) {
                return Err(config_err("synth.duration_min", format!("must be > 0, got {d}")));
            }
        }
        if self.jobs == 0 {
            return Err(config_err("jobs", "must be >= 1"));
        }
        self.train.validate()?;
        self.params().validate(fs)?;
        self.model_spec(self.synth.n_classes).validate().map_err(|e| config_err("model", e.to_string()))?;
        if let Some(parent) = self.output.parent() {
            if !parent.as_os_str().is_empty() && !parent.exists() {
                return Err(config_err("output", format!("parent directory {} does not exist", parent.display())));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> NeuralModelParams {
        let s = &self.synth;
        NeuralModelParams {
            evoked_amplitude: s.evoked_amplitude,
            evoked_band: s.evoked_band,
            drift_amplitude: s.drift_amplitude,
            drift_timescale_s: s.drift_timescale_s,
            drift_fluctuation: s.drift_fluctuation,
            drift_channels: s.drift_channels.clone(),
            vigilance_tau_s: s.vigilance_tau_s,
            noise_std: s.noise_std,
            seed: 0,
        }
    }

    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            band: self.band,
            notch: self.notch.then_some(NOTCH_50HZ),
            phase: self.phase,
            contaminate: self.contaminate.then_some(COMPARISON_BAND),
            zscore: true,
        }
    }

    pub fn cohort(&self) -> CohortSpec {
        let s = &self.synth;
        let (design, ipc) = match self.design {
            ExperimentDesign::Rapid => (
                Design::Rapid,
                s.duration_min
                    .map_or(s.images_per_class, |m| rapid_images_per_class(m, s.n_classes, Geometry::default())),
            ),
            ExperimentDesign::Block | ExperimentDesign::Blank => (Design::Block, s.images_per_class),
        };
        CohortSpec {
            design,
            n_classes: s.n_classes,
            images_per_class: ipc,
            sessions: s.sessions,
            subjects: s.subjects,
            channels: s.channels,
            sampling_rate: s.sampling_rate,
            params: self.params(),
            preprocessing: self.preprocessing(),
            blanks: self.design == ExperimentDesign::Blank,
        }
    }

    pub fn model_spec(&self, n_outputs: usize) -> ModelSpec {
        let m = &self.model;
        let mut spec = ModelSpec::new(m.family, self.synth.channels, SEGMENT_LEN, n_outputs);
        if let Some(h) = m.head {
            spec.head = h;
        }
        if let Some(e) = m.encoder_dim {
            spec.encoder_dim = e;
        }
        if let Some(d) = m.downsample {
            spec.downsample = d;
        }
        spec
    }

    /// Short description used as the report condition.
    pub fn condition(&self) -> String {
        let band = match self.band {
            Some((lo, hi)) => format!("{lo}-{hi} Hz"),
            None => "unfiltered".into(),
        };
        let design = match self.design {
            ExperimentDesign::Block => "block",
            ExperimentDesign::Rapid => "rapid",
            ExperimentDesign::Blank => "blank",
        };
        let mut c = format!("{design} {band}");
        if self.contaminate {
            c.push_str(" channel-filtered");
        }
        if let (ExperimentDesign::Rapid, Some(m)) = (self.design, self.synth.duration_min) {
            c.push_str(&format!(" {m} min"));
        }
        if self.synth.drift_amplitude > 0.0 {
            c.push_str(&format!(" drift {}", self.synth.drift_amplitude));
        }
        c
    }

    /// Hash of everything that affects results; the output directory and
    /// job count do not.
    pub fn sha256(&self) -> Result<String> {
        let canonical = Self {
            output: PathBuf::new(),
            jobs: 1,
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
    }
}

fn train_kind(labels: LabelKind) -> LabelKind {
    match labels {
        LabelKind::BlankPair => LabelKind::Class,
        k => k,
    }
}

fn n_outputs(cfg: &ExperimentConfig, split: &DatasetSplit) -> usize {
    match cfg.labels {
        LabelKind::Block => split.train.iter().map(|s| s.block_label as usize + 1).max().unwrap_or(0),
        _ => cfg.synth.n_classes,
    }
}

fn for_subject(segs: &[Segment], subject: u32) -> Vec<Segment> {
    segs.iter().filter(|s| s.subject_id == subject).cloned().collect()
}

/// Runs the configured analysis in memory.
pub fn analyze(cfg: &ExperimentConfig) -> Result<DiagnosticReport> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let cohort = synthesize_cohort(&cfg.cohort(), seed)?;
    let split = make_splits(cohort.stimuli, Ratios::default(), derive_seed(seed, &[0x5917]))?;
    let protocol = Protocol {
        spec: cfg.model_spec(n_outputs(cfg, &split)),
        train: TrainConfig {
            seed: derive_seed(seed, &[0x7A1]),
            ..cfg.train.clone()
        },
        labels: train_kind(cfg.labels),
        jobs: cfg.jobs,
    };
    let condition = cfg.condition();
    let mut report = match (cfg.labels, cfg.analysis) {
        (LabelKind::BlankPair, analysis) => blank_report(&split, &cohort.blanks, &protocol, analysis, &condition)?,
        (_, Analysis::Both) => per_subject_vs_pooled(&split, &protocol, &condition)?,
        (LabelKind::Block, Analysis::PerSubject) => {
            single_row("block leakage", block_label_leakage_per_subject(&split, &protocol, &condition)?)
        }
        (LabelKind::Block, Analysis::Pooled) => single_row("block leakage", block_label_leakage(&split, &protocol, &condition)?),
        (kind, analysis) => single_report(&split, &protocol, kind, analysis, &condition)?,
    };
    report.experiment = cfg.name.clone();
    report.metadata.insert("seed".into(), seed.into());
    report.metadata.insert("condition".into(), condition.into());
    report.metadata.insert("config_sha256".into(), cfg.sha256()?.into());
    Ok(report)
}

fn single_row(experiment: &str, row: ReportRow) -> DiagnosticReport {
    let mut report = DiagnosticReport::new(experiment);
    report.rows.push(row);
    report
}

fn single_report(split: &DatasetSplit, p: &Protocol, kind: LabelKind, analysis: Analysis, condition: &str) -> Result<DiagnosticReport> {
    let subjects = split.subjects();
    let chance = chance(kind, p.spec.n_classes);
    let row = match analysis {
        Analysis::PerSubject => {
            let scores = par_map(&subjects, p.jobs, |&s| {
                fit_and_test(&split.for_subject(s), &p.spec, &p.train, kind, 1).map(|(_, a, l)| (s, a, l))
            });
            let scores: Vec<(u32, f64, Option<f64>)> = scores.into_iter().collect::<Result<_>>()?;
            let low: Option<Vec<f64>> = scores.iter().map(|s| s.2).collect();
            let accs: Vec<(u32, f64)> = scores.iter().map(|s| (s.0, s.1)).collect();
            ReportRow::new(&p.model_name(), condition, "per-subject", kind, 0.0, chance)
                .with_subjects(&accs)
                .with_lowest_val(low.map(|v| v.iter().sum::<f64>() / v.len() as f64))
        }
        _ => {
            let (model, acc, low) = fit_and_test(split, &p.spec, &p.train, kind, 0)?;
            let mut per = Vec::new();
            for &s in &subjects {
                let test = for_subject(&split.test, s);
                if !test.is_empty() {
                    per.push((s, evaluate(&model.network, &test, kind)?));
                }
            }
            let mut row = ReportRow::new(&p.model_name(), condition, "pooled", kind, acc, chance).with_lowest_val(low);
            let accuracy = row.accuracy;
            row = row.with_subjects(&per);
            // pooled accuracy is over the whole test set, not the subject mean
            row.accuracy = accuracy;
            row.increase_over_chance = row.accuracy - row.chance;
            row
        }
    };
    let mut report = DiagnosticReport::new("classification");
    report.rows.push(row);
    Ok(report)
}

fn blank_report(split: &DatasetSplit, blanks: &[Segment], p: &Protocol, analysis: Analysis, condition: &str) -> Result<DiagnosticReport> {
    let subjects = split.subjects();
    let mut report = DiagnosticReport::new("blank leakage");
    if matches!(analysis, Analysis::PerSubject | Analysis::Both) {
        let accs = par_map(&subjects, p.jobs, |&s| {
            let (model, _, _) = fit_and_test(&split.for_subject(s), &p.spec, &p.train, LabelKind::Class, 1)?;
            evaluate(&model.network, &for_subject(blanks, s), LabelKind::BlankPair).map(|a| (s, a))
        });
        let accs: Vec<(u32, f64)> = accs.into_iter().collect::<Result<_>>()?;
        let mut row = ReportRow::new(
            &p.model_name(),
            condition,
            "per-subject",
            LabelKind::BlankPair,
            0.0,
            chance(LabelKind::BlankPair, p.spec.n_classes),
        )
        .with_subjects(&accs);
        row.analysis = "per-subject".into();
        report.rows.push(row);
    }
    if matches!(analysis, Analysis::Pooled | Analysis::Both) {
        let (model, _, _) = fit_and_test(split, &p.spec, &p.train, LabelKind::Class, 0)?;
        let mut row = blank_leakage(&model.network, blanks, condition)?;
        let mut per = Vec::new();
        for &s in &subjects {
            let b = for_subject(blanks, s);
            if !b.is_empty() {
                per.push((s, evaluate(&model.network, &b, LabelKind::BlankPair)?));
            }
        }
        let accuracy = row.accuracy;
        row = row.with_subjects(&per);
        row.accuracy = accuracy;
        row.increase_over_chance = row.accuracy - row.chance;
        report.rows.push(row);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run. Deliberately free of timestamps and
/// host details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepPlan>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub values: Vec<SweepValue>,
    pub fresh_seeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub eeglab: String,
    pub eegb: u32,
    pub eegm: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            eeglab: env!("CARGO_PKG_VERSION").into(),
            eegb: crate::signal::eegb::VERSION,
            eegm: crate::models::checkpoint::VERSION,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `report.csv`, `report.json` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, sweep: Option<&SweepPlan>, report: &DiagnosticReport) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let files = [("report.csv", report.to_csv()), ("report.json", report.to_json()?)];
    let mut outputs = Vec::new();
    for (name, body) in files {
        fs::write(dir.join(name), &body)?;
        outputs.push(OutputFile {
            path: name.into(),
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        config_sha256: cfg.sha256()?,
        seed: cfg.seed()?,
        versions: Versions::current(),
        sweep: sweep.cloned(),
        outputs,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// `analyze` followed by `write_outputs` into `cfg.output`.
pub fn run(cfg: &ExperimentConfig) -> Result<(DiagnosticReport, Manifest)> {
    let report = analyze(cfg)?;
    let manifest = write_outputs(&cfg.output, cfg, None, &report)?;
    Ok((report, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "value")]
pub enum SweepValue {
    Band((f64, f64)),
    /// Rapid-design session length in minutes.
    Duration(f64),
    DriftAmplitude(f64),
}

impl SweepValue {
    fn key(&self) -> (f64, f64) {
        match *self {
            SweepValue::Band(b) => b,
            SweepValue::Duration(v) | SweepValue::DriftAmplitude(v) => (v, 0.0),
        }
    }

    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        match *self {
            SweepValue::Band(b) => c.band = Some(b),
            SweepValue::Duration(m) => {
                c.design = ExperimentDesign::Rapid;
                c.synth.duration_min = Some(m);
            }
            SweepValue::DriftAmplitude(a) => c.synth.drift_amplitude = a,
        }
        c
    }
}

/// One analysis per value, all from the same base seed unless `fresh_seeds`.
/// Values run in ascending order and rows are merged in that order whatever
/// the completion order.
pub fn sweep(cfg: &ExperimentConfig, values: &[SweepValue], fresh_seeds: bool, jobs: usize) -> Result<DiagnosticReport> {
    if values.is_empty() {
        return Err(config_err("values", "a sweep needs at least one value"));
    }
    let base = cfg.seed()?;
    let mut values = values.to_vec();
    values.sort_by(|a, b| a.key().partial_cmp(&b.key()).unwrap_or(std::cmp::Ordering::Equal));
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = v.apply(cfg);
            if fresh_seeds {
                c.seed = Some(derive_seed(base, &[0x5EE9, i as u64]));
            }
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let reports = par_map(&configs, jobs.max(1), analyze);
    let mut out = DiagnosticReport::new(&cfg.name);
    out.metadata.insert("seed".into(), base.into());
    out.metadata.insert("fresh_seeds".into(), fresh_seeds.into());
    out.metadata.insert("values".into(), serde_json::to_value(&values)?);
    for r in reports {
        out.rows.extend(r?.rows);
    }
    Ok(out)
}
