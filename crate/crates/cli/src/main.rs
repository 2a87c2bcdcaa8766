use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use eeglab_core::diagnostics::{one_hotness, DiagnosticReport, EncodingMatrix, ReportRow};
use eeglab_core::experiment::{
    band_preset, sweep, write_outputs, Analysis, ExperimentConfig, ExperimentDesign, ModelConfig, SweepPlan,
    SweepValue, SynthConfig, BAND_PRESETS,
};
use eeglab_core::models::{build, chance, evaluate, load_model, save_model, train, write_history_csv, Family, Head, LabelKind, ModelSpec, TrainConfig};
use eeglab_core::pipeline::{attach_schedule, segment_session, Preprocessing, COMPARISON_BAND, NOTCH_50HZ};
use eeglab_core::rng::derive_seed;
use eeglab_core::signal::eegb::{read_eegb, write_eegb};
use eeglab_core::signal::{Phase, Recording, Segment, SEGMENT_LEN};
use eeglab_core::synth::{make_splits, synthesize_recording, DatasetSplit, Ratios, StimulusSchedule};

const SEED_ENV: &str = "EEGLAB_SEED";

/// Temporal-confound diagnostics for block-design EEG classification on
/// synthetic data.
#[derive(Parser)]
#[command(name = "eeglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize, preprocess, split, train and diagnose in one go.
    Run(ExperimentArgs),
    /// Synthesize continuous recordings and their schedule.
    Synth(SynthArgs),
    /// Filter recordings and cut them into labelled segments.
    Preprocess(PreprocessArgs),
    /// Train a classifier on preprocessed segments.
    Train(TrainArgs),
    /// Evaluate a trained classifier on the test split.
    Diagnose(DiagnoseArgs),
    /// Repeat an experiment over band, duration or drift values.
    Sweep(SweepArgs),
    /// Print or convert saved reports.
    Report(ReportArgs),
}

/// Marks an error as a configuration problem (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    if let Some(b) = band_preset(s) {
        return Ok(b);
    }
    let (lo, hi) = s
        .split_once(['-', ','])
        .ok_or_else(|| format!("expected a preset ({}) or LOW-HIGH, got {s}", preset_names()))?;
    let lo = lo.trim().parse::<f64>().map_err(|e| format!("{s}: {e}"))?;
    let hi = hi.trim().parse::<f64>().map_err(|e| format!("{s}: {e}"))?;
    Ok((lo, hi))
}

fn preset_names() -> String {
    BAND_PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    Block,
    Rapid,
    Blank,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisArg {
    Pooled,
    PerSubject,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Causal,
    Zero,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Causal => Phase::Causal,
            PhaseArg::Zero => Phase::Zero,
        }
    }
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// linear-softmax, channelwise-cnn, pooled-cnn or recurrent-encoder.
    #[arg(long, value_parser = parse_kebab::<Family>)]
    model: Option<Family>,
    /// fc40, fc40-relu, fc128, relu-only or relu-fc40.
    #[arg(long, value_parser = parse_kebab::<Head>)]
    head: Option<Head>,
    #[arg(long)]
    encoder_dim: Option<usize>,
    /// Temporal decimation factor applied before the model.
    #[arg(long)]
    downsample: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct FilterArgs {
    /// Bandpass as LOW HIGH in Hz.
    #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"], conflicts_with = "preset")]
    band: Option<Vec<f64>>,
    /// Named band: theta-alpha-beta, low-gamma, high-gamma, all-gamma or all.
    #[arg(long)]
    preset: Option<String>,
    /// Skip temporal filtering.
    #[arg(long, conflicts_with_all = ["band", "preset"])]
    unfiltered: bool,
    /// Add a 50 Hz notch.
    #[arg(long)]
    notch: bool,
    #[arg(long, value_enum)]
    phase: Option<PhaseArg>,
    /// Filter along the channel axis of each segment (14-70 Hz).
    #[arg(long)]
    contaminate: bool,
}

impl FilterArgs {
    fn band(&self) -> Result<Option<Option<(f64, f64)>>> {
        if self.unfiltered {
            return Ok(Some(None));
        }
        if let Some(b) = &self.band {
            return Ok(Some(Some((b[0], b[1]))));
        }
        match &self.preset {
            Some(p) => band_preset(p)
                .map(|b| Some(Some(b)))
                .ok_or_else(|| config_error(format!("unknown preset {p}; expected one of {}", preset_names()))),
            None => Ok(None),
        }
    }
}

#[derive(Args, Clone, Default)]
struct SynthParamArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    images_per_class: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    subjects: Option<u32>,
    #[arg(long)]
    channels: Option<usize>,
    /// Rapid-design session length in minutes.
    #[arg(long)]
    duration: Option<f64>,
    /// Peak evoked amplitude in µV.
    #[arg(long)]
    evoked: Option<f64>,
    /// Slow-drift amplitude in µV.
    #[arg(long)]
    drift: Option<f64>,
    /// Drift relaxation time in seconds.
    #[arg(long)]
    drift_tau: Option<f64>,
    /// Vigilance decay time constant in seconds.
    #[arg(long)]
    vigilance_tau: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    /// JSON config or manifest; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// class, block or blank-pair.
    #[arg(long, value_parser = parse_kebab::<LabelKind>)]
    labels: Option<LabelKind>,
    #[arg(long, value_enum)]
    analysis: Option<AnalysisArg>,
    #[command(flatten)]
    synth: SynthParamArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Falls back to the config, then to EEGLAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent trainings.
    #[arg(long)]
    jobs: Option<usize>,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| config_error(format!("{SEED_ENV}={v}: {e}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    match flag.or(file) {
        Some(s) => Ok(s),
        None => env_seed()?.ok_or_else(|| config_error(format!("a seed is required: pass --seed or set {SEED_ENV}"))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "experiment".into(),
        design: ExperimentDesign::Block,
        band: Some((55.0, 95.0)),
        notch: true,
        phase: Phase::Causal,
        contaminate: false,
        model: ModelConfig {
            family: Family::PooledCnn,
            head: None,
            encoder_dim: None,
            downsample: None,
        },
        labels: LabelKind::Class,
        analysis: Analysis::Pooled,
        synth: SynthConfig::default(),
        train: TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
        seed: None,
        output: PathBuf::from("out"),
        jobs: 1,
    }
}

impl ExperimentArgs {
    fn load(&self) -> Result<(ExperimentConfig, Option<SweepPlan>)> {
        let (mut c, plan) = match &self.config {
            Some(p) => ExperimentConfig::load(&read_text(p)?).map_err(|e| config_error(format!("{}: {e}", p.display())))?,
            None => (default_config(), None),
        };
        if let Some(n) = &self.name {
            c.name = n.clone();
        }
        if let Some(d) = self.design {
            c.design = match d {
                DesignArg::Block => ExperimentDesign::Block,
                DesignArg::Rapid => ExperimentDesign::Rapid,
                DesignArg::Blank => ExperimentDesign::Blank,
            };
            if d == DesignArg::Blank && self.labels.is_none() {
                c.labels = LabelKind::BlankPair;
            }
        }
        if let Some(b) = self.filter.band()? {
            c.band = b;
        }
        c.notch |= self.filter.notch;
        c.contaminate |= self.filter.contaminate;
        if let Some(p) = self.filter.phase {
            c.phase = p.into();
        }
        let m = &self.model;
        if let Some(f) = m.model {
            c.model.family = f;
        }
        c.model.head = m.head.or(c.model.head);
        c.model.encoder_dim = m.encoder_dim.or(c.model.encoder_dim);
        c.model.downsample = m.downsample.or(c.model.downsample);
        if let Some(l) = self.labels {
            c.labels = l;
        }
        if let Some(a) = self.analysis {
            c.analysis = match a {
                AnalysisArg::Pooled => Analysis::Pooled,
                AnalysisArg::PerSubject => Analysis::PerSubject,
                AnalysisArg::Both => Analysis::Both,
            };
        }
        let s = &self.synth;
        let cs = &mut c.synth;
        set(&mut cs.n_classes, s.classes);
        set(&mut cs.images_per_class, s.images_per_class);
        set(&mut cs.sessions, s.sessions);
        set(&mut cs.subjects, s.subjects);
        set(&mut cs.channels, s.channels);
        set(&mut cs.evoked_amplitude, s.evoked);
        set(&mut cs.drift_amplitude, s.drift);
        set(&mut cs.drift_timescale_s, s.drift_tau);
        set(&mut cs.noise_std, s.noise);
        if s.duration.is_some() {
            cs.duration_min = s.duration;
        }
        if s.vigilance_tau.is_some() {
            cs.vigilance_tau_s = s.vigilance_tau;
        }
        set(&mut c.train.epochs, self.training.epochs);
        set(&mut c.train.lr, self.training.lr);
        set(&mut c.train.batch, self.training.batch);
        c.seed = Some(resolve_seed(self.seed, c.seed)?);
        if let Some(o) = &self.out {
            c.output = o.clone();
        }
        set(&mut c.jobs, self.jobs);
        Ok((c, plan))
    }
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn validated(c: ExperimentConfig) -> Result<ExperimentConfig> {
    c.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(c)
}

fn cmd_run(args: &ExperimentArgs) -> Result<()> {
    let (cfg, _) = args.load()?;
    let cfg = validated(cfg)?;
    let report = eeglab_core::experiment::analyze(&cfg)?;
    write_outputs(&cfg.output, &cfg, None, &report)?;
    print!("{}", report.to_table());
    eprintln!("wrote {}", cfg.output.display());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Band,
    Duration,
    Drift,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_enum)]
    axis: Option<Axis>,
    /// Band presets or LOW-HIGH pairs, minutes, or drift amplitudes.
    #[arg(long, num_args = 1.., value_delimiter = ' ')]
    values: Vec<String>,
    /// Derive a distinct seed for each value.
    #[arg(long)]
    fresh_seeds: bool,
}

fn parse_values(axis: Axis, values: &[String]) -> Result<Vec<SweepValue>> {
    values
        .iter()
        .map(|v| {
            let num = || v.parse::<f64>().map_err(|e| config_error(format!("value {v}: {e}")));
            Ok(match axis {
                Axis::Band => SweepValue::Band(parse_band(v).map_err(config_error)?),
                Axis::Duration => SweepValue::Duration(num()?),
                Axis::Drift => SweepValue::DriftAmplitude(num()?),
            })
        })
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let (cfg, recorded) = args.experiment.load()?;
    let plan = match (args.axis, recorded) {
        (Some(axis), _) => SweepPlan {
            values: parse_values(axis, &args.values)?,
            fresh_seeds: args.fresh_seeds,
        },
        (None, Some(plan)) if args.values.is_empty() => plan,
        (None, _) => return Err(config_error("--axis is required")),
    };
    if plan.values.is_empty() {
        return Err(config_error("--values must not be empty"));
    }
    let cfg = validated(cfg)?;
    let report = sweep(&cfg, &plan.values, plan.fresh_seeds, cfg.jobs).map_err(classify)?;
    write_outputs(&cfg.output, &cfg, Some(&plan), &report)?;
    print!("{}", report.to_table());
    eprintln!("wrote {}", cfg.output.display());
    Ok(())
}

/// Config problems surfaced by the library become exit-code-2 errors.
fn classify(e: eeglab_core::Error) -> anyhow::Error {
    match e {
        eeglab_core::Error::Config { .. } | eeglab_core::Error::Spec(_) => config_error(e.to_string()),
        other => other.into(),
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

const RECORDINGS: &str = "recordings.eegb";
const SCHEDULE: &str = "schedule.json";
const SEGMENTS: &str = "segments.eegb";
const BLANKS: &str = "blanks.eegb";

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let (cfg, _) = args.experiment.load()?;
    let cfg = validated(cfg)?;
    let seed = cfg.seed()?;
    let cohort = cfg.cohort();
    let schedule = eeglab_core::synth::generate_schedule(
        cohort.design,
        cohort.n_classes,
        cohort.images_per_class,
        cohort.sessions,
        derive_seed(seed, &[0xC0, 1]),
    )?;
    let params = eeglab_core::synth::NeuralModelParams {
        seed: derive_seed(seed, &[0xC0, 2]),
        ..cohort.params.clone()
    };
    let mut recordings = Vec::new();
    for subject in 0..cohort.subjects {
        let s = synthesize_recording(&schedule, &params, cohort.channels, cohort.sampling_rate, subject)?;
        recordings.extend(s.sessions.into_iter().map(|r| Segment {
            samples: r.samples,
            class_label: None,
            block_label: 0,
            blank_neighbors: None,
            subject_id: r.subject_id,
            session_id: r.session_id,
            onset_ms: 0,
            image_id: None,
        }));
    }
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let fs_hz = rate_hz(cohort.sampling_rate)?;
    write_eegb(BufWriter::new(File::create(cfg.output.join(RECORDINGS))?), fs_hz, &recordings)?;
    fs::write(cfg.output.join(SCHEDULE), schedule.to_json()? + "\n")?;
    eprintln!(
        "wrote {} recording(s) of {} subject(s) to {}",
        recordings.len(),
        cohort.subjects,
        cfg.output.display()
    );
    Ok(())
}

fn rate_hz(fs: f64) -> Result<u32> {
    if fs.fract() != 0.0 || fs < 1.0 || fs > u32::MAX as f64 {
        return Err(config_error(format!("sampling rate {fs} must be a whole number of Hz for EEGB")));
    }
    Ok(fs as u32)
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    /// Also cut blank intervals into windows.
    #[arg(long)]
    blanks: bool,
    /// Leave segments un-normalized.
    #[arg(long)]
    no_zscore: bool,
    #[arg(long)]
    out: PathBuf,
}

fn read_schedule(dir: &Path) -> Result<StimulusSchedule> {
    let p = dir.join(SCHEDULE);
    Ok(StimulusSchedule::from_json(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?)
}

fn read_segments(path: &Path) -> Result<(u32, Vec<Segment>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let file = read_eegb(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    Ok((file.sampling_rate_hz, file.segments))
}

fn cmd_preprocess(args: &PreprocessArgs) -> Result<()> {
    let schedule = read_schedule(&args.input)?;
    let (fs_hz, recordings) = read_segments(&args.input.join(RECORDINGS))?;
    let band = args.filter.band()?.unwrap_or(Some((55.0, 95.0)));
    let pre = Preprocessing {
        band,
        notch: args.filter.notch.then_some(NOTCH_50HZ),
        phase: args.filter.phase.map_or(Phase::Causal, Phase::from),
        contaminate: args.filter.contaminate.then_some(COMPARISON_BAND),
        zscore: !args.no_zscore,
    };
    let (mut stimuli, mut blanks) = (Vec::new(), Vec::new());
    for r in recordings {
        let rec = Recording::new(r.samples, f64::from(fs_hz), r.subject_id, r.session_id)?;
        let s = segment_session(&rec, &schedule, &pre, args.blanks).map_err(classify)?;
        stimuli.extend(s.stimuli);
        blanks.extend(s.blanks);
    }
    fs::create_dir_all(&args.out)?;
    write_eegb(BufWriter::new(File::create(args.out.join(SEGMENTS))?), fs_hz, &stimuli)?;
    if args.blanks {
        write_eegb(BufWriter::new(File::create(args.out.join(BLANKS))?), fs_hz, &blanks)?;
    }
    fs::write(args.out.join(SCHEDULE), schedule.to_json()? + "\n")?;
    eprintln!("wrote {} segment(s), {} blank window(s) to {}", stimuli.len(), blanks.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
struct DataArgs {
    /// Directory written by `preprocess`.
    #[arg(long)]
    data: PathBuf,
    /// Restrict to one subject.
    #[arg(long)]
    subject: Option<u32>,
    /// Split seed; must match between `train` and `diagnose`.
    #[arg(long)]
    seed: Option<u64>,
}

impl DataArgs {
    fn split(&self) -> Result<(u64, DatasetSplit)> {
        let seed = resolve_seed(self.seed, None)?;
        let schedule = read_schedule(&self.data)?;
        let (_, mut segs) = read_segments(&self.data.join(SEGMENTS))?;
        attach_schedule(&mut segs, &schedule)?;
        if let Some(s) = self.subject {
            segs.retain(|x| x.subject_id == s);
            if segs.is_empty() {
                bail!("no segments for subject {s}");
            }
        }
        let split = make_splits(segs, Ratios::default(), derive_seed(seed, &[0x5917]))?;
        Ok((seed, split))
    }

    fn blanks(&self) -> Result<Vec<Segment>> {
        let schedule = read_schedule(&self.data)?;
        let path = self.data.join(BLANKS);
        if !path.exists() {
            bail!("{} not found; preprocess with --blanks", path.display());
        }
        let (_, mut segs) = read_segments(&path)?;
        attach_schedule(&mut segs, &schedule)?;
        if let Some(s) = self.subject {
            segs.retain(|x| x.subject_id == s);
        }
        Ok(segs)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// class or block.
    #[arg(long, value_parser = parse_kebab::<LabelKind>, default_value = "class")]
    labels: LabelKind,
    #[command(flatten)]
    training: TrainingArgs,
    /// Model blob; the training history goes next to it as CSV.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    if args.labels == LabelKind::BlankPair {
        return Err(config_error("train on class labels and diagnose with --labels blank-pair"));
    }
    let (seed, split) = args.data.split()?;
    let n_out = match args.labels {
        LabelKind::Block => split.train.iter().map(|s| s.block_label as usize + 1).max().unwrap_or(0),
        _ => split.train.iter().filter_map(|s| s.class_label).map(|c| c as usize + 1).max().unwrap_or(0),
    };
    let channels = split.train.first().map_or(0, Segment::n_channels);
    let mut spec = ModelSpec::new(args.model.model.unwrap_or(Family::PooledCnn), channels, SEGMENT_LEN, n_out);
    set(&mut spec.head, args.model.head);
    set(&mut spec.encoder_dim, args.model.encoder_dim);
    set(&mut spec.downsample, args.model.downsample);
    spec.validate().map_err(classify)?;
    let mut cfg = TrainConfig {
        epochs: 30,
        seed: derive_seed(seed, &[0x7A1]),
        ..TrainConfig::default()
    };
    set(&mut cfg.epochs, args.training.epochs);
    set(&mut cfg.lr, args.training.lr);
    set(&mut cfg.batch, args.training.batch);
    cfg.validate().map_err(classify)?;
    let model = build(spec, derive_seed(cfg.seed, &[0x1A17, 0]))?;
    let model = train(model, &split, args.labels, &cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_model(BufWriter::new(File::create(&args.out)?), &model)?;
    let history = args.out.with_extension("history.csv");
    write_history_csv(BufWriter::new(File::create(&history)?), &model.history)?;
    let selected = model.selected_epoch.unwrap_or(0);
    let val_acc = model.history.get(selected).map_or(0.0, |r| r.val_acc);
    eprintln!(
        "selected epoch {selected} (val acc {:.2}%); wrote {} and {}",
        100.0 * val_acc,
        args.out.display(),
        history.display()
    );
    Ok(())
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model blob written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// class, block or blank-pair.
    #[arg(long, value_parser = parse_kebab::<LabelKind>, default_value = "class")]
    labels: LabelKind,
    /// Also compute the one-hotness of the test-set class-mean encodings.
    #[arg(long)]
    one_hot: bool,
    /// Directory for report.csv and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let f = File::open(&args.checkpoint).with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let model = load_model(BufReader::new(f))?;
    let net = &model.network;
    let (seed, split) = args.data.split()?;
    let name = format!("{}/{}", net.spec().family.name(), net.spec().head.name());
    let n = net.spec().n_classes;
    let condition = args.data.data.display().to_string();
    let test = match args.labels {
        LabelKind::BlankPair => args.data.blanks()?,
        _ => split.test.clone(),
    };
    let subjects: std::collections::BTreeSet<u32> = test.iter().map(|s| s.subject_id).collect();
    let mut per = Vec::new();
    for s in subjects {
        let part: Vec<Segment> = test.iter().filter(|x| x.subject_id == s).cloned().collect();
        per.push((s, evaluate(net, &part, args.labels)?));
    }
    let acc = evaluate(net, &test, args.labels)?;
    let mut row = ReportRow::new(&name, &condition, "pooled", args.labels, acc, chance(args.labels, n)).with_subjects(&per);
    row.accuracy = 100.0 * acc;
    row.increase_over_chance = row.accuracy - row.chance;
    let mut report = DiagnosticReport::new("diagnose")
        .meta("seed", seed)
        .meta("checkpoint", args.checkpoint.display().to_string())
        .meta("selected_epoch", model.selected_epoch);
    report.rows.push(row);
    if args.one_hot {
        let mut encodings = Vec::new();
        let mut labels = Vec::new();
        for s in &split.test {
            encodings.push(net.encode(s.samples.view())?);
            labels.push(match args.labels {
                LabelKind::Block => s.block_label as usize,
                _ => s.class_label.map_or(0, usize::from),
            });
        }
        let oh = one_hotness(&EncodingMatrix::from_encodings(&encodings, &labels)?);
        report = report.meta("one_hotness", oh.value).meta("one_hotness_underflow", oh.underflow);
    }
    print!("{}", report.to_table());
    if let Some(oh) = report.metadata.get("one_hotness") {
        println!("one-hotness {oh}");
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
        fs::write(dir.join("report.json"), report.to_json()?)?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json files or directories containing one; rows are concatenated.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut merged: Option<DiagnosticReport> = None;
    for p in &args.inputs {
        let path = if p.is_dir() { p.join("report.json") } else { p.clone() };
        let r = DiagnosticReport::from_json(&read_text(&path)?).with_context(|| format!("parsing {}", path.display()))?;
        match &mut merged {
            Some(m) => m.rows.extend(r.rows),
            None => merged = Some(r),
        }
    }
    let report = merged.expect("clap requires at least one input");
    match args.format {
        Format::Table => print!("{}", report.to_table()),
        Format::Csv => print!("{}", report.to_csv()),
        Format::Json => print!("{}", report.to_json()?),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<eeglab_core::Error>(),
                Some(eeglab_core::Error::Config { .. } | eeglab_core::Error::Spec(_))
            )
    });
    if config {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
