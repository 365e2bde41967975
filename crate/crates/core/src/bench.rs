//! Experiment configs, the benchmark matrix, parameter sweeps and
//! leaderboard reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationSpec;
use crate::audio::{load_wav, music_clip, sample_count, synth_signal, to_dataset, AudioClip, AudioError, SynthSpec};
use crate::encoding::EncodingConfig;
use crate::metrics::{float_or_inf, MetricSettings, MetricsReport};
use crate::models::checkpoint::save_checkpoint;
use crate::models::{InitScheme, MlpConfig, ModelSpec};
use crate::trainer::{evaluate_fit, fit, write_loss_csv, FitResult, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown sweep parameter `{name}`; valid names are {valid}")]
    UnknownParam { name: String, valid: String },
    #[error("unknown sweep preset `{name}`; valid presets are {valid}")]
    UnknownPreset { name: String, valid: String },
    #[error("sweep parameter `{param}` does not apply: {reason}")]
    NotApplicable { param: String, reason: String },
    #[error("cannot parse report: {0}")]
    Parse(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Where a run's audio comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSource {
    Wav {
        path: PathBuf,
        #[serde(default)]
        downmix: bool,
    },
    /// A sum of sinusoids.
    Tones(SynthSpec),
    /// The built-in synthetic music excerpt.
    Music { sample_rate: u32, duration: f64 },
}

impl InputSource {
    pub fn validate(&self) -> Result<(), BenchError> {
        match self {
            Self::Wav { path, .. } => {
                if !path.is_file() {
                    return Err(BenchError::Config(format!("input file {} does not exist", path.display())));
                }
            }
            Self::Tones(s) => {
                if s.sample_rate == 0 || !(s.duration > 0.0 && s.duration.is_finite()) {
                    return Err(BenchError::Config("tones need a positive sample rate and duration".into()));
                }
            }
            Self::Music { sample_rate, duration } => {
                if *sample_rate == 0 || !(*duration > 0.0 && duration.is_finite()) {
                    return Err(BenchError::Config("music needs a positive sample rate and duration".into()));
                }
            }
        }
        Ok(())
    }

    /// Loads the clip, keeping at most the first `max_seconds`.
    pub fn load(&self, max_seconds: Option<f64>) -> Result<AudioClip, BenchError> {
        let clip = match self {
            Self::Wav { path, downmix } => load_wav(path, *downmix)?,
            Self::Tones(s) => {
                let mut s = s.clone();
                if let Some(m) = max_seconds {
                    s.duration = s.duration.min(m);
                }
                synth_signal(&s)?
            }
            Self::Music { sample_rate, duration } => {
                music_clip(*sample_rate, max_seconds.map_or(*duration, |m| duration.min(m)))
            }
        };
        Ok(match max_seconds {
            Some(m) if clip.duration() > m => {
                let n = sample_count(m, clip.sample_rate);
                AudioClip::new(clip.samples[..n].to_vec(), clip.sample_rate)?
            }
            _ => clip,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub input: InputSource,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
    /// Scale the clip to peak 1 before fitting; off keeps amplitudes as recorded.
    #[serde(default)]
    pub normalize: bool,
    /// Clip length limit in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.input.validate()?;
        self.model.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.train.validate()?;
        if let Some(m) = self.max_seconds {
            if !(m > 0.0) {
                return Err(BenchError::Config(format!("max_seconds must be positive, got {m}")));
            }
        }
        Ok(())
    }

    /// Replaces every seed: shuffling, initialization and RFF sampling.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        if self.train.init_seed.is_some() {
            self.train.init_seed = Some(seed);
        }
        if let ModelSpec::Mlp(MlpConfig {
            encoding: EncodingConfig::Rff { seed: s, .. },
            ..
        }) = &mut self.model
        {
            *s = seed;
        }
    }

    pub fn load_clip(&self) -> Result<AudioClip, BenchError> {
        let clip = self.input.load(self.max_seconds)?;
        Ok(if self.normalize { clip.normalize_peak() } else { clip })
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-{}",
                self.model.family(),
                self.model.activation_label(),
                self.model.encoding_label()
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    /// Training blew up; the row carries no metrics.
    Diverged,
    /// The run could not start or finish for a reason other than divergence.
    Error,
}

impl RowStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Diverged => "diverged",
            Self::Error => "error",
        }
    }
}

mod opt_float {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::float_or_inf;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => float_or_inf::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    struct Wrap(#[serde(with = "float_or_inf")] f64);

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub activation: String,
    pub encoding: String,
    pub family: String,
    pub hyper: String,
    pub param_count: usize,
    #[serde(with = "opt_float")]
    pub snr_db: Option<f64>,
    #[serde(with = "opt_float")]
    pub lsd: Option<f64>,
    pub status: RowStatus,
    /// Failure reason for non-ok rows.
    #[serde(default)]
    pub note: String,
}

impl LeaderboardRow {
    fn for_model(model: &ModelSpec) -> Self {
        Self {
            activation: model.activation_label(),
            encoding: model.encoding_label().to_string(),
            family: model.family().to_string(),
            hyper: model.hyper_label(),
            param_count: model.param_count(),
            snr_db: None,
            lsd: None,
            status: RowStatus::Error,
            note: String::new(),
        }
    }
}

/// Everything one run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub row: LeaderboardRow,
    pub fit: Option<FitResult>,
    pub report: Option<MetricsReport>,
}

/// Fits and scores one config. Failures land in the row instead of
/// propagating; artifacts are written when `output_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> RunOutcome {
    let mut row = LeaderboardRow::for_model(&config.model);
    let result = (|| -> Result<(FitResult, MetricsReport), BenchError> {
        config.validate()?;
        let clip = config.load_clip()?;
        let dataset = to_dataset(&clip)?;
        let fit = fit(&config.model, &dataset, &config.train)?;
        let report = evaluate_fit(&config.model, &fit, &clip, &config.metrics)?;
        Ok((fit, report))
    })();
    match result {
        Ok((fit, report)) => {
            row.snr_db = Some(report.snr_db);
            row.lsd = Some(report.lsd);
            row.status = RowStatus::Ok;
            if let Some(dir) = &config.output_dir {
                if let Err(e) = write_artifacts(dir, config, &fit, &report) {
                    row.status = RowStatus::Error;
                    row.snr_db = None;
                    row.lsd = None;
                    row.note = e.to_string();
                }
            }
            RunOutcome {
                row,
                fit: Some(fit),
                report: Some(report),
            }
        }
        Err(e) => {
            let diverged = match &e {
                BenchError::Train(t) => t.is_divergence(),
                _ => false,
            };
            row.status = if diverged { RowStatus::Diverged } else { RowStatus::Error };
            row.note = e.to_string();
            RunOutcome {
                row,
                fit: None,
                report: None,
            }
        }
    }
}

/// Writes `model.ckpt`, `report.json` and `loss.csv` into `dir`.
pub fn write_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    fit: &FitResult,
    report: &MetricsReport,
) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_checkpoint(dir.join("model.ckpt"), &config.model, &fit.params)
        .map_err(|e| BenchError::Train(TrainError::Model(e)))?;
    let report_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&report_path, json + "\n").map_err(io_err(&report_path))?;
    write_loss_csv(dir.join("loss.csv"), &fit.loss_history)?;
    Ok(())
}

fn family_rank(family: &str) -> u8 {
    match family {
        "mlp" => 0,
        "fourier_kan" => 1,
        "bspline_kan" => 2,
        _ => 3,
    }
}

/// Sort key of a row: family, then activation, then encoding.
fn row_order(a: &LeaderboardRow, b: &LeaderboardRow) -> std::cmp::Ordering {
    let enc = |e: &str| match e {
        "identity" => 0,
        "rff" => 1,
        "neff" => 2,
        _ => 3,
    };
    family_rank(&a.family)
        .cmp(&family_rank(&b.family))
        .then_with(|| a.activation.cmp(&b.activation))
        .then_with(|| enc(&a.encoding).cmp(&enc(&b.encoding)))
}

/// Runs every config on a pool of `jobs` workers and sorts the rows.
/// Each fit is single-threaded, so rows do not depend on `jobs`.
pub fn run_benchmark(configs: &[ExperimentConfig], jobs: usize) -> Vec<LeaderboardRow> {
    let mut rows = run_all(configs, jobs);
    rows.sort_by(row_order);
    rows
}

fn run_all(configs: &[ExperimentConfig], jobs: usize) -> Vec<LeaderboardRow> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| configs.par_iter().map(|c| run_experiment(c).row).collect())
}

/// Knobs a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Encoding frequency count.
    L,
    /// RFF standard deviation.
    Sigma,
    /// Activation frequency `omega`.
    Omega,
    /// Activation hyperparameter `a`.
    A,
    /// Fourier-KAN per-layer frequency limits.
    OmegaSchedule,
}

pub const SWEEP_PARAMS: [&str; 5] = ["L", "sigma", "omega", "a", "omega_schedule"];

impl std::str::FromStr for SweepParam {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "L" | "l" => Self::L,
            "sigma" => Self::Sigma,
            "omega" => Self::Omega,
            "a" => Self::A,
            "omega_schedule" => Self::OmegaSchedule,
            _ => {
                return Err(BenchError::UnknownParam {
                    name: s.to_string(),
                    valid: SWEEP_PARAMS.join(", "),
                })
            }
        })
    }
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            Self::L => "L",
            Self::Sigma => "sigma",
            Self::Omega => "omega",
            Self::A => "a",
            Self::OmegaSchedule => "omega_schedule",
        }
    }

    /// Checks that the knob exists on `model`.
    fn check(self, model: &ModelSpec) -> Result<(), BenchError> {
        let not = |reason: String| {
            Err(BenchError::NotApplicable {
                param: self.name().to_string(),
                reason,
            })
        };
        match (self, model) {
            (Self::L, ModelSpec::Mlp(c)) if !matches!(c.encoding, EncodingConfig::Identity) => Ok(()),
            (Self::Sigma, ModelSpec::Mlp(c)) if matches!(c.encoding, EncodingConfig::Rff { .. }) => Ok(()),
            (Self::Omega | Self::A, ModelSpec::Mlp(c)) => {
                if c.activation.hyper_value(self.name()).is_some() {
                    Ok(())
                } else {
                    not(format!("activation {} has no `{}`", c.activation.kind(), self.name()))
                }
            }
            (Self::OmegaSchedule, ModelSpec::FourierKan(_)) => Ok(()),
            (Self::L | Self::Sigma, ModelSpec::Mlp(c)) => not(format!("the {} encoding has no `{}`", c.encoding.kind(), self.name())),
            _ => not(format!("{} models have no `{}`", model.family(), self.name())),
        }
    }

    /// `model` with the knob set to `value`; errors describe bad values.
    fn apply(self, model: &ModelSpec, value: &str) -> Result<ModelSpec, String> {
        let mut model = model.clone();
        let number = || value.trim().parse::<f64>().map_err(|_| format!("`{value}` is not a number"));
        let count = || value.trim().parse::<usize>().map_err(|_| format!("`{value}` is not a positive integer"));
        match (self, &mut model) {
            (Self::L, ModelSpec::Mlp(c)) => {
                let n = count()?;
                match &mut c.encoding {
                    EncodingConfig::Neff { l } | EncodingConfig::Rff { l, .. } => *l = n,
                    EncodingConfig::Identity => unreachable!("checked"),
                }
                c.widths[0] = 1;
            }
            (Self::Sigma, ModelSpec::Mlp(c)) => {
                if let EncodingConfig::Rff { sigma, .. } = &mut c.encoding {
                    *sigma = number()?;
                }
            }
            (Self::Omega | Self::A, ModelSpec::Mlp(c)) => {
                c.activation.set_hyper(self.name(), number()?).map_err(|e| e.to_string())?;
            }
            (Self::OmegaSchedule, ModelSpec::FourierKan(c)) => {
                c.omega_schedule = parse_list(value)?;
            }
            _ => unreachable!("checked"),
        }
        model.validate().map_err(|e| e.to_string())?;
        Ok(model)
    }
}

/// Parses `[64,5,3]`, `64/5/3` or `64;5;3`.
fn parse_list(value: &str) -> Result<Vec<usize>, String> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split([',', '/', ';', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("`{s}` in `{value}` is not a positive integer")))
        .collect()
}

/// Splits a comma-separated value list, leaving commas inside brackets alone.
pub fn split_values(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in list.chars() {
        match ch {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur).trim().to_string());
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// One run per value with everything else held fixed. Rows keep the order
/// of `values`; bad values become error rows.
pub fn run_sweep(base: &ExperimentConfig, param: &str, values: &[String], jobs: usize) -> Result<Vec<LeaderboardRow>, BenchError> {
    let param: SweepParam = param.parse()?;
    if values.is_empty() {
        return Ok(Vec::new());
    }
    param.check(&base.model)?;
    let mut configs = Vec::with_capacity(values.len());
    let mut bad: Vec<Option<LeaderboardRow>> = Vec::with_capacity(values.len());
    for v in values {
        match param.apply(&base.model, v) {
            Ok(model) => {
                let mut c = base.clone();
                c.model = model;
                c.name = Some(format!("{}-{}={}", base.label(), param.name(), v));
                c.output_dir = base.output_dir.as_ref().map(|d| d.join(format!("{}={}", param.name(), sanitize(v))));
                configs.push(c);
                bad.push(None);
            }
            Err(reason) => {
                let mut row = LeaderboardRow::for_model(&base.model);
                row.hyper = format!("{}={}", param.name(), v);
                row.note = reason;
                bad.push(Some(row));
            }
        }
    }
    let mut ran = run_all(&configs, jobs).into_iter();
    Ok(bad
        .into_iter()
        .map(|b| b.unwrap_or_else(|| ran.next().expect("one row per config")))
        .collect())
}

fn sanitize(v: &str) -> String {
    v.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Value grids of the published sensitivity studies, as `(param, values)`.
pub fn sweep_preset(name: &str) -> Result<(&'static str, Vec<String>), BenchError> {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Ok(match name {
        "neff_L" => ("L", v(&["2", "4", "8", "16", "32", "64"])),
        "rff_L" => ("L", v(&["2", "4", "8", "16", "32", "64", "128", "256"])),
        "rff_sigma" => ("sigma", v(&["1", "20", "40", "60", "80", "100", "1000", "10000"])),
        "gaussian_a" => ("a", v(&["0.01", "0.1", "0.2", "0.3", "1.0"])),
        "sine_omega" => ("omega", v(&["3", "30", "300", "3000", "30000", "300000"])),
        "omega_schedule" => ("omega_schedule", v(&["[64,5,3]", "[8,8,8]", "[3,5,64]", "[16,16,16]"])),
        _ => {
            return Err(BenchError::UnknownPreset {
                name: name.to_string(),
                valid: SWEEP_PRESETS.join(", "),
            })
        }
    })
}

pub const SWEEP_PRESETS: [&str; 6] = ["neff_L", "rff_L", "rff_sigma", "gaussian_a", "sine_omega", "omega_schedule"];

/// The MLP part of a matrix: every activation under every encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpGrid {
    pub widths: Vec<usize>,
    pub activations: Vec<ActivationSpec>,
    pub encodings: Vec<EncodingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
}

/// Reductions applied by `--desk-scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskScale {
    pub max_seconds: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    /// Replacement MLP widths.
    pub mlp_widths: Option<Vec<usize>>,
    /// Replacement for the matrix's `models` list.
    pub models: Option<Vec<ModelSpec>>,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            max_seconds: 2.0,
            epochs: 300,
            batch_size: None,
            lr0: None,
            mlp_widths: None,
            models: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub input: InputSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpGrid>,
    /// Extra models run as-is, typically the KAN baselines.
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub desk_scale: DeskScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl MatrixConfig {
    /// One experiment per cell.
    pub fn expand(&self, desk_scale: bool) -> Vec<ExperimentConfig> {
        let mut train = self.train.clone();
        let mut max_seconds = None;
        let mut models = self.models.clone();
        let mut widths = self.mlp.as_ref().map(|g| g.widths.clone());
        if desk_scale {
            let d = &self.desk_scale;
            train.epochs = d.epochs;
            if let Some(b) = d.batch_size {
                train.batch_size = b;
            }
            if let Some(lr) = d.lr0 {
                train.lr0 = lr;
            }
            max_seconds = Some(d.max_seconds);
            if let Some(m) = &d.models {
                models = m.clone();
            }
            if let Some(w) = &d.mlp_widths {
                widths = Some(w.clone());
            }
        }

        let mut specs = Vec::new();
        if let (Some(grid), Some(widths)) = (&self.mlp, widths) {
            for act in &grid.activations {
                for enc in &grid.encodings {
                    let mut c = MlpConfig::new(widths.clone(), act.clone()).with_encoding(enc.clone());
                    c.init = grid.init;
                    specs.push(ModelSpec::Mlp(c));
                }
            }
        }
        specs.extend(models);

        specs
            .into_iter()
            .map(|model| {
                let mut c = ExperimentConfig {
                    name: None,
                    input: self.input.clone(),
                    model,
                    train: train.clone(),
                    metrics: self.metrics,
                    normalize: self.normalize,
                    max_seconds,
                    output_dir: None,
                };
                c.output_dir = self.output_dir.as_ref().map(|d| d.join(sanitize(&c.label())));
                c
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
            Self::Markdown => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            _ => Err(BenchError::Config(format!("unknown report format `{s}`; use csv, json or markdown"))),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "activation",
    "encoding",
    "family",
    "hyper",
    "param_count",
    "snr_db",
    "lsd",
    "status",
    "note",
];

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        Some(x) => float_or_inf::format_special(x),
        None => "-".to_string(),
    }
}

pub fn format_report(rows: &[LeaderboardRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).expect("in-memory write");
            for r in rows {
                w.write_record([
                    r.activation.clone(),
                    r.encoding.clone(),
                    r.family.clone(),
                    r.hyper.clone(),
                    r.param_count.to_string(),
                    fmt_metric(r.snr_db),
                    fmt_metric(r.lsd),
                    r.status.as_str().to_string(),
                    r.note.clone(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
        ReportFormat::Json => serde_json::to_string_pretty(rows).expect("rows serialize") + "\n",
        ReportFormat::Markdown => markdown(rows),
    }
}

fn markdown(rows: &[LeaderboardRow]) -> String {
    let cols = &REPORT_COLUMNS[..8];
    let mut out = format!("| {} |\n|{}\n", cols.join(" | "), " --- |".repeat(cols.len()));
    let best = |enc: &str| {
        rows.iter()
            .filter(|r| r.encoding == enc && r.status == RowStatus::Ok)
            .filter_map(|r| r.snr_db)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    };
    for r in rows {
        let snr = match r.snr_db {
            Some(v) if v.is_finite() => format!("{v:.2}"),
            other => fmt_metric(other),
        };
        let snr = if r.status == RowStatus::Ok && r.snr_db.is_some() && r.snr_db == best(&r.encoding) {
            format!("**{snr}**")
        } else {
            snr
        };
        let lsd = match r.lsd {
            Some(v) if v.is_finite() => format!("{v:.3}"),
            other => fmt_metric(other),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.activation,
            r.encoding,
            r.family,
            r.hyper,
            r.param_count,
            snr,
            lsd,
            r.status.as_str()
        );
    }
    out
}

pub fn emit_report(rows: &[LeaderboardRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    std::fs::write(path, format_report(rows, format)).map_err(io_err(path))
}

fn parse_metric(s: &str) -> Result<Option<f64>, BenchError> {
    if s == "-" {
        return Ok(None);
    }
    float_or_inf::parse(s)
        .map(Some)
        .ok_or_else(|| BenchError::Parse(format!("`{s}` is not a number")))
}

/// Reads a CSV leaderboard written by [`format_report`].
pub fn parse_csv_report(text: &str) -> Result<Vec<LeaderboardRow>, BenchError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| BenchError::Parse(e.to_string()))?.clone();
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(BenchError::Parse(format!("unexpected columns {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| BenchError::Parse(e.to_string()))?;
        let status = match &rec[7] {
            "ok" => RowStatus::Ok,
            "diverged" => RowStatus::Diverged,
            "error" => RowStatus::Error,
            other => return Err(BenchError::Parse(format!("unknown status `{other}`"))),
        };
        rows.push(LeaderboardRow {
            activation: rec[0].to_string(),
            encoding: rec[1].to_string(),
            family: rec[2].to_string(),
            hyper: rec[3].to_string(),
            param_count: rec[4].parse().map_err(|_| BenchError::Parse(format!("bad param_count `{}`", &rec[4])))?,
            snr_db: parse_metric(&rec[5])?,
            lsd: parse_metric(&rec[6])?,
            status,
            note: rec[8].to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::audio::ToneComponent;
    use crate::models::FourierKanConfig;

    fn tones() -> InputSource {
        InputSource::Tones(SynthSpec {
            sample_rate: 512,
            duration: 1.0,
            components: vec![ToneComponent {
                amp: 0.5,
                freq: 7.0,
                phase: 0.0,
            }],
        })
    }

    fn quick_train() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            lr0: 1e-3,
            batch_size: 128,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn small_metrics() -> MetricSettings {
        MetricSettings {
            lsd_frame_len: 128,
            lsd_hop: 32,
            ..MetricSettings::default()
        }
    }

    fn row(act: &str, enc: &str, snr: Option<f64>, status: RowStatus) -> LeaderboardRow {
        LeaderboardRow {
            activation: act.into(),
            encoding: enc.into(),
            family: "mlp".into(),
            hyper: "omega=30".into(),
            param_count: 10,
            snr_db: snr,
            lsd: snr.map(|_| 0.5),
            status,
            note: String::new(),
        }
    }

    fn matrix() -> MatrixConfig {
        MatrixConfig {
            input: tones(),
            train: quick_train(),
            metrics: small_metrics(),
            normalize: false,
            mlp: Some(MlpGrid {
                widths: vec![1, 4, 1],
                activations: vec![ActivationSpec::new(ActivationKind::Sine), ActivationSpec::new(ActivationKind::Tanh)],
                encodings: vec![EncodingConfig::Identity, EncodingConfig::Neff { l: 3 }, EncodingConfig::rff(1)],
                init: None,
            }),
            models: Vec::new(),
            desk_scale: DeskScale::default(),
            output_dir: None,
        }
    }

    #[test]
    fn matrix_cardinality_and_order() {
        let configs = matrix().expand(false);
        assert_eq!(configs.len(), 6);
        let rows = run_benchmark(&configs, 2);
        assert_eq!(rows.len(), 6);
        let keys: Vec<(String, String)> = rows.iter().map(|r| (r.activation.clone(), r.encoding.clone())).collect();
        assert_eq!(keys[0], ("sine".into(), "identity".into()));
        assert_eq!(keys[2], ("sine".into(), "neff".into()));
        assert_eq!(keys[3], ("tanh".into(), "identity".into()));
        assert!(rows.iter().all(|r| r.status == RowStatus::Ok), "{rows:?}");
        // Thread count does not change results.
        assert_eq!(run_benchmark(&configs, 1), rows);
    }

    #[test]
    fn desk_scale_shrinks_runs() {
        let mut m = matrix();
        m.desk_scale.epochs = 2;
        m.desk_scale.max_seconds = 0.5;
        m.desk_scale.mlp_widths = Some(vec![1, 3, 1]);
        let c = &m.expand(true)[0];
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.load_clip().unwrap().len(), 256);
        assert_eq!(c.model.param_count(), 3 + 3 + 3 + 1);
    }

    #[test]
    fn divergence_and_errors_are_rows() {
        let base = ExperimentConfig {
            name: None,
            input: tones(),
            model: ModelSpec::Mlp(MlpConfig::new(vec![1, 4, 1], ActivationSpec::new(ActivationKind::Relu))),
            train: TrainConfig {
                lr0: 1e4,
                epochs: 20,
                ..quick_train()
            },
            metrics: small_metrics(),
            normalize: false,
            max_seconds: None,
            output_dir: None,
        };
        let mut missing = base.clone();
        missing.input = InputSource::Wav {
            path: "/nonexistent/clip.wav".into(),
            downmix: false,
        };
        let rows = run_benchmark(&[base, missing], 1);
        assert_eq!(rows.len(), 2);
        let statuses: Vec<RowStatus> = rows.iter().map(|r| r.status).collect();
        assert!(statuses.contains(&RowStatus::Diverged), "{rows:?}");
        assert!(statuses.contains(&RowStatus::Error));
        assert!(rows.iter().all(|r| r.snr_db.is_none() && r.lsd.is_none()));
    }

    #[test]
    fn sweeps() {
        let base = ExperimentConfig {
            name: None,
            input: tones(),
            model: ModelSpec::Mlp(
                MlpConfig::new(vec![1, 4, 1], ActivationSpec::new(ActivationKind::Sine)).with_encoding(EncodingConfig::neff()),
            ),
            train: TrainConfig {
                epochs: 1,
                ..quick_train()
            },
            metrics: small_metrics(),
            normalize: false,
            max_seconds: None,
            output_dir: None,
        };
        let (param, values) = sweep_preset("neff_L").unwrap();
        let rows = run_sweep(&base, param, &values, 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].hyper, "omega=30;L=2");
        assert_eq!(rows[5].hyper, "omega=30;L=64");
        let rows = run_sweep(&base, "omega", &split_values("3,30,300,3000"), 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].hyper, "omega=300;L=12");
        assert!(run_sweep(&base, "omega", &[], 1).unwrap().is_empty());
        let err = run_sweep(&base, "depth", &["3".to_string()], 1).unwrap_err();
        assert!(err.to_string().contains("L, sigma, omega, a, omega_schedule"), "{err}");
        assert!(matches!(
            run_sweep(&base, "sigma", &["3".to_string()], 1),
            Err(BenchError::NotApplicable { .. })
        ));
        let rows = run_sweep(&base, "L", &split_values("4,zero"), 1).unwrap();
        assert_eq!(rows[0].status, RowStatus::Ok);
        assert_eq!(rows[1].status, RowStatus::Error);

        let kan = ExperimentConfig {
            model: ModelSpec::FourierKan(FourierKanConfig {
                widths: vec![1, 2, 2, 1],
                omega_schedule: vec![4, 2, 2],
            }),
            ..base
        };
        let rows = run_sweep(&kan, "omega_schedule", &split_values("[16,5,3],[8,8,8],[1,2]"), 1).unwrap();
        assert_eq!(rows[0].hyper, "omega=[16,5,3]");
        assert_eq!(rows[1].hyper, "omega=[8,8,8]");
        assert_eq!(rows[2].status, RowStatus::Error);
    }

    #[test]
    fn split_respects_brackets() {
        assert_eq!(split_values("[1,2],[3,4]"), vec!["[1,2]", "[3,4]"]);
        assert_eq!(split_values("1, 2 ,3"), vec!["1", "2", "3"]);
        assert!(split_values("").is_empty());
    }

    #[test]
    fn report_formats() {
        assert_eq!(format_report(&[], ReportFormat::Csv), REPORT_COLUMNS.join(",") + "\n");
        assert_eq!(format_report(&[], ReportFormat::Json), "[]\n");
        assert_eq!(format_report(&[], ReportFormat::Markdown).lines().count(), 2);

        let mut diverged = row("quadratic", "identity", None, RowStatus::Diverged);
        diverged.note = "epoch 0, batch 1: loss 1e7 exceeds the divergence threshold".into();
        let rows = vec![
            row("relu", "identity", Some(10.0), RowStatus::Ok),
            row("sine", "identity", Some(20.0), RowStatus::Ok),
            row("sine", "neff", Some(f64::INFINITY), RowStatus::Ok),
            row("tanh", "neff", Some(-0.123456789012345), RowStatus::Ok),
            diverged,
        ];
        let md = format_report(&rows, ReportFormat::Markdown);
        assert!(md.contains("| **20.00** |"), "{md}");
        assert!(md.contains("| 10.00 |"));
        assert!(md.contains("| **inf** |"));
        assert!(md.contains("| - | - | diverged |"));

        let csv = format_report(&rows, ReportFormat::Csv);
        let back = parse_csv_report(&csv).unwrap();
        assert_eq!(back, rows);
        let json = format_report(&back, ReportFormat::Json);
        let from_json: Vec<LeaderboardRow> = serde_json::from_str(&json).unwrap();
        assert_eq!(from_json, rows);
        assert_eq!(format_report(&from_json, ReportFormat::Csv), csv);
    }

    #[test]
    fn seed_override_reaches_rff() {
        let mut c = ExperimentConfig {
            name: None,
            input: tones(),
            model: ModelSpec::Mlp(
                MlpConfig::new(vec![1, 4, 1], ActivationSpec::new(ActivationKind::Sine)).with_encoding(EncodingConfig::rff(1)),
            ),
            train: quick_train(),
            metrics: small_metrics(),
            normalize: false,
            max_seconds: None,
            output_dir: None,
        };
        c.override_seed(42);
        assert_eq!(c.train.seed, 42);
        assert!(matches!(c.model, ModelSpec::Mlp(MlpConfig { encoding: EncodingConfig::Rff { seed: 42, .. }, .. })));
    }

    #[test]
    fn experiment_json_shape() {
        let json = r#"{
            "input": {"kind": "music", "sample_rate": 8000, "duration": 0.5},
            "model": {"family": "fourier_kan", "widths": [1, 2, 1], "omega_schedule": [4, 2]},
            "train": {"epochs": 2, "lr0": 0.001, "batch_size": 512, "seed": 3}
        }"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert_eq!(c.load_clip().unwrap().len(), 4000);
        assert!(serde_json::from_str::<ExperimentConfig>(&json.replace("\"train\"", "\"trian\"")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            output_dir: Some(dir.path().join("run")),
            metrics: small_metrics(),
            ..c
        };
        let out = run_experiment(&c);
        assert_eq!(out.row.status, RowStatus::Ok, "{}", out.row.note);
        for f in ["model.ckpt", "report.json", "loss.csv"] {
            assert!(dir.path().join("run").join(f).is_file(), "{f}");
        }
    }
}
