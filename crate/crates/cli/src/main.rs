use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use neaf::audio::{load_wav, save_wav, WavEncoding};
use neaf::bench::{
    emit_report, format_report, run_benchmark, run_experiment, run_sweep, split_values, sweep_preset, ExperimentConfig,
    InputSource, LeaderboardRow, MatrixConfig, ReportFormat, RowStatus,
};
use neaf::gradsuite::{run_suite, SuiteGroup, TOLERANCE};
use neaf::metrics::{LogBase, MetricSettings, SnrConvention};
use neaf::models::checkpoint::load_checkpoint;
use neaf::trainer::{evaluate, render};

/// Seed applied to every config, overriding what the files say.
const SEED_ENV: &str = "NEAF_SEED";

#[derive(Parser, Debug)]
#[command(name = "neaf", version, about = "Fit, evaluate and benchmark neural amplitude fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one experiment config and print its metrics.
    Fit {
        config: PathBuf,
        /// Artifact directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        metrics: MetricFlags,
    },
    /// Score a checkpoint against a WAV file at the file's own sample positions.
    Eval {
        checkpoint: PathBuf,
        wav: PathBuf,
        /// Average channels instead of rejecting multichannel input.
        #[arg(long)]
        downmix: bool,
        #[command(flatten)]
        metrics: MetricFlags,
    },
    /// Sample a checkpoint at any rate and write a WAV file.
    Render {
        checkpoint: PathBuf,
        #[arg(long)]
        rate: u32,
        #[arg(long)]
        duration: f64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SampleFormat::Float32)]
        sample_format: SampleFormat,
    },
    /// Run a benchmark matrix and emit a leaderboard.
    Bench {
        matrix: PathBuf,
        /// Apply the matrix's `desk_scale` reductions.
        #[arg(long)]
        desk_scale: bool,
        /// Replace the matrix input with this WAV file.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        report: ReportFlags,
        #[command(flatten)]
        metrics: MetricFlags,
    },
    /// Vary one hyperparameter of an experiment config.
    Sweep {
        config: PathBuf,
        /// One of L, sigma, omega, a, omega_schedule.
        #[arg(long, required_unless_present = "preset")]
        param: Option<String>,
        /// Comma-separated values; brackets group lists, e.g. `[64,5,3],[8,8,8]`.
        #[arg(long, allow_hyphen_values = true, requires = "param")]
        values: Option<String>,
        /// A named grid such as `neff_L` or `sine_omega`.
        #[arg(long, conflicts_with_all = ["param", "values"])]
        preset: Option<String>,
        #[command(flatten)]
        report: ReportFlags,
        #[command(flatten)]
        metrics: MetricFlags,
    },
    /// Finite-difference check of the activations, encodings and model families.
    Gradcheck {
        #[arg(long, value_enum)]
        family: Option<Family>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct ReportFlags {
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the extension of `--out`, else csv.
    #[arg(long)]
    format: Option<ReportFormat>,
}

impl ReportFlags {
    fn format(&self) -> ReportFormat {
        self.format.unwrap_or_else(|| {
            self.out
                .as_ref()
                .and_then(|p| p.extension())
                .and_then(|e| e.to_str())
                .and_then(|e| e.parse().ok())
                .unwrap_or(ReportFormat::Csv)
        })
    }
}

#[derive(Args, Debug)]
struct MetricFlags {
    #[arg(long, value_enum)]
    snr_convention: Option<SnrFlag>,
    #[arg(long, value_enum)]
    log_base: Option<LogBaseFlag>,
}

impl MetricFlags {
    fn apply(&self, m: &mut MetricSettings) {
        if let Some(c) = self.snr_convention {
            m.snr_convention = match c {
                SnrFlag::Literal => SnrConvention::Literal,
                SnrFlag::Conventional => SnrConvention::Conventional,
            };
        }
        if let Some(b) = self.log_base {
            m.lsd_log_base = match b {
                LogBaseFlag::E => LogBase::Natural,
                LogBaseFlag::Ten => LogBase::Ten,
            };
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SnrFlag {
    Literal,
    Conventional,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogBaseFlag {
    E,
    #[value(name = "10")]
    Ten,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SampleFormat {
    Pcm16,
    Float32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Activation,
    Encoding,
    Mlp,
    FourierKan,
    BsplineKan,
}

impl Family {
    fn group(self) -> SuiteGroup {
        match self {
            Self::Activation => SuiteGroup::Activation,
            Self::Encoding => SuiteGroup::Encoding,
            Self::Mlp => SuiteGroup::Mlp,
            Self::FourierKan => SuiteGroup::FourierKan,
            Self::BsplineKan => SuiteGroup::BsplineKan,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads an experiment config and applies the seed and metric overrides.
fn load_experiment(path: &Path, metrics: &MetricFlags) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = read_json(path)?;
    if let Some(seed) = env_seed()? {
        config.override_seed(seed);
    }
    metrics.apply(&mut config.metrics);
    Ok(config)
}

fn write_rows(rows: &[LeaderboardRow], flags: &ReportFlags) -> Result<bool> {
    let format = flags.format();
    match &flags.out {
        Some(path) => emit_report(rows, format, path)?,
        None => print!("{}", format_report(rows, format)),
    }
    Ok(rows.iter().all(|r| r.status != RowStatus::Error))
}

/// `Ok(false)` means the command ran but something it ran failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Fit { config, out, metrics } => {
            let mut config = load_experiment(&config, &metrics)?;
            if out.is_some() {
                config.output_dir = out;
            }
            config.validate()?;
            let outcome = run_experiment(&config);
            let row = &outcome.row;
            match &outcome.report {
                Some(report) => println!("{}", serde_json::to_string_pretty(report)?),
                None => eprintln!("{}: {}", status_name(row.status), row.note),
            }
            Ok(row.status != RowStatus::Error)
        }
        Command::Eval {
            checkpoint,
            wav,
            downmix,
            metrics,
        } => {
            let (spec, params) = load_checkpoint(&checkpoint)?;
            let clip = load_wav(&wav, downmix)?;
            let mut settings = MetricSettings::default();
            metrics.apply(&mut settings);
            let report = evaluate(&spec, &params, &clip, &settings)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Render {
            checkpoint,
            rate,
            duration,
            out,
            sample_format,
        } => {
            let (spec, params) = load_checkpoint(&checkpoint)?;
            let clip = render(&spec, &params, rate, duration)?;
            let encoding = match sample_format {
                SampleFormat::Pcm16 => WavEncoding::Pcm16,
                SampleFormat::Float32 => WavEncoding::Float32,
            };
            save_wav(&clip, &out, encoding)?;
            eprintln!("wrote {} samples at {} Hz to {}", clip.len(), rate, out.display());
            Ok(true)
        }
        Command::Bench {
            matrix,
            desk_scale,
            input,
            report,
            metrics,
        } => {
            let mut matrix: MatrixConfig = read_json(&matrix)?;
            if let Some(path) = input {
                matrix.input = InputSource::Wav { path, downmix: true };
            }
            metrics.apply(&mut matrix.metrics);
            let mut configs = matrix.expand(desk_scale);
            if let Some(seed) = env_seed()? {
                configs.iter_mut().for_each(|c| c.override_seed(seed));
            }
            let rows = run_benchmark(&configs, report.jobs);
            write_rows(&rows, &report)
        }
        Command::Sweep {
            config,
            param,
            values,
            preset,
            report,
            metrics,
        } => {
            let base = load_experiment(&config, &metrics)?;
            let (param, values) = match preset {
                Some(name) => {
                    let (p, v) = sweep_preset(&name)?;
                    (p.to_string(), v)
                }
                None => (
                    param.expect("clap requires --param without --preset"),
                    values.as_deref().map(split_values).unwrap_or_default(),
                ),
            };
            let rows = run_sweep(&base, &param, &values, report.jobs)?;
            write_rows(&rows, &report)
        }
        Command::Gradcheck { family, seed } => {
            let seed = env_seed()?.unwrap_or(seed);
            let cases = run_suite(seed, |g| family.is_none_or(|f| f.group() == g));
            let mut all_ok = true;
            for case in &cases {
                let ok = case.passed();
                all_ok &= ok;
                let verdict = if ok { "PASS" } else { "FAIL" };
                match &case.outcome {
                    Ok(r) => println!(
                        "{verdict} {:?} {}: max rel {:.2e} over {} coordinates ({} below resolution)",
                        case.group,
                        case.name,
                        r.max_relative_error,
                        r.checked,
                        r.unresolved.len()
                    ),
                    Err(e) => println!("{verdict} {:?} {}: {e}", case.group, case.name),
                }
            }
            println!("tolerance {TOLERANCE:e}: {} of {} cases pass", cases.iter().filter(|c| c.passed()).count(), cases.len());
            Ok(all_ok)
        }
    }
}

fn status_name(s: RowStatus) -> &'static str {
    match s {
        RowStatus::Ok => "ok",
        RowStatus::Diverged => "diverged",
        RowStatus::Error => "error",
    }
}
