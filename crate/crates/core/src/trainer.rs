//! Fitting a model to a coordinate dataset with batch-mean MSE and Adam,
//! then scoring and rendering the learned field.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{sample_count, unit_grid, AudioClip, AudioError, CoordinateDataset};
use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::metrics::{lsd_with, snr_with, EpochLoss, MetricSettings, MetricsError, MetricsReport};
use crate::models::{check_params, forward, init_params, predict, ModelError, ModelParams, ModelSpec};
use crate::optim::{adam_step, cosine_anneal, AdamState, OptimError};
use crate::tensor::Tensor;

/// A batch loss above this counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Optim {
        epoch: usize,
        batch: usize,
        #[source]
        source: OptimError,
    },
    #[error("epoch {epoch}, batch {batch}: non-finite loss")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: loss {loss:e} exceeds the divergence threshold")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    /// True when training blew up rather than being misconfigured.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Self::Diverged { .. }
                | Self::NonFiniteLoss { .. }
                | Self::Optim {
                    source: OptimError::NonFiniteGradient { .. },
                    ..
                }
                | Self::Model(ModelError::NonFinite { .. })
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    /// Drives batch shuffling, and initialization unless `init_seed` is set.
    pub seed: u64,
    pub init_seed: Option<u64>,
    pub schedule: Schedule,
    /// Record the full-dataset SNR every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr0: 1e-4,
            batch_size: 16384,
            seed: 0,
            init_seed: None,
            schedule: Schedule::Cosine,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }

    fn lr_at(&self, step: u64, total: u64) -> f64 {
        match self.schedule {
            Schedule::Cosine => cosine_anneal(step, total, self.lr0),
            Schedule::Constant => self.lr0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub loss_history: Vec<EpochLoss>,
    /// `(epoch, snr_db)` pairs when `eval_every` is set.
    pub eval_history: Vec<(usize, f64)>,
    pub train_seconds: f64,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().map_or(f64::NAN, |e| e.mean_loss)
    }
}

/// Initializes from `config.model_seed()` and trains.
pub fn fit(spec: &ModelSpec, dataset: &CoordinateDataset, config: &TrainConfig) -> Result<FitResult, TrainError> {
    config.validate()?;
    let params = init_params(spec, config.model_seed())?;
    fit_from(spec, params, dataset, config)
}

/// Trains starting from the given parameters.
pub fn fit_from(
    spec: &ModelSpec,
    mut params: ModelParams,
    dataset: &CoordinateDataset,
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    // Unlike `validate`, a zero learning rate is accepted here so a run can
    // be replayed without moving the parameters.
    if config.epochs < 1 || config.batch_size < 1 || !(config.lr0 >= 0.0 && config.lr0.is_finite()) {
        return Err(TrainError::Config(format!(
            "need epochs >= 1, batch_size >= 1 and lr0 >= 0; got {}, {}, {}",
            config.epochs, config.batch_size, config.lr0
        )));
    }
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_params(spec, &params)?;

    let start = Instant::now();
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs * batches_per_epoch) as u64;
    let mut adam = AdamState::new(&params.params);
    let mut step = 0u64;
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut eval_history = Vec::new();

    for epoch in 0..config.epochs {
        let batches = crate::audio::batch_iter(dataset, config.batch_size, config.seed, epoch as u64);
        let mut weighted = 0.0;
        let mut last_lr = config.lr_at(step, total_steps);
        for (batch, idx) in batches.iter().enumerate() {
            let lr = config.lr_at(step, total_steps);
            let (loss, grads) = batch_loss_and_grads(spec, &params, dataset, idx).map_err(|e| match e {
                TrainError::Model(ModelError::NonFinite { .. }) => TrainError::NonFiniteLoss { epoch, batch },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
            if loss > DIVERGENCE_THRESHOLD {
                return Err(TrainError::Diverged { epoch, batch, loss });
            }
            adam_step(&mut params.params, &grads, &mut adam, lr).map_err(|source| TrainError::Optim {
                epoch,
                batch,
                source,
            })?;
            weighted += loss * idx.len() as f64;
            last_lr = lr;
            step += 1;
        }
        loss_history.push(EpochLoss {
            epoch,
            mean_loss: weighted / dataset.len() as f64,
            lr: last_lr,
        });
        if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
            let y_hat = predict(spec, &params, &dataset.coords)?;
            eval_history.push((epoch, snr_with(&y_hat, &dataset.targets, Default::default())?));
        }
    }

    Ok(FitResult {
        params,
        loss_history,
        eval_history,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Batch-mean squared error and its gradient for every parameter.
fn batch_loss_and_grads(
    spec: &ModelSpec,
    params: &ModelParams,
    dataset: &CoordinateDataset,
    idx: &[usize],
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let b = idx.len();
    let mut tape = Tape::new();
    let nodes: Vec<NodeId> = params.params.iter().map(|p| tape.var(p.value.clone())).collect();
    let t = tape.constant(Tensor::matrix(b, 1, idx.iter().map(|&i| dataset.coords[i]).collect()));
    let target = tape.constant(Tensor::matrix(b, 1, idx.iter().map(|&i| dataset.targets[i]).collect()));
    let y = forward(spec, params, &mut tape, &nodes, t)?;
    let diff = tape.sub(y, target)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean(sq);
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() || loss_value > DIVERGENCE_THRESHOLD {
        return Ok((loss_value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    let grads = nodes
        .iter()
        .zip(&params.params)
        .map(|(&n, p)| grads.take(n).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    Ok((loss_value, grads))
}

/// Scores the model on the clip's own sample positions.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ModelParams,
    clip: &AudioClip,
    settings: &MetricSettings,
) -> Result<MetricsReport, TrainError> {
    let y_hat = predict(spec, params, &unit_grid(clip.len()))?;
    Ok(MetricsReport {
        snr_db: snr_with(&y_hat, &clip.samples, settings.snr_convention)?,
        lsd: lsd_with(&y_hat, &clip.samples, settings)?,
        param_count: spec.param_count(),
        train_seconds: 0.0,
        final_loss: y_hat
            .iter()
            .zip(&clip.samples)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / clip.len() as f64,
        loss_history: Vec::new(),
        settings: *settings,
    })
}

/// Evaluates the trained model and attaches the training record.
pub fn evaluate_fit(
    spec: &ModelSpec,
    fit: &FitResult,
    clip: &AudioClip,
    settings: &MetricSettings,
) -> Result<MetricsReport, TrainError> {
    let mut report = evaluate(spec, &fit.params, clip, settings)?;
    report.train_seconds = fit.train_seconds;
    report.final_loss = fit.final_loss();
    report.loss_history = fit.loss_history.clone();
    Ok(report)
}

/// Samples the continuous field at `⌊duration·sample_rate⌋` points spread
/// over `[0, 1]`. Amplitudes are not clamped.
pub fn render(spec: &ModelSpec, params: &ModelParams, sample_rate: u32, duration: f64) -> Result<AudioClip, TrainError> {
    if sample_rate == 0 {
        return Err(AudioError::ZeroSampleRate.into());
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(AudioError::BadDuration(duration).into());
    }
    let n = sample_count(duration, sample_rate);
    if n == 0 {
        return Err(AudioError::TooShort(0).into());
    }
    let samples = predict(spec, params, &unit_grid(n))?;
    Ok(AudioClip::new(samples, sample_rate)?)
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[EpochLoss]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(file, "epoch,mean_loss,lr").map_err(io)?;
    for e in history {
        writeln!(file, "{},{:e},{:e}", e.epoch, e.mean_loss, e.lr).map_err(io)?;
    }
    file.flush().map_err(io)
}
