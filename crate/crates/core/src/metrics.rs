//! Reconstruction quality: SNR, STFT log-power spectra and log-spectral
//! distance.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor added to `|S|²` before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_FRAME_LEN: usize = 2048;
pub const DEFAULT_HOP: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: prediction has {pred} samples, reference has {reference}")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("reference signal is empty")]
    Empty,
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("signal of {len} samples is shorter than one {frame_len}-sample frame")]
    TooShort { len: usize, frame_len: usize },
    #[error("frame length and hop must be positive")]
    BadFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SnrConvention {
    /// `20·log10(‖y‖² / ‖ŷ − y‖²)`, squared norms inside a 20·log10.
    #[default]
    Literal,
    /// `10·log10(‖y‖² / ‖ŷ − y‖²)`, the usual power ratio.
    Conventional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            Self::Natural => x.ln(),
            Self::Ten => x.log10(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub snr_convention: SnrConvention,
    pub lsd_frame_len: usize,
    pub lsd_hop: usize,
    pub lsd_log_base: LogBase,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            snr_convention: SnrConvention::Literal,
            lsd_frame_len: DEFAULT_FRAME_LEN,
            lsd_hop: DEFAULT_HOP,
            lsd_log_base: LogBase::Natural,
        }
    }
}

fn check_lengths(pred: &[f64], reference: &[f64]) -> Result<(), MetricsError> {
    if pred.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    if reference.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// SNR in dB as the literal `20·log10(‖y‖² / ‖ŷ − y‖²)`. A perfect
/// reconstruction yields `f64::INFINITY`.
pub fn snr(y_hat: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    snr_with(y_hat, y, SnrConvention::Literal)
}

pub fn snr_with(y_hat: &[f64], y: &[f64], convention: SnrConvention) -> Result<f64, MetricsError> {
    check_lengths(y_hat, y)?;
    let signal: f64 = y.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let noise: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    let factor = match convention {
        SnrConvention::Literal => 20.0,
        SnrConvention::Conventional => 10.0,
    };
    Ok(factor * (signal / noise).log10())
}

/// A frames × bins matrix of log power values.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major, one row per frame.
    pub values: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.bins..(i + 1) * self.bins]
    }
}

/// Periodic Hann window `0.5 − 0.5·cos(2πn/N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// `X[ℓ, k] = log(|S[ℓ, k]|² + 1e-10)` over Hann-windowed frames, keeping
/// the `frame_len/2 + 1` non-negative frequency bins. Frames start at
/// multiples of `hop` and must fit entirely inside the signal.
pub fn stft_log_power(y: &[f64], frame_len: usize, hop: usize, base: LogBase) -> Result<Spectrogram, MetricsError> {
    if frame_len == 0 || hop == 0 {
        return Err(MetricsError::BadFrame);
    }
    if y.len() < frame_len {
        return Err(MetricsError::TooShort {
            len: y.len(),
            frame_len,
        });
    }
    let frames = 1 + (y.len() - frame_len) / hop;
    let bins = frame_len / 2 + 1;
    let window = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    let mut values = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (b, (x, w)) in buf.iter_mut().zip(y[start..start + frame_len].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        values.extend(buf[..bins].iter().map(|s| base.log(s.norm_sqr() + LOG_FLOOR)));
    }
    Ok(Spectrogram { frames, bins, values })
}

/// Log-spectral distance with the default framing: frame-averaged RMS
/// difference of the log power spectra.
pub fn lsd(y_hat: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    lsd_with(y_hat, y, &MetricSettings::default())
}

pub fn lsd_with(y_hat: &[f64], y: &[f64], settings: &MetricSettings) -> Result<f64, MetricsError> {
    check_lengths(y_hat, y)?;
    let a = stft_log_power(y_hat, settings.lsd_frame_len, settings.lsd_hop, settings.lsd_log_base)?;
    let b = stft_log_power(y, settings.lsd_frame_len, settings.lsd_hop, settings.lsd_log_base)?;
    let mut total = 0.0;
    for f in 0..a.frames {
        let ms = a.frame(f).iter().zip(b.frame(f)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.bins as f64;
        total += ms.sqrt();
    }
    Ok(total / a.frames as f64)
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&format_special(*v))
        }
    }

    pub fn format_special(v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    }

    pub fn parse(s: &str) -> Option<f64> {
        match s {
            "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            other => other.parse().ok(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => parse(&t).ok_or_else(|| serde::de::Error::custom(format!("not a number: {t}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "float_or_inf")]
    pub snr_db: f64,
    pub lsd: f64,
    pub param_count: usize,
    pub train_seconds: f64,
    pub final_loss: f64,
    pub loss_history: Vec<EpochLoss>,
    /// How the numbers above were computed.
    pub settings: MetricSettings,
}
