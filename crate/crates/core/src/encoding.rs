//! Positional encodings lifting the scalar time coordinate into feature
//! space: identity, dyadic NeRF-style features (NeFF) and random Fourier
//! features (RFF).

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Expansion, NodeId, Tape};

pub const DEFAULT_NEFF_L: usize = 12;
pub const DEFAULT_RFF_L: usize = 32;
pub const DEFAULT_RFF_SIGMA: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("frequency count L must be at least 1")]
    ZeroFrequencies,
    #[error("RFF sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("RFF frequency vector has {got} entries, expected {expected}")]
    FrequencyCount { expected: usize, got: usize },
}

fn default_neff_l() -> usize {
    DEFAULT_NEFF_L
}

fn default_rff_l() -> usize {
    DEFAULT_RFF_L
}

fn default_rff_sigma() -> f64 {
    DEFAULT_RFF_SIGMA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncodingConfig {
    Identity,
    Neff {
        #[serde(rename = "L", default = "default_neff_l")]
        l: usize,
    },
    Rff {
        #[serde(rename = "L", default = "default_rff_l")]
        l: usize,
        /// Standard deviation of the frequency distribution.
        #[serde(default = "default_rff_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl EncodingConfig {
    pub fn neff() -> Self {
        Self::Neff { l: DEFAULT_NEFF_L }
    }

    pub fn rff(seed: u64) -> Self {
        Self::Rff {
            l: DEFAULT_RFF_L,
            sigma: DEFAULT_RFF_SIGMA,
            seed,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Neff { .. } => "neff",
            Self::Rff { .. } => "rff",
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::Identity => 1,
            Self::Neff { l } | Self::Rff { l, .. } => 2 * l,
        }
    }

    pub fn validate(&self) -> Result<(), EncodingError> {
        match self {
            Self::Identity => Ok(()),
            Self::Neff { l } => (*l >= 1).then_some(()).ok_or(EncodingError::ZeroFrequencies),
            Self::Rff { l, sigma, .. } => {
                if *l == 0 {
                    Err(EncodingError::ZeroFrequencies)
                } else if !(*sigma > 0.0 && sigma.is_finite()) {
                    Err(EncodingError::BadSigma(*sigma))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// The frozen frequency vector this config samples, or `None` for the
    /// deterministic encodings.
    pub fn sample_frequencies(&self) -> Result<Option<Vec<f64>>, EncodingError> {
        self.validate()?;
        Ok(match self {
            Self::Rff { l, sigma, seed } => Some(sample_rff_frequencies(*l, *sigma, *seed)),
            _ => None,
        })
    }

    /// Builds the evaluator, taking RFF frequencies from `frequencies`.
    pub fn encoder(&self, frequencies: Option<&[f64]>) -> Result<Encoder, EncodingError> {
        self.validate()?;
        Ok(match self {
            Self::Identity => Encoder::Identity,
            Self::Neff { l } => Encoder::Neff(Arc::new(NeffBasis { l: *l })),
            Self::Rff { l, .. } => {
                let b = frequencies.unwrap_or(&[]);
                if b.len() != *l {
                    return Err(EncodingError::FrequencyCount {
                        expected: *l,
                        got: b.len(),
                    });
                }
                Encoder::Rff(Arc::new(RffBasis { b: b.to_vec() }))
            }
        })
    }
}

pub fn encode_identity(t: f64) -> Vec<f64> {
    vec![t]
}

/// `[sin(2^0 πt), cos(2^0 πt), …, sin(2^{L-1} πt), cos(2^{L-1} πt)]`.
pub fn encode_neff(t: f64, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * l];
    NeffBasis { l }.eval(t, &mut out);
    out
}

/// `b_i ~ N(0, sigma²)` from a generator seeded with `seed`.
pub fn sample_rff_frequencies(l: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..l).map(|_| normal.sample(&mut rng)).collect()
}

/// `[cos(2π b_1 t), sin(2π b_1 t), …, cos(2π b_L t), sin(2π b_L t)]`.
pub fn encode_rff(t: f64, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * b.len()];
    RffBasis { b: b.to_vec() }.eval(t, &mut out);
    out
}

#[derive(Clone, Debug)]
pub struct NeffBasis {
    l: usize,
}

impl Expansion for NeffBasis {
    fn name(&self) -> String {
        format!("neff(L={})", self.l)
    }

    fn width(&self) -> usize {
        2 * self.l
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        let mut w = PI;
        for pair in out.chunks_exact_mut(2) {
            let (s, c) = (w * x).sin_cos();
            pair[0] = s;
            pair[1] = c;
            w *= 2.0;
        }
    }

    fn eval_with_derivative(&self, x: f64, out: &mut [f64], deriv: &mut [f64]) {
        let mut w = PI;
        for (pair, d) in out.chunks_exact_mut(2).zip(deriv.chunks_exact_mut(2)) {
            let (s, c) = (w * x).sin_cos();
            pair[0] = s;
            pair[1] = c;
            d[0] = w * c;
            d[1] = -w * s;
            w *= 2.0;
        }
    }
}

#[derive(Clone, Debug)]
pub struct RffBasis {
    b: Vec<f64>,
}

impl RffBasis {
    pub fn frequencies(&self) -> &[f64] {
        &self.b
    }
}

impl Expansion for RffBasis {
    fn name(&self) -> String {
        format!("rff(L={})", self.b.len())
    }

    fn width(&self) -> usize {
        2 * self.b.len()
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        for (pair, &b) in out.chunks_exact_mut(2).zip(&self.b) {
            let (s, c) = (2.0 * PI * b * x).sin_cos();
            pair[0] = c;
            pair[1] = s;
        }
    }

    fn eval_with_derivative(&self, x: f64, out: &mut [f64], deriv: &mut [f64]) {
        for ((pair, d), &b) in out.chunks_exact_mut(2).zip(deriv.chunks_exact_mut(2)).zip(&self.b) {
            let w = 2.0 * PI * b;
            let (s, c) = (w * x).sin_cos();
            pair[0] = c;
            pair[1] = s;
            d[0] = -w * s;
            d[1] = w * c;
        }
    }
}

/// A ready-to-apply encoding with any frozen frequencies resolved.
#[derive(Clone, Debug)]
pub enum Encoder {
    Identity,
    Neff(Arc<NeffBasis>),
    Rff(Arc<RffBasis>),
}

impl Encoder {
    pub fn out_dim(&self) -> usize {
        match self {
            Self::Identity => 1,
            Self::Neff(b) => b.width(),
            Self::Rff(b) => b.width(),
        }
    }

    pub fn encode(&self, t: f64) -> Vec<f64> {
        match self {
            Self::Identity => encode_identity(t),
            Self::Neff(b) => {
                let mut out = vec![0.0; b.width()];
                b.eval(t, &mut out);
                out
            }
            Self::Rff(b) => {
                let mut out = vec![0.0; b.width()];
                b.eval(t, &mut out);
                out
            }
        }
    }

    /// Encodes a `[batch, 1]` column of coordinates into `[batch, out_dim]`.
    pub fn apply(&self, tape: &mut Tape, t: NodeId) -> Result<NodeId, AutodiffError> {
        match self {
            Self::Identity => Ok(t),
            Self::Neff(b) => tape.expand(t, b.clone()),
            Self::Rff(b) => tape.expand(t, b.clone()),
        }
    }
}
