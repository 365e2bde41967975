//! Weight initialization schemes.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// `N(0, 2 / fan_in)`.
    Kaiming,
    /// `U(±sqrt(6 / (fan_in + fan_out)))`.
    Xavier,
    /// First layer `U(±1/fan_in)`, later layers
    /// `U(±c / (ω sqrt(fan_in)))`.
    Sitzmann,
}

impl std::str::FromStr for InitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kaiming" => Ok(Self::Kaiming),
            "xavier" => Ok(Self::Xavier),
            "sitzmann" => Ok(Self::Sitzmann),
            other => Err(format!("unknown init scheme `{other}`; expected kaiming, xavier or sitzmann")),
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn sitzmann_first_bound(fan_in: usize) -> f64 {
    1.0 / fan_in as f64
}

pub fn sitzmann_hidden_bound(fan_in: usize, c: f64, omega: f64) -> f64 {
    c / (omega * (fan_in as f64).sqrt())
}

pub fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    let d = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Weights of a `fan_in × fan_out` dense layer.
pub fn dense_weights(
    rng: &mut impl Rng,
    scheme: InitScheme,
    fan_in: usize,
    fan_out: usize,
    first_layer: bool,
    sitzmann_c: f64,
    omega: f64,
) -> Vec<f64> {
    let n = fan_in * fan_out;
    match scheme {
        InitScheme::Kaiming => normal(rng, n, (2.0 / fan_in as f64).sqrt()),
        InitScheme::Xavier => uniform(rng, n, xavier_bound(fan_in, fan_out)),
        InitScheme::Sitzmann if first_layer => uniform(rng, n, sitzmann_first_bound(fan_in)),
        InitScheme::Sitzmann => uniform(rng, n, sitzmann_hidden_bound(fan_in, sitzmann_c, omega)),
    }
}
