//! The sixteen benchmark activations with analytic derivatives.
//!
//! Each kind has fixed hyperparameters (`hyper`) and trainable scalars
//! (`learnable`). Trainable scalars are shared by every unit of a layer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Pointwise;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("unknown activation `{0}`; expected one of: {names}", names = ActivationKind::ALL.map(|k| k.name()).join(", "))]
    UnknownKind(String),
    #[error("activation `{kind}` has no parameter `{name}`")]
    UnknownParam { kind: &'static str, name: String },
    #[error("activation `{kind}`: parameter `{name}` = {value} is out of range")]
    BadValue {
        kind: &'static str,
        name: &'static str,
        value: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    GaborWavelet,
    Quadratic,
    MultiQuadratic,
    Expsin,
    Sigmoid,
    Softplus,
    Tanh,
    Elu,
    Silu,
    Prelu,
    Relu,
    Gaussian,
    Laplacian,
    SuperGaussian,
    Sine,
    IncodeSine,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 16] = [
        Self::GaborWavelet,
        Self::Quadratic,
        Self::MultiQuadratic,
        Self::Expsin,
        Self::Sigmoid,
        Self::Softplus,
        Self::Tanh,
        Self::Elu,
        Self::Silu,
        Self::Prelu,
        Self::Relu,
        Self::Gaussian,
        Self::Laplacian,
        Self::SuperGaussian,
        Self::Sine,
        Self::IncodeSine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaborWavelet => "gabor_wavelet",
            Self::Quadratic => "quadratic",
            Self::MultiQuadratic => "multi_quadratic",
            Self::Expsin => "expsin",
            Self::Sigmoid => "sigmoid",
            Self::Softplus => "softplus",
            Self::Tanh => "tanh",
            Self::Elu => "elu",
            Self::Silu => "silu",
            Self::Prelu => "prelu",
            Self::Relu => "relu",
            Self::Gaussian => "gaussian",
            Self::Laplacian => "laplacian",
            Self::SuperGaussian => "super_gaussian",
            Self::Sine => "sine",
            Self::IncodeSine => "incode_sine",
        }
    }

    /// Fixed hyperparameters and their defaults.
    pub fn hyper_defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::Quadratic | Self::MultiQuadratic | Self::Expsin | Self::Softplus | Self::Elu => &[("a", 1.0)],
            Self::Gaussian | Self::Laplacian => &[("a", 0.1)],
            Self::SuperGaussian => &[("a", 0.1), ("b", 2.0)],
            Self::Sine | Self::IncodeSine => &[("omega", 30.0)],
            _ => &[],
        }
    }

    /// Trainable scalars and their initial values.
    pub fn learnable_defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Self::GaborWavelet => &[("a", 1.0), ("b", 1.0)],
            Self::Prelu => &[("a", 0.25)],
            Self::IncodeSine => &[("a", 1.0), ("b", 1.0), ("c", 0.0), ("d", 0.0)],
            _ => &[],
        }
    }

    /// Periodic activations that want frequency-scaled initialization.
    pub fn is_sine_family(self) -> bool {
        matches!(self, Self::Sine | Self::IncodeSine)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = ActivationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| ActivationError::UnknownKind(s.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    #[serde(default)]
    hyper: BTreeMap<String, f64>,
    #[serde(default)]
    learnable: BTreeMap<String, f64>,
}

/// An activation kind with every parameter of its formula filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ActivationSpec {
    kind: ActivationKind,
    hyper: Vec<f64>,
    learnable: Vec<f64>,
}

impl TryFrom<RawSpec> for ActivationSpec {
    type Error = ActivationError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        let mut spec = Self::new(raw.kind.parse()?);
        for (name, value) in &raw.hyper {
            spec.set_hyper(name, *value)?;
        }
        for (name, value) in &raw.learnable {
            spec.set_learnable(name, *value)?;
        }
        Ok(spec)
    }
}

impl From<ActivationSpec> for RawSpec {
    fn from(spec: ActivationSpec) -> Self {
        let names = |d: &[(&str, f64)], v: &[f64]| d.iter().map(|(n, _)| n.to_string()).zip(v.iter().copied()).collect();
        RawSpec {
            kind: spec.kind.name().to_string(),
            hyper: names(spec.kind.hyper_defaults(), &spec.hyper),
            learnable: names(spec.kind.learnable_defaults(), &spec.learnable),
        }
    }
}

impl ActivationSpec {
    /// The kind with its default hyperparameters and initial learnables.
    pub fn new(kind: ActivationKind) -> Self {
        Self {
            kind,
            hyper: kind.hyper_defaults().iter().map(|(_, v)| *v).collect(),
            learnable: kind.learnable_defaults().iter().map(|(_, v)| *v).collect(),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn hyper(&self) -> &[f64] {
        &self.hyper
    }

    pub fn learnable(&self) -> &[f64] {
        &self.learnable
    }

    pub fn hyper_value(&self, name: &str) -> Option<f64> {
        let i = self.kind.hyper_defaults().iter().position(|(n, _)| *n == name)?;
        Some(self.hyper[i])
    }

    pub fn learnable_names(&self) -> Vec<&'static str> {
        self.kind.learnable_defaults().iter().map(|(n, _)| *n).collect()
    }

    pub fn set_hyper(&mut self, name: &str, value: f64) -> Result<(), ActivationError> {
        let defaults = self.kind.hyper_defaults();
        let i = defaults.iter().position(|(n, _)| *n == name).ok_or_else(|| {
            ActivationError::UnknownParam {
                kind: self.kind.name(),
                name: name.to_string(),
            }
        })?;
        let positive = matches!(
            self.kind,
            ActivationKind::Gaussian | ActivationKind::Laplacian | ActivationKind::SuperGaussian | ActivationKind::Softplus
        );
        if !value.is_finite() || (positive && value <= 0.0) {
            return Err(ActivationError::BadValue {
                kind: self.kind.name(),
                name: defaults[i].0,
                value,
            });
        }
        self.hyper[i] = value;
        Ok(())
    }

    pub fn set_learnable(&mut self, name: &str, value: f64) -> Result<(), ActivationError> {
        let defaults = self.kind.learnable_defaults();
        let i = defaults.iter().position(|(n, _)| *n == name).ok_or_else(|| {
            ActivationError::UnknownParam {
                kind: self.kind.name(),
                name: name.to_string(),
            }
        })?;
        if !value.is_finite() {
            return Err(ActivationError::BadValue {
                kind: self.kind.name(),
                name: defaults[i].0,
                value,
            });
        }
        self.learnable[i] = value;
        Ok(())
    }

    /// Compact identifier of the non-default hyperparameters, e.g. `omega=300`.
    pub fn hyper_label(&self) -> String {
        self.kind
            .hyper_defaults()
            .iter()
            .zip(&self.hyper)
            .map(|((n, _), v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Evaluator for the tape, with learnables supplied as node values.
    pub fn pointwise(&self) -> ActivationFn {
        ActivationFn {
            kind: self.kind,
            hyper: self.hyper.clone(),
        }
    }
}

/// Derivatives of an activation at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationGrad {
    pub dx: f64,
    /// One entry per learnable, in declaration order.
    pub dtheta: Vec<f64>,
}

pub fn apply(spec: &ActivationSpec, x: f64) -> f64 {
    eval(spec.kind, &spec.hyper, &spec.learnable, x, None).0
}

pub fn apply_grad(spec: &ActivationSpec, x: f64) -> ActivationGrad {
    let mut dtheta = vec![0.0; spec.learnable.len()];
    let (_, dx) = eval(spec.kind, &spec.hyper, &spec.learnable, x, Some(&mut dtheta));
    ActivationGrad { dx, dtheta }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value and `∂/∂x`; fills `∂/∂θ` when `dtheta` is given.
#[inline]
fn eval(kind: ActivationKind, h: &[f64], th: &[f64], x: f64, dtheta: Option<&mut [f64]>) -> (f64, f64) {
    use ActivationKind::*;
    match kind {
        GaborWavelet => {
            let (a, b) = (th[0], th[1]);
            let g = (-(b * x) * (b * x)).exp();
            let (s, c) = (a * x).sin_cos();
            if let Some(d) = dtheta {
                d[0] = -x * s * g;
                d[1] = -2.0 * b * x * x * c * g;
            }
            (c * g, g * (-a * s - 2.0 * b * b * x * c))
        }
        Quadratic => {
            let a = h[0];
            let q = 1.0 + (a * x) * (a * x);
            (1.0 / q, -2.0 * a * a * x / (q * q))
        }
        MultiQuadratic => {
            let a = h[0];
            let q = 1.0 + (a * x) * (a * x);
            let y = 1.0 / q.sqrt();
            (y, -a * a * x * y / q)
        }
        Expsin => {
            let a = h[0];
            let (s, c) = (a * x).sin_cos();
            let y = (-s).exp();
            (y, -a * c * y)
        }
        Sigmoid => {
            let s = sigmoid(x);
            (s, s * (1.0 - s))
        }
        Softplus => {
            let a = h[0];
            let z = a * x;
            let sp = z.max(0.0) + (-z.abs()).exp().ln_1p();
            (sp / a, sigmoid(z))
        }
        Tanh => {
            let y = x.tanh();
            (y, 1.0 - y * y)
        }
        Elu => {
            let a = h[0];
            if x > 0.0 || x.is_nan() {
                (x, 1.0)
            } else {
                let e = x.exp();
                (a * (e - 1.0), a * e)
            }
        }
        Silu => {
            let s = sigmoid(x);
            (x * s, s + x * s * (1.0 - s))
        }
        Prelu => {
            let a = th[0];
            if x > 0.0 || x.is_nan() {
                if let Some(d) = dtheta {
                    d[0] = 0.0;
                }
                (x, 1.0)
            } else {
                if let Some(d) = dtheta {
                    d[0] = x;
                }
                // Subgradient 0 at the origin.
                (a * x, if x == 0.0 { 0.0 } else { a })
            }
        }
        Relu => {
            if x > 0.0 || x.is_nan() {
                (x, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        Gaussian => {
            let a = h[0];
            let y = (-x * x / (2.0 * a * a)).exp();
            (y, -x / (a * a) * y)
        }
        Laplacian => {
            let a = h[0];
            let y = (-x.abs() / a).exp();
            let sign = if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            };
            (y, -sign / a * y)
        }
        SuperGaussian => {
            let (a, b) = (h[0], h[1]);
            let y = (-x * x / (2.0 * a * a)).exp().powf(b);
            (y, -b * x / (a * a) * y)
        }
        Sine => {
            let w = h[0];
            let (s, c) = (w * x).sin_cos();
            (s, w * c)
        }
        IncodeSine => {
            let w = h[0];
            let (a, b, c, d) = (th[0], th[1], th[2], th[3]);
            let (s, co) = (b * w * x + c).sin_cos();
            if let Some(g) = dtheta {
                g[0] = s;
                g[1] = a * w * x * co;
                g[2] = a * co;
                g[3] = 1.0;
            }
            (a * s + d, a * b * w * co)
        }
    }
}

/// [`Pointwise`] adapter; hyperparameters are baked in, learnables arrive
/// as tape nodes.
#[derive(Clone, Debug)]
pub struct ActivationFn {
    kind: ActivationKind,
    hyper: Vec<f64>,
}

impl Pointwise for ActivationFn {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn num_params(&self) -> usize {
        self.kind.learnable_defaults().len()
    }

    fn forward(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = eval(self.kind, &self.hyper, theta, xi, None).0;
        }
    }

    fn backward(&self, x: &[f64], theta: &[f64], upstream: &[f64], grad_x: &mut [f64], grad_theta: &mut [f64]) {
        if theta.is_empty() {
            for ((gx, &xi), &u) in grad_x.iter_mut().zip(x).zip(upstream) {
                *gx = u * eval(self.kind, &self.hyper, theta, xi, None).1;
            }
            return;
        }
        let mut local = vec![0.0; theta.len()];
        for ((gx, &xi), &u) in grad_x.iter_mut().zip(x).zip(upstream) {
            *gx = u * eval(self.kind, &self.hyper, theta, xi, Some(&mut local)).1;
            for (acc, l) in grad_theta.iter_mut().zip(&local) {
                *acc += u * l;
            }
        }
    }
}
