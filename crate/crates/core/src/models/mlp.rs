//! Coordinate-MLP: `z¹ = γ(t)`, `zⁱ⁺¹ = σ(zⁱ Wⁱ + bⁱ)`, affine output layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::{dense_weights, InitScheme};
use super::{check_params, ensure_finite, predict, ModelError, ModelParams, ModelSpec};
use crate::activation::ActivationSpec;
use crate::autodiff::{NodeId, Tape};
use crate::encoding::EncodingConfig;
use crate::tensor::{Param, Tensor};

fn default_sitzmann_c() -> f64 {
    6.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Layer widths. The first entry is the encoded input dimension; `1` is
    /// accepted as shorthand for "whatever the encoding produces".
    pub widths: Vec<usize>,
    pub activation: ActivationSpec,
    #[serde(default = "identity_encoding")]
    pub encoding: EncodingConfig,
    /// Defaults to `sitzmann` for sine-family activations, `xavier` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
    #[serde(default = "default_sitzmann_c")]
    pub sitzmann_c: f64,
    /// Frequency used by the Sitzmann bound; defaults to the activation's ω,
    /// or 30.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

fn identity_encoding() -> EncodingConfig {
    EncodingConfig::Identity
}

impl MlpConfig {
    pub fn new(widths: Vec<usize>, activation: ActivationSpec) -> Self {
        Self {
            widths,
            activation,
            encoding: EncodingConfig::Identity,
            init: None,
            sitzmann_c: default_sitzmann_c(),
            omega: None,
        }
    }

    pub fn with_encoding(mut self, encoding: EncodingConfig) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init.unwrap_or(if self.activation.kind().is_sine_family() {
            InitScheme::Sitzmann
        } else {
            InitScheme::Xavier
        })
    }

    pub fn init_omega(&self) -> f64 {
        self.omega
            .or_else(|| self.activation.hyper_value("omega"))
            .unwrap_or(30.0)
    }

    /// Widths with the input entry resolved to the encoding dimension.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = self.widths.clone();
        if let Some(first) = w.first_mut() {
            *first = self.encoding.out_dim();
        }
        w
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoding.validate()?;
        let w = &self.widths;
        if w.len() < 2 {
            return Err(ModelError::Config("an MLP needs at least two widths".into()));
        }
        if w[w.len() - 1] != 1 {
            return Err(ModelError::Config(format!("final width must be 1, got {}", w[w.len() - 1])));
        }
        if w.contains(&0) {
            return Err(ModelError::Config("widths must be positive".into()));
        }
        let d0 = self.encoding.out_dim();
        if w[0] != 1 && w[0] != d0 {
            return Err(ModelError::Config(format!(
                "input width {} does not match the {} encoding's {d0} features",
                w[0],
                self.encoding.kind()
            )));
        }
        if !(self.sitzmann_c > 0.0 && self.sitzmann_c.is_finite()) {
            return Err(ModelError::Config(format!("sitzmann_c must be positive, got {}", self.sitzmann_c)));
        }
        if let Some(o) = self.omega {
            if !(o > 0.0 && o.is_finite()) {
                return Err(ModelError::Config(format!("omega must be positive, got {o}")));
            }
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.init_scheme() == InitScheme::Sitzmann && !self.activation.kind().is_sine_family() {
            out.push(format!(
                "sitzmann initialization is designed for sine activations, not {}",
                self.activation.kind()
            ));
        }
        out
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len().saturating_sub(2)
    }

    pub fn param_count(&self) -> usize {
        let w = self.layer_widths();
        let dense: usize = w.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        dense + self.hidden_layers() * self.activation.learnable().len()
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let w = self.layer_widths();
        let names = self.activation.learnable_names();
        let mut out = Vec::new();
        for (i, pair) in w.windows(2).enumerate() {
            out.push((format!("layer{i}.weight"), vec![pair[0], pair[1]]));
            out.push((format!("layer{i}.bias"), vec![pair[1]]));
            if i + 1 < w.len() - 1 {
                for n in &names {
                    out.push((format!("layer{i}.act.{n}"), Vec::new()));
                }
            }
        }
        out
    }

    pub fn hyper_label(&self) -> String {
        let mut parts = Vec::new();
        let act = self.activation.hyper_label();
        if !act.is_empty() {
            parts.push(act);
        }
        match &self.encoding {
            EncodingConfig::Identity => {}
            EncodingConfig::Neff { l } => parts.push(format!("L={l}")),
            EncodingConfig::Rff { l, sigma, .. } => parts.push(format!("L={l};sigma={sigma}")),
        }
        if self.init.is_some() {
            parts.push(format!("init={:?}", self.init_scheme()).to_lowercase());
        }
        parts.join(";")
    }

    pub(crate) fn init(&self, rng: &mut impl Rng) -> Result<ModelParams, ModelError> {
        let scheme = self.init_scheme();
        let omega = self.init_omega();
        let mut params = Vec::new();
        for (name, shape) in self.layout() {
            let value = if name.ends_with(".weight") {
                let first = name.starts_with("layer0.");
                let w = dense_weights(rng, scheme, shape[0], shape[1], first, self.sitzmann_c, omega);
                Tensor::matrix(shape[0], shape[1], w)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let act = name.rsplit('.').next().expect("activation param name");
                let k = self.activation.learnable_names().iter().position(|n| *n == act).expect("known learnable");
                Tensor::scalar(self.activation.learnable()[k])
            };
            params.push(Param::new(name, value));
        }
        Ok(ModelParams {
            params,
            rff_frequencies: self.encoding.sample_frequencies()?,
        })
    }

    pub(crate) fn forward(
        &self,
        params: &ModelParams,
        tape: &mut Tape,
        nodes: &[NodeId],
        t: NodeId,
    ) -> Result<NodeId, ModelError> {
        let encoder = self.encoding.encoder(params.rff_frequencies.as_deref())?;
        let act = std::sync::Arc::new(self.activation.pointwise());
        let n_act = self.activation.learnable().len();
        let layers = self.widths.len() - 1;
        let mut z = encoder.apply(tape, t)?;
        let mut k = 0;
        for i in 0..layers {
            let h = tape.matmul(z, nodes[k])?;
            let h = tape.add(h, nodes[k + 1])?;
            ensure_finite(tape, h, || format!("layer{i}"))?;
            k += 2;
            z = if i + 1 < layers {
                let a = tape.pointwise(h, &nodes[k..k + n_act], act.clone())?;
                k += n_act;
                ensure_finite(tape, a, || format!("layer{i} activation"))?;
                a
            } else {
                h
            };
        }
        Ok(z)
    }
}

/// Evaluates a Coordinate-MLP at a single time coordinate.
pub fn mlp_forward(params: &ModelParams, config: &MlpConfig, t: f64) -> Result<f64, ModelError> {
    let spec = ModelSpec::Mlp(config.clone());
    check_params(&spec, params)?;
    Ok(predict(&spec, params, &[t])?[0])
}
