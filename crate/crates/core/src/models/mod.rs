//! Model families: Coordinate-MLP, Fourier-KAN and B-spline-KAN.
//!
//! Every family consumes a `[batch, 1]` column of time coordinates and
//! produces a `[batch, 1]` column of amplitudes. Parameters live in a flat,
//! named list so the optimizer and checkpoints treat all families alike.

pub mod bspline;
pub mod checkpoint;
pub mod fourier_kan;
pub mod init;
pub mod mlp;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationError;
use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::encoding::EncodingError;
use crate::tensor::{Param, Tensor};

pub use bspline::{bspline_basis, bspline_kan_forward, uniform_knots, BSplineKanConfig};
pub use fourier_kan::{fourier_kan_forward, FourierKanConfig};
pub use init::InitScheme;
pub use mlp::{mlp_forward, MlpConfig};

/// Rows per tape when evaluating a model outside training.
const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite value in {layer} output at row {row}")]
    NonFinite { layer: String, row: usize },
    #[error("parameters do not match the config: {0}")]
    ParamMismatch(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp(MlpConfig),
    FourierKan(FourierKanConfig),
    BsplineKan(BSplineKanConfig),
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            Self::Mlp(_) => "mlp",
            Self::FourierKan(_) => "fourier_kan",
            Self::BsplineKan(_) => "bspline_kan",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Self::Mlp(c) => c.validate(),
            Self::FourierKan(c) => c.validate(),
            Self::BsplineKan(c) => c.validate(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Self::Mlp(c) => c.param_count(),
            Self::FourierKan(c) => c.param_count(),
            Self::BsplineKan(c) => c.param_count(),
        }
    }

    /// Activation label for leaderboards; KANs report their edge function.
    pub fn activation_label(&self) -> String {
        match self {
            Self::Mlp(c) => c.activation.kind().name().to_string(),
            Self::FourierKan(_) => "fourier".to_string(),
            Self::BsplineKan(_) => "bspline".to_string(),
        }
    }

    pub fn encoding_label(&self) -> &'static str {
        match self {
            Self::Mlp(c) => c.encoding.kind(),
            _ => "identity",
        }
    }

    /// Compact description of the hyperparameters that distinguish runs.
    pub fn hyper_label(&self) -> String {
        match self {
            Self::Mlp(c) => c.hyper_label(),
            Self::FourierKan(c) => format!(
                "omega=[{}]",
                c.omega_schedule.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",")
            ),
            Self::BsplineKan(c) => format!("k={};G={}", c.degree, c.grid_size),
        }
    }

    /// Advisory notes about unusual but legal settings.
    pub fn warnings(&self) -> Vec<String> {
        match self {
            Self::Mlp(c) => c.warnings(),
            _ => Vec::new(),
        }
    }
}

/// Trainable tensors plus any frozen encoding state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub params: Vec<Param>,
    /// Random Fourier feature frequencies; sampled once, never trained.
    pub rff_frequencies: Option<Vec<f64>>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Expected `(name, shape)` of every trainable tensor, in order.
pub fn param_layout(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    match spec {
        ModelSpec::Mlp(c) => c.layout(),
        ModelSpec::FourierKan(c) => c.layout(),
        ModelSpec::BsplineKan(c) => c.layout(),
    }
}

/// Samples initial parameters. The RFF frequencies come from the encoding's
/// own seed, everything else from `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match spec {
        ModelSpec::Mlp(c) => c.init(&mut rng)?,
        ModelSpec::FourierKan(c) => c.init(&mut rng),
        ModelSpec::BsplineKan(c) => c.init(&mut rng),
    })
}

/// Checks names and shapes of `params` against the config.
pub fn check_params(spec: &ModelSpec, params: &ModelParams) -> Result<(), ModelError> {
    let layout = param_layout(spec);
    if layout.len() != params.params.len() {
        return Err(ModelError::ParamMismatch(format!(
            "expected {} tensors, got {}",
            layout.len(),
            params.params.len()
        )));
    }
    for ((name, shape), p) in layout.iter().zip(&params.params) {
        if *name != p.name || shape.as_slice() != p.value.shape() {
            return Err(ModelError::ParamMismatch(format!(
                "expected `{name}` {shape:?}, got `{}` {:?}",
                p.name,
                p.value.shape()
            )));
        }
    }
    if let ModelSpec::Mlp(c) = spec {
        c.encoding.encoder(params.rff_frequencies.as_deref())?;
    }
    Ok(())
}

/// Records the forward pass on `tape`. `nodes` holds one node per entry of
/// `params.params`; `t` is a `[batch, 1]` node.
pub fn forward(
    spec: &ModelSpec,
    params: &ModelParams,
    tape: &mut Tape,
    nodes: &[NodeId],
    t: NodeId,
) -> Result<NodeId, ModelError> {
    match spec {
        ModelSpec::Mlp(c) => c.forward(params, tape, nodes, t),
        ModelSpec::FourierKan(c) => c.forward(tape, nodes, t),
        ModelSpec::BsplineKan(c) => c.forward(tape, nodes, t),
    }
}

/// Fails with the layer name if any entry of `node` is not finite.
pub(crate) fn ensure_finite(tape: &Tape, node: NodeId, layer: impl FnOnce() -> String) -> Result<(), ModelError> {
    match tape.value(node).first_non_finite() {
        None => Ok(()),
        Some(i) => {
            let cols = tape.value(node).shape().last().copied().unwrap_or(1).max(1);
            Err(ModelError::NonFinite {
                layer: layer(),
                row: i / cols,
            })
        }
    }
}

/// Evaluates the model at each coordinate.
pub fn predict(spec: &ModelSpec, params: &ModelParams, coords: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_params(spec, params)?;
    let mut out = Vec::with_capacity(coords.len());
    for chunk in coords.chunks(PREDICT_CHUNK) {
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = params.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let t = tape.constant(Tensor::matrix(chunk.len(), 1, chunk.to_vec()));
        let y = forward(spec, params, &mut tape, &nodes, t)?;
        out.extend_from_slice(tape.value(y).data());
    }
    Ok(out)
}

/// A model config together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

impl Model {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn predict(&self, coords: &[f64]) -> Result<Vec<f64>, ModelError> {
        predict(&self.spec, &self.params, coords)
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{ActivationKind, ActivationSpec};
    use crate::encoding::EncodingConfig;

    #[test]
    fn reference_parameter_counts() {
        let kan = FourierKanConfig {
            widths: vec![1, 64, 64, 64, 64, 1],
            omega_schedule: vec![1024, 5, 5, 5, 3],
        };
        assert_eq!(kan.param_count(), 254_593);
        let mlp = MlpConfig::new(vec![1, 256, 256, 256, 256, 256, 1], ActivationSpec::new(ActivationKind::Relu));
        assert_eq!(mlp.param_count(), 263_937);
        let tiny = FourierKanConfig {
            widths: vec![1, 1],
            omega_schedule: vec![1],
        };
        assert_eq!(tiny.param_count(), 3);
        // Encoded inputs widen only the first layer.
        let neff = MlpConfig {
            encoding: EncodingConfig::neff(),
            ..mlp.clone()
        };
        assert_eq!(neff.param_count(), 263_937 + 23 * 256);
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"family":"fourier_kan","widths":[1,4,1],"omega_schedule":[8,3]}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.family(), "fourier_kan");
        let back: ModelSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let mlp: ModelSpec = serde_json::from_str(
            r#"{"family":"mlp","widths":[1,8,1],"activation":{"kind":"sine"},"encoding":{"kind":"rff","L":4}}"#,
        )
        .unwrap();
        assert_eq!(mlp.encoding_label(), "rff");
        assert!(serde_json::from_str::<ModelSpec>(r#"{"family":"cnn","widths":[1,1]}"#).is_err());
    }

    #[test]
    fn params_are_checked_against_config() {
        let spec = ModelSpec::FourierKan(FourierKanConfig {
            widths: vec![1, 3, 1],
            omega_schedule: vec![4, 2],
        });
        let mut params = init_params(&spec, 0).unwrap();
        assert!(check_params(&spec, &params).is_ok());
        params.params[0].value = Tensor::zeros(&[2, 2]);
        assert!(matches!(check_params(&spec, &params), Err(ModelError::ParamMismatch(_))));
    }
}
