//! Fourier-KAN: every edge carries a truncated Fourier series with integer
//! frequencies `1..=Ω_l`, and nodes sum their incoming edges.
//!
//! Layer `l` stores one coefficient matrix of shape `[d_in · 2Ω_l, d_out]`;
//! row `i·2Ω + ω − 1` holds the cosine coefficient of input `i` at frequency
//! `ω`, row `i·2Ω + Ω + ω − 1` the sine coefficient. With the basis expansion
//! laid out the same way, a layer is one matrix product plus a bias.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::normal;
use super::{check_params, ensure_finite, predict, ModelError, ModelParams, ModelSpec};
use crate::autodiff::{Expansion, NodeId, Tape};
use crate::tensor::{Param, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierKanConfig {
    pub widths: Vec<usize>,
    /// Frequency threshold Ω of each layer transition.
    pub omega_schedule: Vec<usize>,
}

impl FourierKanConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let w = &self.widths;
        if w.len() < 2 {
            return Err(ModelError::Config("a Fourier-KAN needs at least two widths".into()));
        }
        if w[0] != 1 || w[w.len() - 1] != 1 {
            return Err(ModelError::Config(format!(
                "Fourier-KAN maps time to amplitude; widths must start and end with 1, got {w:?}"
            )));
        }
        if w.contains(&0) {
            return Err(ModelError::Config("widths must be positive".into()));
        }
        if self.omega_schedule.len() != w.len() - 1 {
            return Err(ModelError::Config(format!(
                "omega_schedule has {} entries but there are {} layer transitions",
                self.omega_schedule.len(),
                w.len() - 1
            )));
        }
        if self.omega_schedule.contains(&0) {
            return Err(ModelError::Config("every Ω must be at least 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .zip(&self.omega_schedule)
            .map(|(p, &o)| 2 * o * p[0] * p[1] + p[1])
            .sum()
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, (p, &o)) in self.widths.windows(2).zip(&self.omega_schedule).enumerate() {
            out.push((format!("layer{l}.coeffs"), vec![p[0] * 2 * o, p[1]]));
            out.push((format!("layer{l}.bias"), vec![p[1]]));
        }
        out
    }

    /// Coefficients `N(0, 1/(Ω_l d_in))`, biases zero.
    pub(crate) fn init(&self, rng: &mut impl Rng) -> ModelParams {
        let mut params = Vec::new();
        for (l, (p, &o)) in self.widths.windows(2).zip(&self.omega_schedule).enumerate() {
            let std = (1.0 / (o * p[0]) as f64).sqrt();
            let rows = p[0] * 2 * o;
            params.push(Param::new(
                format!("layer{l}.coeffs"),
                Tensor::matrix(rows, p[1], normal(rng, rows * p[1], std)),
            ));
            params.push(Param::new(format!("layer{l}.bias"), Tensor::zeros(&[p[1]])));
        }
        ModelParams {
            params,
            rff_frequencies: None,
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, nodes: &[NodeId], t: NodeId) -> Result<NodeId, ModelError> {
        let mut z = t;
        for (l, &o) in self.omega_schedule.iter().enumerate() {
            let phi = tape.expand(z, Arc::new(FourierBasis::new(o)))?;
            let h = tape.matmul(phi, nodes[2 * l])?;
            z = tape.add(h, nodes[2 * l + 1])?;
            ensure_finite(tape, z, || format!("layer{l}"))?;
        }
        Ok(z)
    }
}

/// `x ↦ [cos(x), …, cos(Ωx), sin(x), …, sin(Ωx)]`.
#[derive(Clone, Debug)]
pub struct FourierBasis {
    omega: usize,
}

impl FourierBasis {
    pub fn new(omega: usize) -> Self {
        Self { omega }
    }

    /// Fills `cos(kx)` and `sin(kx)` for `k = 1..=Ω` by angle addition.
    fn fill(&self, x: f64, cos: &mut [f64], sin: &mut [f64]) {
        let (s1, c1) = x.sin_cos();
        let (mut s, mut c) = (s1, c1);
        for k in 0..self.omega {
            // Resynchronize periodically so rounding cannot accumulate.
            if k > 0 && k % 64 == 0 {
                (s, c) = ((k + 1) as f64 * x).sin_cos();
            }
            cos[k] = c;
            sin[k] = s;
            (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
        }
    }
}

impl Expansion for FourierBasis {
    fn name(&self) -> String {
        format!("fourier(Ω={})", self.omega)
    }

    fn width(&self) -> usize {
        2 * self.omega
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        let (cos, sin) = out.split_at_mut(self.omega);
        self.fill(x, cos, sin);
    }

    fn eval_with_derivative(&self, x: f64, out: &mut [f64], deriv: &mut [f64]) {
        let o = self.omega;
        self.eval(x, out);
        for k in 0..o {
            let w = (k + 1) as f64;
            deriv[k] = -w * out[o + k];
            deriv[o + k] = w * out[k];
        }
    }
}

/// Evaluates a Fourier-KAN at a single time coordinate.
pub fn fourier_kan_forward(params: &ModelParams, config: &FourierKanConfig, t: f64) -> Result<f64, ModelError> {
    let spec = ModelSpec::FourierKan(config.clone());
    check_params(&spec, params)?;
    Ok(predict(&spec, params, &[t])?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn single(a: f64, b: f64, c: f64) -> (FourierKanConfig, ModelParams) {
        let config = FourierKanConfig {
            widths: vec![1, 1],
            omega_schedule: vec![1],
        };
        let mut p = init_params(&ModelSpec::FourierKan(config.clone()), 0).unwrap();
        p.get_mut("layer0.coeffs").unwrap().data_mut().copy_from_slice(&[a, b]);
        p.get_mut("layer0.bias").unwrap().data_mut()[0] = c;
        (config, p)
    }

    #[test]
    fn single_edge_closed_form() {
        let (config, p) = single(2.0, 3.0, 0.5);
        assert_eq!(fourier_kan_forward(&p, &config, 0.0).unwrap(), 2.5);
        let t = 0.8f64;
        let expected = 2.0 * t.cos() + 3.0 * t.sin() + 0.5;
        assert!((fourier_kan_forward(&p, &config, t).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let config = FourierKanConfig {
            widths: vec![1, 3, 2, 1],
            omega_schedule: vec![7, 4, 2],
        };
        let mut p = init_params(&ModelSpec::FourierKan(config.clone()), 1).unwrap();
        p.params.iter_mut().for_each(|q| q.value.data_mut().fill(0.0));
        for t in [0.0, 0.4, 1.0, 17.0] {
            assert_eq!(fourier_kan_forward(&p, &config, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn basis_recurrence_matches_direct_evaluation() {
        let basis = FourierBasis::new(1024);
        let mut out = vec![0.0; 2048];
        for x in [0.0, 0.001, 0.37, 1.0, -2.5, 40.0] {
            basis.eval(x, &mut out);
            for k in 0..1024 {
                let w = (k + 1) as f64;
                assert!((out[k] - (w * x).cos()).abs() < 1e-12, "cos {k} at {x}");
                assert!((out[1024 + k] - (w * x).sin()).abs() < 1e-12, "sin {k} at {x}");
            }
        }
    }

    #[test]
    fn init_variance_and_zero_bias() {
        let config = FourierKanConfig {
            widths: vec![1, 64, 1],
            omega_schedule: vec![1024, 5],
        };
        let p = init_params(&ModelSpec::FourierKan(config), 42).unwrap();
        let c = p.get("layer0.coeffs").unwrap().data();
        assert_eq!(c.len(), 131_072);
        let var = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
        assert!((var * 1024.0 - 1.0).abs() < 0.05, "{var}");
        assert!(p.get("layer0.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_mismatched_schedule() {
        let bad = FourierKanConfig {
            widths: vec![1, 4, 1],
            omega_schedule: vec![8],
        };
        assert!(bad.validate().is_err());
        let zero = FourierKanConfig {
            widths: vec![1, 4, 1],
            omega_schedule: vec![8, 0],
        };
        assert!(zero.validate().is_err());
    }

    proptest! {
        #[test]
        fn single_layer_is_two_pi_periodic(seed in any::<u64>(), t in -5.0f64..5.0) {
            let config = FourierKanConfig { widths: vec![1, 1], omega_schedule: vec![9] };
            let p = init_params(&ModelSpec::FourierKan(config.clone()), seed).unwrap();
            let a = fourier_kan_forward(&p, &config, t).unwrap();
            let b = fourier_kan_forward(&p, &config, t + 2.0 * PI).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
