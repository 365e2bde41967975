//! B-spline KAN baseline. Each edge computes `a·silu(x) + Σ_m c_m B_m(x)`
//! over a uniform knot vector on `[-1, 1]`, extended by `k` knots on either
//! side so that `G + k` basis functions cover the grid.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::{normal, uniform, xavier_bound};
use super::{check_params, ensure_finite, predict, ModelError, ModelParams, ModelSpec};
use crate::activation::{ActivationKind, ActivationSpec};
use crate::autodiff::{Expansion, NodeId, Tape};
use crate::tensor::{Param, Tensor};

/// Standard deviation of the initial spline coefficients.
const SPLINE_INIT_STD: f64 = 0.1;

fn default_degree() -> usize {
    3
}

fn default_grid() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BSplineKanConfig {
    pub widths: Vec<usize>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
}

impl BSplineKanConfig {
    pub fn new(widths: Vec<usize>) -> Self {
        Self {
            widths,
            degree: default_degree(),
            grid_size: default_grid(),
        }
    }

    pub fn basis_count(&self) -> usize {
        self.grid_size + self.degree
    }

    pub fn knots(&self) -> Vec<f64> {
        uniform_knots(self.grid_size, self.degree, -1.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let w = &self.widths;
        if w.len() < 2 || w[0] != 1 || w[w.len() - 1] != 1 || w.contains(&0) {
            return Err(ModelError::Config(format!(
                "B-spline KAN widths must start and end with 1 and be positive, got {w:?}"
            )));
        }
        if self.grid_size == 0 {
            return Err(ModelError::Config("grid_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let m = self.basis_count();
        self.widths.windows(2).map(|p| p[0] * p[1] * (m + 1)).sum()
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let m = self.basis_count();
        let mut out = Vec::new();
        for (l, p) in self.widths.windows(2).enumerate() {
            out.push((format!("layer{l}.scale"), vec![p[0], p[1]]));
            out.push((format!("layer{l}.spline"), vec![p[0] * m, p[1]]));
        }
        out
    }

    /// Residual scales Xavier-uniform, spline coefficients `N(0, 0.1²)`.
    pub(crate) fn init(&self, rng: &mut impl Rng) -> ModelParams {
        let m = self.basis_count();
        let mut params = Vec::new();
        for (l, p) in self.widths.windows(2).enumerate() {
            let scale = uniform(rng, p[0] * p[1], xavier_bound(p[0], p[1]));
            params.push(Param::new(format!("layer{l}.scale"), Tensor::matrix(p[0], p[1], scale)));
            let rows = p[0] * m;
            let spline = normal(rng, rows * p[1], SPLINE_INIT_STD);
            params.push(Param::new(format!("layer{l}.spline"), Tensor::matrix(rows, p[1], spline)));
        }
        ModelParams {
            params,
            rff_frequencies: None,
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, nodes: &[NodeId], t: NodeId) -> Result<NodeId, ModelError> {
        let basis = Arc::new(BSplineBasis {
            knots: self.knots(),
            degree: self.degree,
        });
        let silu = Arc::new(ActivationSpec::new(ActivationKind::Silu).pointwise());
        let mut z = t;
        for l in 0..self.widths.len() - 1 {
            let s = tape.pointwise(z, &[], silu.clone())?;
            let residual = tape.matmul(s, nodes[2 * l])?;
            let phi = tape.expand(z, basis.clone())?;
            let spline = tape.matmul(phi, nodes[2 * l + 1])?;
            z = tape.add(residual, spline)?;
            ensure_finite(tape, z, || format!("layer{l}"))?;
        }
        Ok(z)
    }
}

/// `grid_size + 2·degree + 1` uniform knots: `grid_size` intervals over
/// `[lo, hi]` plus `degree` extra intervals on each side.
pub fn uniform_knots(grid_size: usize, degree: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / grid_size as f64;
    (0..grid_size + 2 * degree + 1)
        .map(|j| lo + (j as f64 - degree as f64) * h)
        .collect()
}

fn validate_knots(knots: &[f64], degree: usize) -> Result<(), ModelError> {
    if knots.len() < degree + 2 {
        return Err(ModelError::Config(format!(
            "degree {degree} needs at least {} knots, got {}",
            degree + 2,
            knots.len()
        )));
    }
    if knots.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(ModelError::Config("knots must be non-decreasing".into()));
    }
    Ok(())
}

/// `(x - a) / (b - a)` with 0/0 taken as 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Raises degree-`from` basis values in `b` (in place) to degree `to`.
fn elevate(b: &mut Vec<f64>, x: f64, knots: &[f64], from: usize, to: usize) {
    for d in from + 1..=to {
        let n = knots.len() - 1 - d;
        for i in 0..n {
            let left = ratio(x - knots[i], knots[i + d] - knots[i]) * b[i];
            let right = ratio(knots[i + d + 1] - x, knots[i + d + 1] - knots[i + 1]) * b[i + 1];
            b[i] = left + right;
        }
        b.truncate(n);
    }
}

fn indicators(x: f64, knots: &[f64]) -> Vec<f64> {
    knots
        .windows(2)
        .map(|w| if w[0] <= x && x < w[1] { 1.0 } else { 0.0 })
        .collect()
}

/// Cox–de Boor evaluation of all `knots.len() - degree - 1` basis functions
/// at `x`. Outside the knot span every basis function is zero.
pub fn bspline_basis(x: f64, knots: &[f64], degree: usize) -> Result<Vec<f64>, ModelError> {
    validate_knots(knots, degree)?;
    let mut b = indicators(x, knots);
    elevate(&mut b, x, knots, 0, degree);
    Ok(b)
}

/// Basis values and their derivatives in `x`.
pub fn bspline_basis_with_derivative(x: f64, knots: &[f64], degree: usize) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    validate_knots(knots, degree)?;
    Ok(basis_and_derivative(x, knots, degree))
}

fn basis_and_derivative(x: f64, knots: &[f64], degree: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lower = indicators(x, knots);
    if degree == 0 {
        let n = lower.len();
        return (lower, vec![0.0; n]);
    }
    elevate(&mut lower, x, knots, 0, degree - 1);
    let n = knots.len() - 1 - degree;
    let k = degree as f64;
    let deriv: Vec<f64> = (0..n)
        .map(|i| {
            k * (ratio(lower[i], knots[i + degree] - knots[i])
                - ratio(lower[i + 1], knots[i + degree + 1] - knots[i + 1]))
        })
        .collect();
    elevate(&mut lower, x, knots, degree - 1, degree);
    (lower, deriv)
}

#[derive(Clone, Debug)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl Expansion for BSplineBasis {
    fn name(&self) -> String {
        format!("bspline(k={})", self.degree)
    }

    fn width(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        let mut b = indicators(x, &self.knots);
        elevate(&mut b, x, &self.knots, 0, self.degree);
        out.copy_from_slice(&b);
    }

    fn eval_with_derivative(&self, x: f64, out: &mut [f64], deriv: &mut [f64]) {
        let (b, d) = basis_and_derivative(x, &self.knots, self.degree);
        out.copy_from_slice(&b);
        deriv.copy_from_slice(&d);
    }
}

/// Evaluates a B-spline KAN at a single time coordinate.
pub fn bspline_kan_forward(params: &ModelParams, config: &BSplineKanConfig, t: f64) -> Result<f64, ModelError> {
    let spec = ModelSpec::BsplineKan(config.clone());
    check_params(&spec, params)?;
    Ok(predict(&spec, params, &[t])?[0])
}
