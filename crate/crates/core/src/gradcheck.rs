//! Central finite-difference check of tape gradients.

use std::fmt::Display;

use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// One-sided slopes that disagree by more than this fraction mark a kink.
const KINK_TOLERANCE: f64 = 1e-3;

/// A derivative smaller than `RESOLUTION · ε · |f| / eps` is swamped by
/// roundoff in `f` itself: at that size the central difference cannot be
/// trusted past about six significant digits.
const RESOLUTION: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradCheckError {
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("function is not finite at parameter {param}, element {index}")]
    NonFinite { param: usize, index: usize },
    #[error("function evaluation failed: {0}")]
    Function(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A single parameter coordinate: tensor index and element index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coordinate {
    pub param: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_relative_error: f64,
    pub worst: Option<Coordinate>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    /// Coordinates where the left and right slopes disagree.
    pub skipped: Vec<Coordinate>,
    /// Coordinates whose derivative is below what central differences can
    /// resolve at this step; not compared.
    pub unresolved: Vec<Coordinate>,
}

/// Compares reverse-mode gradients of `f` at `point` against central
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)`, coordinate by
/// coordinate.
///
/// `f` receives a fresh tape and one leaf per entry of `point`, and returns
/// the scalar output node.
pub fn grad_check<F, E>(f: F, point: &[Tensor], eps: f64) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, E>,
    E: Display,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GradCheckError::BadStep(eps));
    }
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId), GradCheckError> {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = values.iter().map(|v| tape.var(v.clone())).collect();
        let out = f(&mut tape, &leaves).map_err(|e| GradCheckError::Function(e.to_string()))?;
        Ok((tape, leaves, out))
    };
    let scalar = |tape: &Tape, out: NodeId| -> Result<f64, GradCheckError> {
        tape.value(out).item().ok_or_else(|| {
            GradCheckError::Autodiff(AutodiffError::NonScalarOutput {
                shape: tape.value(out).shape().to_vec(),
            })
        })
    };

    let (tape, leaves, out) = eval(point)?;
    let f0 = scalar(&tape, out)?;
    if !f0.is_finite() {
        return Err(GradCheckError::NonFinite { param: 0, index: 0 });
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        skipped: Vec::new(),
        unresolved: Vec::new(),
    };
    let mut shifted: Vec<Tensor> = point.to_vec();
    for (p, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).expect("leaf gradient").data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let x = point[p].data()[j];
            let mut probe = |value: f64| -> Result<f64, GradCheckError> {
                shifted[p].data_mut()[j] = value;
                let (t, _, o) = eval(&shifted)?;
                let v = scalar(&t, o)?;
                if !v.is_finite() {
                    return Err(GradCheckError::NonFinite { param: p, index: j });
                }
                Ok(v)
            };
            let plus = probe(x + eps)?;
            let minus = probe(x - eps)?;

            let coord = Coordinate { param: p, index: j };
            let right = (plus - f0) / eps;
            let left = (f0 - minus) / eps;
            let noise = 64.0 * f64::EPSILON * f0.abs().max(plus.abs()).max(minus.abs()) / eps;
            let jump = (right - left).abs();
            if jump > KINK_TOLERANCE * right.abs().max(left.abs()) + noise {
                // Curvature makes the one-sided slopes differ by O(eps) and
                // the gap halves with the step; a kink's gap does not.
                let h = eps / 2.0;
                let jump_half = ((probe(x + h)? - f0) / h - (f0 - probe(x - h)?) / h).abs();
                if jump_half > 0.75 * jump {
                    shifted[p].data_mut()[j] = x;
                    report.skipped.push(coord);
                    continue;
                }
            }
            shifted[p].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * eps);
            let floor = RESOLUTION * f64::EPSILON * f0.abs().max(plus.abs()).max(minus.abs()) / eps;
            if a.abs().max(numeric.abs()) < floor && a != numeric {
                report.unresolved.push(coord);
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some(coord);
                report.worst_values = Some((a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unary(
        op: impl Fn(&mut Tape, NodeId) -> NodeId,
    ) -> impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AutodiffError> {
        move |tape, leaves| Ok(op(tape, leaves[0]))
    }

    #[test]
    fn cubic_at_two() {
        let f = unary(|t, x| t.pow(x, 3.0));
        let r = grad_check(f, &[Tensor::scalar(2.0)], DEFAULT_EPS).unwrap();
        assert_eq!(r.checked, 1);
        assert!(r.max_relative_error < 1e-7, "{}", r.max_relative_error);
    }

    #[test]
    fn high_frequency_sine() {
        let f = unary(|t, x| {
            let y = t.scale(x, 30.0);
            t.sin(y)
        });
        let r = grad_check(f, &[Tensor::scalar(0.1)], DEFAULT_EPS).unwrap();
        assert!(r.max_relative_error < 1e-5, "{}", r.max_relative_error);
    }

    #[test]
    fn abs_at_zero_is_skipped() {
        let f = unary(|t, x| t.abs(x));
        let r = grad_check(f, &[Tensor::scalar(0.0)], DEFAULT_EPS).unwrap();
        assert_eq!(r.checked, 0);
        assert_eq!(r.skipped, vec![Coordinate { param: 0, index: 0 }]);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let f = unary(|t, x| t.log(x));
        let err = grad_check(f, &[Tensor::scalar(-1.0)], DEFAULT_EPS).unwrap_err();
        assert!(matches!(err, GradCheckError::NonFinite { .. }));
        let f = unary(|t, x| t.log(x));
        assert!(matches!(
            grad_check(f, &[Tensor::scalar(1.0)], 0.0),
            Err(GradCheckError::BadStep(_))
        ));
    }

    #[test]
    fn matrix_expression() {
        let f = |t: &mut Tape, l: &[NodeId]| -> Result<NodeId, AutodiffError> {
            let h = t.matmul(l[0], l[1])?;
            let h = t.add(h, l[2])?;
            let e = t.exp(h);
            let r = t.reciprocal(e);
            let s = t.mul(r, h)?;
            Ok(t.mean(s))
        };
        let point = [
            Tensor::matrix(3, 2, vec![0.1, -0.4, 0.3, 0.8, -0.6, 0.2]),
            Tensor::matrix(2, 2, vec![0.5, -0.7, 0.9, 0.25]),
            Tensor::vector(vec![0.05, -0.15]),
        ];
        let r = grad_check(f, &point, DEFAULT_EPS).unwrap();
        assert_eq!(r.checked, 12);
        assert!(r.max_relative_error < 1e-6, "{}", r.max_relative_error);
    }
}
