//! Adam with bias correction, and cosine learning-rate annealing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Param, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
    #[error("parameter `{name}`: shape {param:?} does not match {other:?}")]
    Shape {
        name: String,
        param: Vec<usize>,
        other: Vec<usize>,
    },
    #[error("parameter `{name}`: non-finite gradient at element {index}")]
    NonFiniteGradient { name: String, index: usize },
}

/// Moment accumulators and hyperparameters for [`adam_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed accumulators shaped like `params`, with the usual defaults
    /// (0.9, 0.999, 1e-8).
    pub fn new(params: &[Param]) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &[Param], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update of `params` in place.
///
/// All shapes and gradients are validated before anything is modified, so a
/// failed step leaves both `params` and `state` untouched.
pub fn adam_step(
    params: &mut [Param],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), OptimError> {
    if grads.len() != params.len() {
        return Err(OptimError::Count {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
        return Err(OptimError::Count {
            expected: params.len(),
            got: state.first_moment.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        for other in [g, &state.first_moment[i], &state.second_moment[i]] {
            if other.shape() != p.value.shape() {
                return Err(OptimError::Shape {
                    name: p.name.clone(),
                    param: p.value.shape().to_vec(),
                    other: other.shape().to_vec(),
                });
            }
        }
        if let Some(index) = g.first_non_finite() {
            return Err(OptimError::NonFiniteGradient {
                name: p.name.clone(),
                index,
            });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bias1 = 1.0 - b1.powf(t);
    let bias2 = 1.0 - b2.powf(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((w, &gj), mj), vj) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            let m_hat = *mj / bias1;
            let v_hat = *vj / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr0 * (1 + cos(pi * step / total_steps)) / 2`, annealing to zero.
///
/// Steps past the end clamp to the final value; `total_steps` of 0 is
/// treated as 1.
pub fn cosine_anneal(step: u64, total_steps: u64, lr0: f64) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    lr0 * (1.0 + phase.cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_param(v: f64) -> Vec<Param> {
        vec![Param::new("w", Tensor::scalar(v))]
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Param::new("w", Tensor::vector(vec![1.0, -2.0, 3.5]))];
        let mut state = AdamState::new(&params);
        let before = params.clone();
        adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state, 1e-4).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for (g, sign) in [(1.0, -1.0), (-0.5, 1.0)] {
            let mut params = scalar_param(0.0);
            let mut state = AdamState::new(&params);
            adam_step(&mut params, &[Tensor::scalar(g)], &mut state, 1e-4).unwrap();
            let delta = params[0].value.data()[0];
            // m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps)
            let expected = -1e-4 * g / (g.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-18);
            assert!((delta - sign * 1e-4).abs() < 1e-11);
        }
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_rejected() {
        let mut params = vec![Param::new("layer.weight", Tensor::vector(vec![0.0, 0.0]))];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state, 1e-3).unwrap_err();
        assert!(matches!(err, OptimError::Shape { .. }));
        let err = adam_step(
            &mut params,
            &[Tensor::vector(vec![0.0, f64::NAN])],
            &mut state,
            1e-3,
        )
        .unwrap_err();
        assert_eq!(
            err,
            OptimError::NonFiniteGradient {
                name: "layer.weight".into(),
                index: 1
            }
        );
        assert!(err.to_string().contains("layer.weight"));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut params = scalar_param(1.0);
        let mut state = AdamState::new(&params);
        for k in 1..=5 {
            adam_step(&mut params, &[Tensor::scalar(0.3)], &mut state, 1e-2).unwrap();
            assert_eq!(state.step, k);
        }
    }

    #[test]
    fn cosine_anneal_endpoints() {
        assert_eq!(cosine_anneal(0, 100, 1e-4), 1e-4);
        assert!(cosine_anneal(100, 100, 1e-4).abs() < 1e-20);
        assert!((cosine_anneal(50, 100, 1e-4) - 5e-5).abs() < 1e-18);
        assert_eq!(cosine_anneal(150, 100, 1e-4), cosine_anneal(100, 100, 1e-4));
    }

    proptest! {
        #[test]
        fn cosine_anneal_monotone_and_symmetric(total in 1u64..10_000, frac in 0.0f64..1.0, lr0 in 1e-6f64..1.0) {
            let s = ((total as f64) * frac) as u64;
            let a = cosine_anneal(s, total, lr0);
            let b = cosine_anneal((s + 1).min(total), total, lr0);
            prop_assert!(b <= a + 1e-18);
            let mirrored = cosine_anneal(total - s, total, lr0);
            prop_assert!((a + mirrored - lr0).abs() <= 1e-12 * lr0);
        }
    }
}
