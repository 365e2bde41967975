//! Finite-difference checks of every differentiable building block: the
//! activation kinds, the encodings and each model family.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{ActivationKind, ActivationSpec};
use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::encoding::{EncodingConfig, Encoder};
use crate::gradcheck::{grad_check, GradCheckReport, DEFAULT_EPS};
use crate::models::{forward, init_params, BSplineKanConfig, FourierKanConfig, MlpConfig, ModelParams, ModelSpec};
use crate::tensor::{Param, Tensor};

/// Relative error below which a case passes.
pub const TOLERANCE: f64 = 1e-5;
/// Evaluation points per case.
pub const POINTS: usize = 100;
pub const MODEL_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteGroup {
    Activation,
    Encoding,
    Mlp,
    FourierKan,
    BsplineKan,
}

#[derive(Debug)]
pub struct SuiteCase {
    pub group: SuiteGroup,
    pub name: String,
    pub outcome: Result<GradCheckReport, String>,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        matches!(&self.outcome, Ok(r) if r.checked > 0 && r.max_relative_error < TOLERANCE)
    }
}

/// Runs every case whose group passes `filter`.
pub fn run_suite(seed: u64, filter: impl Fn(SuiteGroup) -> bool) -> Vec<SuiteCase> {
    run_suite_with(seed, MODEL_EPS, filter)
}

pub fn run_suite_with(seed: u64, model_eps: f64, filter: impl Fn(SuiteGroup) -> bool) -> Vec<SuiteCase> {
    let mut cases = Vec::new();
    if filter(SuiteGroup::Activation) {
        for kind in ActivationKind::ALL {
            cases.push(SuiteCase {
                group: SuiteGroup::Activation,
                name: kind.name().to_string(),
                outcome: check_activation(kind, seed),
            });
        }
    }
    if filter(SuiteGroup::Encoding) {
        for enc in [EncodingConfig::Identity, EncodingConfig::Neff { l: 6 }, EncodingConfig::Rff { l: 8, sigma: 3.0, seed }] {
            cases.push(SuiteCase {
                group: SuiteGroup::Encoding,
                name: enc.kind().to_string(),
                outcome: check_encoding(&enc, seed),
            });
        }
    }
    let models: Vec<(SuiteGroup, ModelSpec)> = vec![
        (
            SuiteGroup::Mlp,
            ModelSpec::Mlp(MlpConfig::new(vec![1, 6, 6, 1], ActivationSpec::new(ActivationKind::Tanh))),
        ),
        (
            SuiteGroup::Mlp,
            ModelSpec::Mlp(
                MlpConfig::new(vec![1, 6, 6, 1], ActivationSpec::new(ActivationKind::IncodeSine))
                    .with_encoding(EncodingConfig::Neff { l: 3 }),
            ),
        ),
        (
            SuiteGroup::Mlp,
            ModelSpec::Mlp(
                MlpConfig::new(vec![1, 6, 6, 1], ActivationSpec::new(ActivationKind::GaborWavelet))
                    .with_encoding(EncodingConfig::Rff { l: 4, sigma: 1.0, seed }),
            ),
        ),
        (
            SuiteGroup::FourierKan,
            ModelSpec::FourierKan(FourierKanConfig {
                widths: vec![1, 3, 3, 1],
                omega_schedule: vec![8, 3, 2],
            }),
        ),
        (
            SuiteGroup::BsplineKan,
            ModelSpec::BsplineKan(BSplineKanConfig::new(vec![1, 3, 3, 1])),
        ),
    ];
    for (group, spec) in models {
        if filter(group) {
            cases.push(SuiteCase {
                group,
                name: format!("{} {}", spec.family(), spec.activation_label()),
                outcome: check_model(&spec, seed, model_eps),
            });
        }
    }
    cases
}

fn fmt_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Points drawn from `[lo, hi]`, at least `gap` away from every kink.
fn sample_points(rng: &mut ChaCha8Rng, lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(POINTS);
    while out.len() < POINTS {
        let x = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (x - k).abs() > gap) {
            out.push(x);
        }
    }
    out
}

fn weighted_sum(tape: &mut Tape, y: NodeId, weights: Tensor) -> Result<NodeId, AutodiffError> {
    let w = tape.constant(weights);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

/// `σ(x)` at each point separately, differentiated in `x` and the
/// learnables. Checking points one at a time keeps the finite-difference
/// roundoff proportional to that point's own value.
fn check_activation(kind: ActivationKind, seed: u64) -> Result<GradCheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xac71);
    let spec = ActivationSpec::new(kind);
    let kinks: &[f64] = match kind {
        ActivationKind::Relu | ActivationKind::Prelu | ActivationKind::Elu | ActivationKind::Laplacian => &[0.0],
        _ => &[],
    };
    let range = if kind.is_sine_family() { 0.5 } else { 2.0 };
    let func = Arc::new(spec.pointwise());
    let mut merged: Option<GradCheckReport> = None;
    for x in sample_points(&mut rng, -range, range, kinks, 1e-3) {
        let mut point = vec![Tensor::vector(vec![x])];
        point.extend(spec.learnable().iter().map(|&v| Tensor::scalar(v)));
        let report = grad_check(
            |tape: &mut Tape, leaves: &[NodeId]| {
                let y = tape.pointwise(leaves[0], &leaves[1..], func.clone())?;
                Ok::<_, AutodiffError>(tape.sum(y))
            },
            &point,
            DEFAULT_EPS,
        )
        .map_err(fmt_err)?;
        merged = Some(match merged {
            None => report,
            Some(mut acc) => {
                if report.max_relative_error > acc.max_relative_error {
                    acc.max_relative_error = report.max_relative_error;
                    acc.worst = report.worst;
                    acc.worst_values = report.worst_values;
                }
                acc.checked += report.checked;
                acc.skipped.extend(report.skipped);
                acc.unresolved.extend(report.unresolved);
                acc
            }
        });
    }
    Ok(merged.expect("at least one point"))
}

/// `Σ C ⊙ γ(t)` differentiated in `t`.
fn check_encoding(enc: &EncodingConfig, seed: u64) -> Result<GradCheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe1c0);
    let freqs = enc.sample_frequencies().map_err(fmt_err)?;
    let encoder: Encoder = enc.encoder(freqs.as_deref()).map_err(fmt_err)?;
    let d = encoder.out_dim();
    let t = sample_points(&mut rng, 0.0, 1.0, &[], 0.0);
    let c: Vec<f64> = (0..POINTS * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    grad_check(
        |tape: &mut Tape, leaves: &[NodeId]| {
            let y = encoder.apply(tape, leaves[0])?;
            weighted_sum(tape, y, Tensor::matrix(POINTS, d, c.clone()))
        },
        &[Tensor::matrix(POINTS, 1, t)],
        DEFAULT_EPS,
    )
    .map_err(fmt_err)
}

/// Mean squared error against random targets, differentiated in every
/// trainable parameter.
fn check_model(spec: &ModelSpec, seed: u64, eps: f64) -> Result<GradCheckReport, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x30de1);
    let params = init_params(spec, seed).map_err(fmt_err)?;
    let t = sample_points(&mut rng, 0.0, 1.0, &[], 0.0);
    let targets: Vec<f64> = (0..POINTS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let point: Vec<Tensor> = params.params.iter().map(|p| p.value.clone()).collect();
    grad_check(
        |tape: &mut Tape, leaves: &[NodeId]| -> Result<NodeId, String> {
            // The forward pass reads shapes and frozen state from `params`;
            // values flow through the leaves.
            let current = ModelParams {
                params: params
                    .params
                    .iter()
                    .zip(leaves)
                    .map(|(p, &l)| Param::new(p.name.clone(), tape.value(l).clone()))
                    .collect(),
                rff_frequencies: params.rff_frequencies.clone(),
            };
            let tn = tape.constant(Tensor::matrix(POINTS, 1, t.clone()));
            let y = forward(spec, &current, tape, leaves, tn).map_err(fmt_err)?;
            let target = tape.constant(Tensor::matrix(POINTS, 1, targets.clone()));
            let diff = tape.sub(y, target).map_err(fmt_err)?;
            let sq = tape.mul(diff, diff).map_err(fmt_err)?;
            Ok(tape.mean(sq))
        },
        &point,
        eps,
    )
    .map_err(fmt_err)
}
