//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order, so node inputs
//! always precede the node itself. [`Tape::backward`] walks the record in
//! reverse, accumulating adjoints, and returns a gradient for every leaf.
//!
//! ```
//! use neaf::autodiff::Tape;
//! use neaf::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.var(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```
//!
//! Besides the scalar primitives, two extension points keep model layers to
//! a single node each: [`Pointwise`] (an elementwise map with scalar
//! parameters, used for activations) and [`Expansion`] (a map from each input
//! element to a fixed-width feature block, used for basis functions).

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::tensor::{gemm, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape {shape:?} needs a different element count than {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a 2-D operand, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected {expected} scalar parameters, got {got}")]
    ParamCount {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An elementwise map `y = f(x; θ)` with a fixed number of scalar parameters.
pub trait Pointwise: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn num_params(&self) -> usize;

    fn forward(&self, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// Writes `upstream ⊙ ∂f/∂x` into `grad_x` and adds
    /// `Σ upstream ⊙ ∂f/∂θ_k` into `grad_theta[k]`.
    fn backward(
        &self,
        x: &[f64],
        theta: &[f64],
        upstream: &[f64],
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    );
}

/// Maps each scalar to `width()` features. An input of shape `[rows, cols]`
/// becomes `[rows, cols * width]`, one contiguous block per input column.
pub trait Expansion: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn width(&self) -> usize;

    fn eval(&self, x: f64, out: &mut [f64]);

    /// Features and their derivatives with respect to `x`.
    fn eval_with_derivative(&self, x: f64, out: &mut [f64], deriv: &mut [f64]);
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Max(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Log(NodeId),
    Reciprocal(NodeId),
    Pow(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Pointwise {
        input: NodeId,
        params: Vec<NodeId>,
        func: Arc<dyn Pointwise>,
    },
    Expand {
        input: NodeId,
        basis: Arc<dyn Expansion>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Max(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::Log(a)
            | Op::Reciprocal(a)
            | Op::Pow(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Pointwise { input, params, .. } => {
                let mut v = vec![*input];
                v.extend(params.iter().copied());
                v
            }
            Op::Expand { input, .. } => vec![*input],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Record of a computation, built by calling the operation methods in order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every leaf of a tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::var`]; `None` for other nodes.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// How the smaller operand of a binary op maps onto the larger one.
fn broadcast_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Vec<usize>, AutodiffError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb || b.len() == 1 || (sb.len() <= sa.len() && sa.ends_with(sb)) {
        return Ok(sa.to_vec());
    }
    if a.len() == 1 || (sa.len() <= sb.len() && sb.ends_with(sa)) {
        return Ok(sb.to_vec());
    }
    Err(AutodiffError::ShapeMismatch {
        op,
        left: sa.to_vec(),
        right: sb.to_vec(),
    })
}

fn binary(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, AutodiffError> {
    let shape = broadcast_shape(a, b, op)?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (la, lb) = (ad.len(), bd.len());
    let data = if la == n && lb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % la], bd[i % lb])).collect()
    };
    Tensor::new(shape, data)
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    let (m, k) = a.dims2().ok_or_else(|| AutodiffError::NotAMatrix {
        op: "matmul",
        shape: a.shape().to_vec(),
    })?;
    let (k2, n) = b.dims2().ok_or_else(|| AutodiffError::NotAMatrix {
        op: "matmul",
        shape: b.shape().to_vec(),
    })?;
    if k != k2 {
        return Err(AutodiffError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Ok(Tensor::matrix(m, n, out))
}

fn expand(x: &Tensor, basis: &dyn Expansion) -> Result<Tensor, AutodiffError> {
    let (rows, cols) = x.dims2().ok_or_else(|| AutodiffError::NotAMatrix {
        op: "expand",
        shape: x.shape().to_vec(),
    })?;
    let w = basis.width();
    let mut out = vec![0.0; rows * cols * w];
    for (xi, block) in x.data().iter().zip(out.chunks_exact_mut(w.max(1))) {
        basis.eval(*xi, block);
    }
    Ok(Tensor::matrix(rows, cols * w, out))
}

/// Forward evaluation of one node from the values of its inputs.
fn evaluate<'a>(op: &Op, v: impl Fn(&NodeId) -> &'a Tensor) -> Result<Tensor, AutodiffError> {
    Ok(match op {
        Op::Leaf | Op::Constant => unreachable!("leaves carry their own value"),
        Op::Add(a, b) => binary(v(a), v(b), "add", |x, y| x + y)?,
        Op::Sub(a, b) => binary(v(a), v(b), "sub", |x, y| x - y)?,
        Op::Mul(a, b) => binary(v(a), v(b), "mul", |x, y| x * y)?,
        Op::Max(a, b) => binary(v(a), v(b), "max", |x, y| if x > y { x } else { y })?,
        Op::MatMul(a, b) => matmul(v(a), v(b))?,
        Op::Neg(a) => v(a).map(|x| -x),
        Op::Scale(a, s) => {
            let s = *s;
            v(a).map(|x| s * x)
        }
        Op::Sin(a) => v(a).map(f64::sin),
        Op::Cos(a) => v(a).map(f64::cos),
        Op::Exp(a) => v(a).map(f64::exp),
        Op::Abs(a) => v(a).map(f64::abs),
        Op::Log(a) => v(a).map(f64::ln),
        Op::Reciprocal(a) => v(a).map(|x| 1.0 / x),
        Op::Pow(a, p) => {
            let p = *p;
            v(a).map(|x| x.powf(p))
        }
        Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
        Op::Mean(a) => {
            let t = v(a);
            Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
        }
        Op::Pointwise {
            input,
            params,
            func,
        } => {
            let x = v(input);
            let theta: Vec<f64> = params.iter().map(|p| v(p).data()[0]).collect();
            let mut out = vec![0.0; x.len()];
            func.forward(x.data(), &theta, &mut out);
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::Expand { input, basis } => expand(v(input), basis.as_ref())?,
    })
}

fn accumulate<'g>(grads: &'g mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'g mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Inputs of a node, in argument order.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    /// A differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, true)
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Constant, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId, AutodiffError> {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|id| self.nodes[id.0].requires_grad);
        let nodes = &self.nodes;
        let value = evaluate(&op, |id| &nodes[id.0].value)?;
        Ok(self.push_raw(op, value, requires_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Mul(a, b))
    }

    /// Elementwise maximum. Ties send the gradient to `b`, so
    /// `max(x, 0)` has derivative 0 at `x = 0`.
    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::Max(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a)).expect("unary op")
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor)).expect("unary op")
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a)).expect("unary op")
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a)).expect("unary op")
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a)).expect("unary op")
    }

    /// Absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a)).expect("unary op")
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a)).expect("unary op")
    }

    pub fn reciprocal(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Reciprocal(a)).expect("unary op")
    }

    pub fn pow(&mut self, a: NodeId, exponent: f64) -> NodeId {
        self.push(Op::Pow(a, exponent)).expect("unary op")
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a)).expect("unary op")
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a)).expect("unary op")
    }

    /// Applies `func` elementwise; each entry of `params` must be a
    /// single-element node.
    pub fn pointwise(
        &mut self,
        input: NodeId,
        params: &[NodeId],
        func: Arc<dyn Pointwise>,
    ) -> Result<NodeId, AutodiffError> {
        if params.len() != func.num_params() || params.iter().any(|p| !self.value(*p).is_scalar())
        {
            return Err(AutodiffError::ParamCount {
                op: func.name(),
                expected: func.num_params(),
                got: params.len(),
            });
        }
        self.push(Op::Pointwise {
            input,
            params: params.to_vec(),
            func,
        })
    }

    pub fn expand(
        &mut self,
        input: NodeId,
        basis: Arc<dyn Expansion>,
    ) -> Result<NodeId, AutodiffError> {
        self.push(Op::Expand { input, basis })
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>, AutodiffError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                ref op => evaluate(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from a single-element `output`.
    ///
    /// Every leaf created with [`Tape::var`] receives a gradient; leaves the
    /// output does not depend on get zeros.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, AutodiffError> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                shape: out.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut adj);
        }

        let grads = self
            .nodes
            .iter()
            .zip(adj)
            .map(|(node, g)| match node.op {
                Op::Leaf => Some(match g {
                    Some(data) => Tensor::new(node.value.shape().to_vec(), data)
                        .expect("gradient shape matches its leaf"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |id: &NodeId| &self.nodes[id.0].value;
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (id, s) in [(a, 1.0), (b, sign)] {
                    if self.needs(*id) {
                        let len = val(id).len();
                        let ga = accumulate(adj, *id, len);
                        for (i, gi) in g.iter().enumerate() {
                            ga[i % len] += s * gi;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                let (la, lb) = (ad.len(), bd.len());
                if self.needs(*a) {
                    let ga = accumulate(adj, *a, la);
                    for (i, gi) in g.iter().enumerate() {
                        ga[i % la] += gi * bd[i % lb];
                    }
                }
                if self.needs(*b) {
                    let gb = accumulate(adj, *b, lb);
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % lb] += gi * ad[i % la];
                    }
                }
            }
            Op::Max(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                let (la, lb) = (ad.len(), bd.len());
                if self.needs(*a) {
                    let ga = accumulate(adj, *a, la);
                    for (i, gi) in g.iter().enumerate() {
                        if ad[i % la] > bd[i % lb] {
                            ga[i % la] += gi;
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = accumulate(adj, *b, lb);
                    for (i, gi) in g.iter().enumerate() {
                        if ad[i % la] <= bd[i % lb] {
                            gb[i % lb] += gi;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2().expect("matmul operand");
                let n = val(b).dims2().expect("matmul operand").1;
                if self.needs(*a) {
                    let ga = accumulate(adj, *a, m * k);
                    gemm(m, n, k, g, false, val(b).data(), true, 1.0, ga);
                }
                if self.needs(*b) {
                    let gb = accumulate(adj, *b, k * n);
                    gemm(k, m, n, val(a).data(), true, g, false, 1.0, gb);
                }
            }
            Op::Neg(a) => self.unary(adj, a, g, |_, _| -1.0, value),
            Op::Scale(a, s) => {
                let s = *s;
                self.unary(adj, a, g, |_, _| s, value)
            }
            Op::Sin(a) => self.unary(adj, a, g, |x, _| x.cos(), value),
            Op::Cos(a) => self.unary(adj, a, g, |x, _| -x.sin(), value),
            Op::Exp(a) => self.unary(adj, a, g, |_, y| y, value),
            Op::Abs(a) => self.unary(
                adj,
                a,
                g,
                |x, _| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                },
                value,
            ),
            Op::Log(a) => self.unary(adj, a, g, |x, _| 1.0 / x, value),
            Op::Reciprocal(a) => self.unary(adj, a, g, |_, y| -y * y, value),
            Op::Pow(a, p) => {
                let p = *p;
                self.unary(adj, a, g, |x, _| p * x.powf(p - 1.0), value)
            }
            Op::Sum(a) | Op::Mean(a) => {
                if self.needs(*a) {
                    let len = val(a).len();
                    let scale = if matches!(op, Op::Mean(_)) {
                        1.0 / len as f64
                    } else {
                        1.0
                    };
                    let ga = accumulate(adj, *a, len);
                    for v in ga.iter_mut() {
                        *v += g[0] * scale;
                    }
                }
            }
            Op::Pointwise {
                input,
                params,
                func,
            } => {
                let x = val(input).data();
                let theta: Vec<f64> = params.iter().map(|p| val(p).data()[0]).collect();
                let mut grad_x = vec![0.0; x.len()];
                let mut grad_theta = vec![0.0; theta.len()];
                func.backward(x, &theta, g, &mut grad_x, &mut grad_theta);
                if self.needs(*input) {
                    let gi = accumulate(adj, *input, x.len());
                    for (acc, d) in gi.iter_mut().zip(&grad_x) {
                        *acc += d;
                    }
                }
                for (p, d) in params.iter().zip(&grad_theta) {
                    if self.needs(*p) {
                        accumulate(adj, *p, 1)[0] += d;
                    }
                }
            }
            Op::Expand { input, basis } => {
                if self.needs(*input) {
                    let x = val(input).data();
                    let w = basis.width();
                    let mut feat = vec![0.0; w];
                    let mut deriv = vec![0.0; w];
                    let gi = accumulate(adj, *input, x.len());
                    for (i, (&xi, gblock)) in x.iter().zip(g.chunks_exact(w.max(1))).enumerate() {
                        basis.eval_with_derivative(xi, &mut feat, &mut deriv);
                        gi[i] += gblock.iter().zip(&deriv).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }

    /// Chain rule for an elementwise op whose local derivative is
    /// `d(x, y)` with `y` the op's own output.
    fn unary(
        &self,
        adj: &mut [Option<Vec<f64>>],
        input: &NodeId,
        g: &[f64],
        d: impl Fn(f64, f64) -> f64,
        value: &Tensor,
    ) {
        if !self.needs(*input) {
            return;
        }
        let x = self.nodes[input.0].value.data();
        let ga = accumulate(adj, *input, x.len());
        for (((acc, &xi), &yi), &gi) in ga.iter_mut().zip(x).zip(value.data()).zip(g) {
            *acc += gi * d(xi, yi);
        }
    }
}
