//! Reverse-mode automatic differentiation over a fixed op set.
//!
//! A [`Tape`] records whole-tensor operations in topological order; leaves
//! are registered explicitly and [`Tape::backward`] walks the recording in
//! reverse, accumulating gradients additively across fan-out in tape
//! order. Stochastic ops (dropout masks, noise and annealed quantization)
//! take an explicit seed and hash `(seed, op-kind stream, element index)`,
//! so a recording replays bit-identically and equal seeds reproduce equal
//! draws across different recordings.

pub mod grad_check;
pub mod kernels;
pub mod nll;
pub mod quantize;

pub use grad_check::grad_check;

/// Hash stream tag for dropout masks (see [`quantize::QUANT_STREAM`]).
pub const DROPOUT_STREAM: u64 = 0x44524f50;
pub use nll::GaussianForm;
pub use quantize::QuantizeMode;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Sigmoid,
    Tanh,
}

/// The operation set. Each kind has a registered forward and backward rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Mul,
    Exp,
    Log,
    Square,
    Sum,
    Mean,
    Dense,
    Activation(Activation),
    Conv2d { stride: usize, pad: usize },
    ConvTranspose2d { stride: usize, pad: usize },
    DropoutMask { keep_prob: f64, seed: u64 },
    Quantize { mode: QuantizeMode, seed: u64 },
    GaussianNll { form: GaussianForm },
    FactorizedNll,
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add => "add",
        Op::Mul => "mul",
        Op::Exp => "exp",
        Op::Log => "log",
        Op::Square => "square",
        Op::Sum => "sum",
        Op::Mean => "mean",
        Op::Dense => "dense",
        Op::Activation(_) => "activation",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv2d_transpose",
        Op::DropoutMask { .. } => "dropout_mask",
        Op::Quantize { .. } => "quantize_proxy",
        Op::GaussianNll { .. } => "gaussian_nll",
        Op::FactorizedNll => "factorized_nll",
    }
}

struct Node<F: Scalar> {
    op: Op,
    inputs: Vec<VarId>,
    value: Tensor<F>,
    needs_grad: bool,
}

/// Gradient map produced by [`Tape::backward`]; leaves registered with
/// `requires_grad = false` receive no entry.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor<F>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Register an input; whether gradients flow into it follows the
    /// tensor's `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor<F>) -> VarId {
        let needs_grad = t.requires_grad;
        self.nodes.push(Node { op: Op::Leaf, inputs: vec![], value: t, needs_grad });
        VarId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut t: Tensor<F>) -> VarId {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn const_scalar(&mut self, v: f64) -> VarId {
        self.constant(Tensor::scalar(F::of(v)))
    }

    pub fn const_full(&mut self, shape: &[usize], v: f64) -> VarId {
        self.constant(Tensor::full(shape, F::of(v)))
    }

    /// Record one operation. Output is computed eagerly, validated finite,
    /// and appended to the tape; stochastic ops key their hash stream on
    /// the new node's index.
    pub fn apply(&mut self, op: Op, inputs: &[VarId]) -> Result<VarId> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::NotOnTape(id.0));
            }
        }
        let value = self.eval(&op, inputs)?;
        let node_index = self.nodes.len();
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name(&op) });
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, inputs: inputs.to_vec(), value, needs_grad });
        Ok(VarId(node_index))
    }

    fn eval(&self, op: &Op, inputs: &[VarId]) -> Result<Tensor<F>> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::ShapeMismatch {
                    op: op_name(op),
                    detail: format!("expected {} inputs, got {}", n, inputs.len()),
                });
            }
            Ok(())
        };
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        match op {
            Op::Leaf => Err(Error::ShapeMismatch { op: "leaf", detail: "leaf is not applied".into() }),
            Op::Add => {
                arity(2)?;
                elementwise_binary(op_name(op), val(0), val(1), |a, b| a + b)
            }
            Op::Mul => {
                arity(2)?;
                elementwise_binary(op_name(op), val(0), val(1), |a, b| a * b)
            }
            Op::Exp => {
                arity(1)?;
                Ok(val(0).map(|v| v.exp()))
            }
            Op::Log => {
                arity(1)?;
                Ok(val(0).map(|v| v.ln()))
            }
            Op::Square => {
                arity(1)?;
                Ok(val(0).map(|v| v * v))
            }
            Op::Sum => {
                arity(1)?;
                Ok(Tensor::scalar(val(0).sum()))
            }
            Op::Mean => {
                arity(1)?;
                let x = val(0);
                Ok(Tensor::scalar(x.sum() / F::of(x.numel() as f64)))
            }
            Op::Dense => {
                arity(2)?;
                kernels::dense(val(0), val(1))
            }
            Op::Activation(kind) => {
                arity(1)?;
                Ok(match kind {
                    Activation::Softplus => val(0).map(crate::scalar::softplus),
                    Activation::Sigmoid => val(0).map(sigmoid),
                    Activation::Tanh => val(0).map(|v| v.tanh()),
                })
            }
            Op::Conv2d { stride, pad } => {
                arity(3)?;
                kernels::conv2d(val(0), val(1), val(2), *stride, *pad)
            }
            Op::ConvTranspose2d { stride, pad } => {
                arity(3)?;
                kernels::conv2d_transpose(val(0), val(1), val(2), *stride, *pad)
            }
            Op::DropoutMask { keep_prob, seed } => {
                arity(1)?;
                if !(*keep_prob > 0.0 && *keep_prob <= 1.0) {
                    return Err(Error::Config(format!("keep_prob {} outside (0, 1]", keep_prob)));
                }
                let x = val(0);
                let inv = F::of(1.0 / keep_prob);
                let mut out = x.clone();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    let keep = rng::uniform(*seed, DROPOUT_STREAM, i as u64) < *keep_prob;
                    *v = if keep { *v * inv } else { F::zero() };
                }
                out.requires_grad = false;
                Ok(out)
            }
            Op::Quantize { mode, seed } => {
                arity(1)?;
                Ok(quantize::quantize_forward(val(0), *mode, *seed, quantize::QUANT_STREAM))
            }
            Op::GaussianNll { form } => {
                arity(3)?;
                nll::gaussian_nll_forward(*form, val(0), val(1), val(2))
            }
            Op::FactorizedNll => {
                arity(12)?;
                let params: Vec<&Tensor<F>> = inputs[1..].iter().map(|i| &self.nodes[i.0].value).collect();
                nll::factorized_nll_forward(val(0), &params)
            }
        }
    }

    /// Reverse pass from a scalar output; seed gradient is 1.
    pub fn backward(&self, out: VarId) -> Result<Gradients<F>> {
        if out.0 >= self.nodes.len() {
            return Err(Error::NotOnTape(out.0));
        }
        let value = &self.nodes[out.0].value;
        if value.numel() != 1 {
            return Err(Error::NonScalarOutput(value.shape().to_vec()));
        }
        self.backward_with_seed(out, Tensor::full(value.shape(), F::one()))
    }

    /// Reverse pass with a caller-supplied seed gradient.
    pub fn backward_with_seed(&self, out: VarId, seed_grad: Tensor<F>) -> Result<Gradients<F>> {
        if out.0 >= self.nodes.len() {
            return Err(Error::NotOnTape(out.0));
        }
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(out.0 + 1);
        grads.resize_with(out.0 + 1, || None);
        if self.nodes[out.0].needs_grad {
            grads[out.0] = Some(seed_grad);
        }
        for i in (0..=out.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        // only leaves may retain entries
        for (i, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let inputs = &node.inputs;
        let val = |k: usize| &self.nodes[inputs[k].0].value;
        let needs = |k: usize| self.nodes[inputs[k].0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                for k in 0..2 {
                    if needs(k) {
                        let delta = reduce_to_shape(g, val(k).shape());
                        self.acc(grads, inputs[k], delta);
                    }
                }
            }
            Op::Mul => {
                for (k, other) in [(0usize, 1usize), (1, 0)] {
                    if needs(k) {
                        let prod = broadcast_mul(g, val(other));
                        let delta = reduce_to_shape(&prod, val(k).shape());
                        self.acc(grads, inputs[k], delta);
                    }
                }
            }
            Op::Exp => {
                if needs(0) {
                    self.acc(grads, inputs[0], hadamard(g, &node.value));
                }
            }
            Op::Log => {
                if needs(0) {
                    let x = val(0);
                    let delta = Tensor::from_fn(x.shape(), |j| g.data()[j] / x.data()[j]);
                    self.acc(grads, inputs[0], delta);
                }
            }
            Op::Square => {
                if needs(0) {
                    let x = val(0);
                    let two = F::of(2.0);
                    let delta = Tensor::from_fn(x.shape(), |j| two * g.data()[j] * x.data()[j]);
                    self.acc(grads, inputs[0], delta);
                }
            }
            Op::Sum => {
                if needs(0) {
                    self.acc(grads, inputs[0], Tensor::full(val(0).shape(), g.item()));
                }
            }
            Op::Mean => {
                if needs(0) {
                    let x = val(0);
                    let v = g.item() / F::of(x.numel() as f64);
                    self.acc(grads, inputs[0], Tensor::full(x.shape(), v));
                }
            }
            Op::Dense => {
                if needs(0) {
                    self.acc(grads, inputs[0], kernels::dense_grad_input(g, val(1), val(0).shape()));
                }
                if needs(1) {
                    self.acc(grads, inputs[1], kernels::dense_grad_weight(g, val(0)));
                }
            }
            Op::Activation(kind) => {
                if needs(0) {
                    let x = val(0);
                    let y = &node.value;
                    let delta = match kind {
                        Activation::Softplus => {
                            Tensor::from_fn(x.shape(), |j| g.data()[j] * sigmoid(x.data()[j]))
                        }
                        Activation::Sigmoid => Tensor::from_fn(x.shape(), |j| {
                            let s = y.data()[j];
                            g.data()[j] * s * (F::one() - s)
                        }),
                        Activation::Tanh => Tensor::from_fn(x.shape(), |j| {
                            let t = y.data()[j];
                            g.data()[j] * (F::one() - t * t)
                        }),
                    };
                    self.acc(grads, inputs[0], delta);
                }
            }
            Op::Conv2d { stride, pad } => {
                if needs(0) {
                    self.acc(grads, inputs[0], kernels::conv2d_grad_input(g, val(1), val(0).shape(), *stride, *pad));
                }
                if needs(1) {
                    self.acc(grads, inputs[1], kernels::conv2d_grad_weight(g, val(0), val(1).shape(), *stride, *pad));
                }
                if needs(2) {
                    self.acc(grads, inputs[2], kernels::grad_bias(g));
                }
            }
            Op::ConvTranspose2d { stride, pad } => {
                if needs(0) {
                    self.acc(grads, inputs[0], kernels::conv2d_transpose_grad_input(g, val(1), val(0).shape(), *stride, *pad));
                }
                if needs(1) {
                    self.acc(grads, inputs[1], kernels::conv2d_transpose_grad_weight(g, val(0), val(1).shape(), *stride, *pad));
                }
                if needs(2) {
                    self.acc(grads, inputs[2], kernels::grad_bias(g));
                }
            }
            Op::DropoutMask { keep_prob, seed } => {
                if needs(0) {
                    let inv = F::of(1.0 / keep_prob);
                    let delta = Tensor::from_fn(val(0).shape(), |j| {
                        if rng::uniform(*seed, DROPOUT_STREAM, j as u64) < *keep_prob {
                            g.data()[j] * inv
                        } else {
                            F::zero()
                        }
                    });
                    self.acc(grads, inputs[0], delta);
                }
            }
            Op::Quantize { mode, .. } => {
                if needs(0) {
                    if let Some(factor) = quantize::quantize_backward_factor(val(0), *mode) {
                        self.acc(grads, inputs[0], hadamard(g, &factor));
                    }
                }
            }
            Op::GaussianNll { form } => {
                let (dv, dmu, dsig) = nll::gaussian_nll_backward(*form, g, val(0), val(1), val(2));
                if needs(0) {
                    self.acc(grads, inputs[0], dv);
                }
                if needs(1) {
                    self.acc(grads, inputs[1], dmu);
                }
                if needs(2) {
                    self.acc(grads, inputs[2], dsig);
                }
            }
            Op::FactorizedNll => {
                let params: Vec<&Tensor<F>> = inputs[1..].iter().map(|k| &self.nodes[k.0].value).collect();
                let want_params = (1..12).any(|k| needs(k));
                let (dz, dparams) = nll::factorized_nll_backward(g, val(0), &params);
                if needs(0) {
                    self.acc(grads, inputs[0], dz);
                }
                if want_params {
                    for (k, dp) in dparams.into_iter().enumerate() {
                        if needs(k + 1) {
                            self.acc(grads, inputs[k + 1], dp);
                        }
                    }
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], id: VarId, delta: Tensor<F>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Recompute every recorded op from stored inputs and compare
    /// bit-exactly with the recorded outputs.
    pub fn replay_matches(&self) -> Result<bool> {
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let value = self.eval(&node.op, &node.inputs)?;
            if value.data() != node.value.data() || value.shape() != node.value.shape() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    // sugar

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn mul_scalar(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let s = self.const_scalar(c);
        self.mul(a, s)
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let s = self.const_scalar(c);
        self.add(a, s)
    }

    pub fn neg(&mut self, a: VarId) -> Result<VarId> {
        self.mul_scalar(a, -1.0)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn exp(&mut self, a: VarId) -> Result<VarId> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: VarId) -> Result<VarId> {
        self.apply(Op::Log, &[a])
    }

    pub fn square(&mut self, a: VarId) -> Result<VarId> {
        self.apply(Op::Square, &[a])
    }

    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: VarId) -> Result<VarId> {
        self.apply(Op::Mean, &[a])
    }

    pub fn dense(&mut self, x: VarId, w: VarId) -> Result<VarId> {
        self.apply(Op::Dense, &[x, w])
    }

    pub fn activation(&mut self, x: VarId, kind: Activation) -> Result<VarId> {
        self.apply(Op::Activation(kind), &[x])
    }

    pub fn softplus(&mut self, x: VarId) -> Result<VarId> {
        self.activation(x, Activation::Softplus)
    }

    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> Result<VarId> {
        self.apply(Op::Conv2d { stride, pad }, &[x, w, b])
    }

    pub fn conv2d_transpose(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> Result<VarId> {
        self.apply(Op::ConvTranspose2d { stride, pad }, &[x, w, b])
    }

    pub fn dropout(&mut self, x: VarId, keep_prob: f64, seed: u64) -> Result<VarId> {
        self.apply(Op::DropoutMask { keep_prob, seed }, &[x])
    }

    pub fn quantize(&mut self, x: VarId, mode: QuantizeMode, seed: u64) -> Result<VarId> {
        self.apply(Op::Quantize { mode, seed }, &[x])
    }

    pub fn gaussian_nll(&mut self, v: VarId, mu: VarId, sigma: VarId, form: GaussianForm) -> Result<VarId> {
        self.apply(Op::GaussianNll { form }, &[v, mu, sigma])
    }

    pub fn factorized_nll(&mut self, z: VarId, params: &[VarId]) -> Result<VarId> {
        let mut inputs = Vec::with_capacity(12);
        inputs.push(z);
        inputs.extend_from_slice(params);
        self.apply(Op::FactorizedNll, &inputs)
    }
}

/// Elementwise binary with scalar broadcast on either side.
fn elementwise_binary<F: Scalar>(
    op: &'static str,
    a: &Tensor<F>,
    b: &Tensor<F>,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    if a.shape() == b.shape() {
        Ok(Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i])))
    } else if b.numel() == 1 {
        let bv = b.item();
        Ok(a.map(|v| f(v, bv)))
    } else if a.numel() == 1 {
        let av = a.item();
        Ok(b.map(|v| f(av, v)))
    } else {
        Err(Error::ShapeMismatch { op, detail: format!("{:?} vs {:?}", a.shape(), b.shape()) })
    }
}

fn hadamard<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i])
}

/// Multiply, broadcasting a scalar side if present.
fn broadcast_mul<F: Scalar>(g: &Tensor<F>, other: &Tensor<F>) -> Tensor<F> {
    if g.shape() == other.shape() {
        hadamard(g, other)
    } else if other.numel() == 1 {
        let c = other.item();
        g.map(|v| v * c)
    } else {
        // g is scalar (broadcast output cannot be smaller than inputs)
        let c = g.item();
        other.map(|v| v * c)
    }
}

/// Sum a gradient down to a broadcast input's shape.
fn reduce_to_shape<F: Scalar>(g: &Tensor<F>, shape: &[usize]) -> Tensor<F> {
    if g.shape() == shape {
        g.clone()
    } else {
        debug_assert_eq!(shape.iter().product::<usize>(), 1);
        Tensor::new(shape.to_vec(), vec![g.sum()]).expect("scalar reduce")
    }
}
