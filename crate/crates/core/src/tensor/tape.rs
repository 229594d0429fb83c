//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order; `backward` walks it once in reverse.

use super::kernels::{self, Activation, BnMode, BnSaved, ConvGeom, RunningStats};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, depthwise: bool },
    Dense { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: BnSaved<T> },
    Act { x: Var, kind: Activation },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { x: Var },
    Scale { x: Var, factor: T },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Option<Var>]) -> Var {
        let requires_grad = inputs.iter().flatten().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn check_open(&self) -> Result<()> {
        if self.backward_done {
            Err(Error::InvalidState("tape already consumed by backward; start a new forward pass".into()))
        } else {
            Ok(())
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf (inputs, labels turned into tensors, ...).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.check_open()?;
        let (y, geom) = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        Ok(self.push(y, Op::Conv { x, w, b, geom, depthwise: false }, &[Some(x), Some(w), b]))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.check_open()?;
        let (y, geom) = kernels::depthwise_conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        Ok(self.push(y, Op::Conv { x, w, b, geom, depthwise: true }, &[Some(x), Some(w), b]))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check_open()?;
        let y = kernels::dense(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Dense { x, w, b }, &[Some(x), Some(w), b]))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: BnMode,
        momentum: T,
        eps: T,
    ) -> Result<Var> {
        self.batchnorm_act(x, gamma, beta, running, mode, momentum, eps, Activation::Linear)
    }

    /// Batch norm fused with the activation that follows it.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm_act(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: BnMode,
        momentum: T,
        eps: T,
        act: Activation,
    ) -> Result<Var> {
        self.check_open()?;
        let (y, saved) = kernels::batchnorm_act(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            mode,
            momentum,
            eps,
            act,
        )?;
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, saved }, &[Some(x), Some(gamma), Some(beta)]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check_open()?;
        if kind == Activation::Linear {
            return Ok(x);
        }
        let y = kernels::activation(self.value(x), kind);
        Ok(self.push(y, Op::Act { x, kind }, &[Some(x)]))
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        self.check_open()?;
        let (y, argmax) = kernels::maxpool2d(self.value(x), k, stride)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[Some(x)]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let y = kernels::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { x }, &[Some(x)]))
    }

    pub fn concat_features(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        let y = kernels::concat_features(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat { a, b }, &[Some(a), Some(b)]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let y = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        Ok(self.push(y, Op::Add { a, b }, &[Some(a), Some(b)]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_open()?;
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p * q).collect();
        let y = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        Ok(self.push(y, Op::Mul { a, b }, &[Some(a), Some(b)]))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_open()?;
        let s = self.value(x).data().iter().copied().sum::<T>();
        Ok(self.push(Tensor::from_parts(vec![1], vec![s]), Op::Sum { x }, &[Some(x)]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.check_open()?;
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let y = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        Ok(self.push(y, Op::Scale { x, factor }, &[Some(x)]))
    }

    /// Mean categorical cross-entropy. Returns the scalar loss node and the
    /// softmax probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        self.check_open()?;
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        let op = Op::SoftmaxCe { logits, labels: labels.to_vec(), probs: probs.data().to_vec() };
        let v = self.push(Tensor::from_parts(vec![1], vec![loss]), op, &[Some(logits)]);
        Ok((v, probs))
    }

    /// Hash of which side of every kink (relu/relu6 thresholds, maxpool
    /// winners) the recorded forward pass landed on. Two passes with equal
    /// signatures evaluated the same smooth branch of the graph.
    pub fn kink_signature(&self) -> u64 {
        const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(FNV_PRIME);
        };
        let six = T::lit(6.0);
        let region = |v: T, kind: Activation| {
            if v <= T::zero() {
                0
            } else if kind == Activation::Relu6 && v >= six {
                2
            } else {
                1
            }
        };
        for node in &self.nodes {
            match &node.op {
                Op::Act { x, kind } => self.value(*x).data().iter().for_each(|&v| eat(region(v, *kind))),
                // y = clamp(z) lands on the same side of each kink as z.
                Op::BatchNorm { saved, .. } if saved.act != Activation::Linear => {
                    node.value.data().iter().for_each(|&v| eat(region(v, saved.act)))
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| eat(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Accumulates d(loss)/d(leaf) for every leaf that requires a gradient.
    /// A tape can be differentiated once; record a new pass afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check_open()?;
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!("backward: loss must be a scalar, got shape {:?}", self.value(loss).shape())));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contribution) in self.local_grads(i, &g) {
                accumulate(&mut grads[input.0], contribution);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let leaf_grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if matches!(n.op, Op::Leaf) && n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients { grads: leaf_grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        let mut emit = |v: Option<Var>, grad: Option<Vec<T>>| {
            if let (Some(v), Some(grad)) = (v, grad) {
                out.push((v, grad));
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, depthwise } => {
                let need = [self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b))];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let (dx, dw, db) = if *depthwise {
                    kernels::depthwise_conv2d_backward(geom, xv, wv, g, need)
                } else {
                    kernels::conv2d_backward(geom, xv, wv, g, need)
                };
                emit(Some(*x), dx);
                emit(Some(*w), dw);
                emit(*b, db);
            }
            Op::Dense { x, w, b } => {
                let need = [self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b))];
                let (n, f) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let gdim = self.value(*w).shape()[1];
                let (dx, dw, db) =
                    kernels::dense_backward(n, f, gdim, self.value(*x).data(), self.value(*w).data(), g, need);
                emit(Some(*x), dx);
                emit(Some(*w), dw);
                emit(*b, db);
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let need = [self.wants(*x), self.wants(*gamma), self.wants(*beta)];
                let (dx, dg, db) = kernels::batchnorm_backward(
                    self.value(*x).shape(),
                    saved,
                    self.value(*x).data(),
                    self.nodes[i].value.data(),
                    self.value(*gamma).data(),
                    g,
                    need,
                );
                emit(Some(*x), dx);
                emit(Some(*gamma), dg);
                emit(Some(*beta), db);
            }
            Op::Act { x, kind } => {
                emit(Some(*x), Some(kernels::activation_backward(self.value(*x).data(), g, *kind)));
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&src, &d) in argmax.iter().zip(g) {
                    dx[src] += d;
                }
                emit(Some(*x), Some(dx));
            }
            Op::GlobalAvgPool { x } => {
                let shape = self.value(*x).shape();
                let plane = shape[2] * shape[3];
                let inv = T::one() / T::from_usize(plane).unwrap();
                let dx = g.iter().flat_map(|&d| std::iter::repeat(d * inv).take(plane)).collect();
                emit(Some(*x), Some(dx));
            }
            Op::Concat { a, b } => {
                let f1 = self.value(*a).shape()[1];
                let f2 = self.value(*b).shape()[1];
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in g.chunks(f1 + f2) {
                    da.extend_from_slice(&row[..f1]);
                    db.extend_from_slice(&row[f1..]);
                }
                emit(Some(*a), Some(da));
                emit(Some(*b), Some(db));
            }
            Op::Add { a, b } => {
                emit(Some(*a), Some(g.to_vec()));
                emit(Some(*b), Some(g.to_vec()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                emit(Some(*a), Some(g.iter().zip(bv).map(|(&d, &q)| d * q).collect()));
                emit(Some(*b), Some(g.iter().zip(av).map(|(&d, &p)| d * p).collect()));
            }
            Op::Sum { x } => {
                emit(Some(*x), Some(vec![g[0]; self.value(*x).len()]));
            }
            Op::Scale { x, factor } => {
                emit(Some(*x), Some(g.iter().map(|&d| d * *factor).collect()));
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = self.value(*logits).shape()[1];
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * k + l] -= scale;
                }
                emit(Some(*logits), Some(d));
            }
        }
        out.retain(|(v, _)| self.wants(*v));
        out
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, &c)| *a += c),
        None => *slot = Some(contribution),
    }
}

/// Gradients of a scalar loss with respect to the tape's trainable leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; leaves the loss does not depend on get zeros.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(&shape),
        }
    }
}
