//! Define-by-run reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass walks it once in reverse.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::objective::Reduction;
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
        scale: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `like` when `var` did not
    /// influence the root.
    pub fn take_or_zeros(&mut self, var: Var, like: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf; no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let kernels::MaxPoolOutput { output, argmax } =
            kernels::maxpool2d(self.value(input), window)?;
        let rg = self.needs(input);
        Ok(self.push(output, Op::MaxPool { input, argmax }, rg))
    }

    pub fn upsample2x(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = kernels::upsample2x(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Upsample {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = kernels::relu(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product of identically shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = va.zip_map(vb, |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        let rg = self.needs(input);
        self.push(out, Op::Sum(input), rg)
    }

    /// Squared-error loss. The leading axis is the sample axis.
    pub fn mse(&mut self, pred: Var, target: Var, reduction: Reduction) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        let loss = crate::objective::mse(p, t, reduction)?;
        let scale = reduction.scale::<T>(p.shape());
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Tensor::scalar(loss.value),
            Op::Mse {
                pred,
                target,
                scale,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`. Only nodes that require gradients
    /// receive one.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_val = &self.nodes[root.0].value;
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_val.shape(), T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let cg = kernels::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        *stride,
                        *padding,
                        self.needs(*input),
                    )?;
                    if let Some(gx) = cg.input {
                        accumulate(&mut grads, *input, gx);
                    }
                    if self.needs(*weight) {
                        accumulate(&mut grads, *weight, cg.weight);
                    }
                    if let Some(b) = bias.filter(|b| self.needs(*b)) {
                        accumulate(&mut grads, b, cg.bias);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    if self.needs(*input) {
                        let gx =
                            kernels::maxpool2d_backward(&g, argmax, self.value(*input).shape())?;
                        accumulate(&mut grads, *input, gx);
                    }
                }
                Op::Upsample {
                    input,
                    weight,
                    bias,
                } => {
                    let cg = kernels::upsample2x_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        self.needs(*input),
                    )?;
                    if let Some(gx) = cg.input {
                        accumulate(&mut grads, *input, gx);
                    }
                    if self.needs(*weight) {
                        accumulate(&mut grads, *weight, cg.weight);
                    }
                    if let Some(b) = bias.filter(|b| self.needs(*b)) {
                        accumulate(&mut grads, b, cg.bias);
                    }
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let gx = g.zip_map(x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })?;
                    accumulate(&mut grads, *input, gx);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.slice_channels(0, ca)?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.slice_channels(ca, ca + cb)?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.zip_map(self.value(*b), |gv, y| gv * y)?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.zip_map(self.value(*a), |gv, x| gv * x)?);
                    }
                }
                Op::Sum(input) => {
                    let gv = g.item();
                    accumulate(
                        &mut grads,
                        *input,
                        Tensor::full(self.value(*input).shape(), gv),
                    );
                }
                Op::Mse {
                    pred,
                    target,
                    scale,
                } => {
                    let k = g.item() * (*scale + *scale);
                    let diff = self
                        .value(*pred)
                        .zip_map(self.value(*target), |p, t| k * (p - t))?;
                    if self.needs(*target) {
                        accumulate(&mut grads, *target, diff.map(|d| -d));
                    }
                    if self.needs(*pred) {
                        accumulate(&mut grads, *pred, diff);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
