use super::conv::{conv2d_backward, conv2d_forward, conv_geometry, ConvGeometry};
use super::loss::huber_forward;
use super::norm::{batchnorm_backward, batchnorm_forward, BN_EPS};
use super::pool::{maxpool2_forward, upsample2_backward, upsample2_forward};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a batch-norm node normalises its input.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Per-channel batch statistics; the caller folds the returned
    /// [`BatchStats`] into its running estimates.
    Train,
    /// Fixed running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Batch mean and unbiased variance observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Huber {
        pred: Var,
        slope: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are recorded in creation order, which is a topological order, so the
/// backward pass walks the tape in reverse and visits each node once.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
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

    /// Records a leaf. Gradients are accumulated into it when the tensor
    /// has `requires_grad` set.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        let b = bias.map(|b| self.value(b));
        let geom = conv_geometry(x, w, b, stride, padding)?;
        let out = conv2d_forward(x, w, b, stride, padding)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let needs = self.needs(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            needs,
        ))
    }

    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.value(input);
        let running = match mode {
            BatchNormMode::Train => None,
            BatchNormMode::Eval { mean, var } => Some((mean, var)),
        };
        let fwd = batchnorm_forward(
            x,
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
            T::of(BN_EPS),
        )?;
        let out = Tensor::new(x.shape(), fwd.output)?;
        let needs = self.needs(&[input, gamma, beta]);
        let stats = fwd
            .batch_stats
            .map(|(mean, var)| BatchStats { mean, var });
        let v = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized: fwd.normalized,
                inv_std: fwd.inv_std,
                training: running.is_none(),
            },
            needs,
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        let needs = self.needs(&[input]);
        self.push(out, Op::Relu(input), needs)
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = maxpool2_forward(self.value(input))?;
        let needs = self.needs(&[input]);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, needs))
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let out = upsample2_forward(self.value(input))?;
        let needs = self.needs(&[input]);
        Ok(self.push(out, Op::Upsample2(input), needs))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("operand shapes differ: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum::<T>();
        let needs = self.needs(&[input]);
        self.push(Tensor::scalar(total), Op::Sum(input), needs)
    }

    /// Weighted smooth-L1 heatmap loss against a constant target.
    ///
    /// Per-pixel penalties are averaged within each channel, scaled by that
    /// channel's weight, then averaged over channels and batch.
    pub fn huber_loss(&mut self, pred: Var, target: &Tensor<T>, weights: &[T]) -> Result<Var> {
        let (value, slope) = huber_forward(self.value(pred), target, weights)?;
        let needs = self.needs(&[pred]);
        Ok(self.push(Tensor::scalar(value), Op::Huber { pred, slope }, needs))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::Rank(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    self.nodes[idx].value.accumulate_grad(&grad);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let need = (
                        self.nodes[input.0].needs_grad,
                        self.nodes[weight.0].needs_grad,
                        bias.is_some_and(|b| self.nodes[b.0].needs_grad),
                    );
                    let g = conv2d_backward(
                        geom,
                        self.nodes[input.0].value.data(),
                        self.nodes[weight.0].value.data(),
                        &grad,
                        need,
                    );
                    if let Some(d) = g.input {
                        accumulate(&mut grads, *input, d);
                    }
                    if let Some(d) = g.weight {
                        accumulate(&mut grads, *weight, d);
                    }
                    if let (Some(b), Some(d)) = (bias, g.bias) {
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                    training,
                } => {
                    let dims = self.nodes[input.0].value.dims4("batchnorm2d")?;
                    let g = batchnorm_backward(
                        dims,
                        self.nodes[gamma.0].value.data(),
                        normalized,
                        inv_std,
                        *training,
                        &grad,
                    );
                    let (input, gamma, beta) = (*input, *gamma, *beta);
                    self.route(&mut grads, input, g.input);
                    self.route(&mut grads, gamma, g.gamma);
                    self.route(&mut grads, beta, g.beta);
                }
                Op::Relu(input) => {
                    let x = self.nodes[input.0].value.data();
                    let d = grad
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *input, d);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut d = vec![T::zero(); self.nodes[input.0].value.numel()];
                    for (&src, &g) in argmax.iter().zip(&grad) {
                        d[src] += g;
                    }
                    accumulate(&mut grads, *input, d);
                }
                Op::Upsample2(input) => {
                    let dims = self.nodes[input.0].value.dims4("upsample_nearest2")?;
                    accumulate(&mut grads, *input, upsample2_backward(dims, &grad));
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.route(&mut grads, b, grad.clone());
                    self.route(&mut grads, a, grad);
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let da = grad.iter().zip(xb).map(|(&g, &v)| g * v).collect();
                    let db = grad.iter().zip(xa).map(|(&g, &v)| g * v).collect();
                    let (a, b) = (*a, *b);
                    self.route(&mut grads, a, da);
                    self.route(&mut grads, b, db);
                }
                Op::Sum(input) => {
                    let n = self.nodes[input.0].value.numel();
                    accumulate(&mut grads, *input, vec![grad[0]; n]);
                }
                Op::Huber { pred, slope } => {
                    let d = slope.iter().map(|&s| s * grad[0]).collect();
                    accumulate(&mut grads, *pred, d);
                }
            }
        }
        Ok(())
    }

    fn route(&self, grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
        if self.nodes[v.0].needs_grad {
            accumulate(grads, v, d);
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d),
    }
}
