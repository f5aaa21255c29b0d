use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// RMSprop without momentum or centring.
///
/// `v ← α·v + (1−α)·g²`, `p ← p − lr·g / (√v + ε)`.
#[derive(Clone, Debug)]
pub struct RmsProp<T: Scalar = f32> {
    lr: f64,
    alpha: f64,
    eps: f64,
    square_avg: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub const DEFAULT_ALPHA: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(lr: f64, alpha: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("rmsprop alpha must lie in [0, 1), got {alpha}")));
        }
        if !(eps >= 0.0) {
            return Err(Error::Config(format!("rmsprop eps must be non-negative, got {eps}")));
        }
        Ok(Self {
            lr,
            alpha,
            eps,
            square_avg: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    /// Updates every parameter that carries a gradient. Parameters without a
    /// gradient are left untouched but keep their slot in the state.
    pub fn step(&mut self, params: &mut [Tensor<T>]) {
        if self.square_avg.len() != params.len() {
            self.square_avg = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        }
        let (lr, alpha, eps) = (T::of(self.lr), T::of(self.alpha), T::of(self.eps));
        for (param, state) in params.iter_mut().zip(self.square_avg.iter_mut()) {
            let Some(grad) = param.grad.take() else {
                continue;
            };
            for ((p, &g), v) in param.data.iter_mut().zip(&grad).zip(state.iter_mut()) {
                *v = alpha * *v + (T::one() - alpha) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            }
            param.grad = Some(grad);
        }
    }
}
