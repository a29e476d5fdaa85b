//! Bias-corrected Adam updates over a fixed list of parameters.

use super::tensor::{Element, Tensor};
use super::NumericsError;

/// Named value/gradient pair; the unit every optimizer and checkpoint
/// operation works on.
#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Resets the gradient to exact zeros.
    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Adds a cotangent into the accumulated gradient.
    pub fn accumulate(&mut self, g: &Tensor<T>) {
        debug_assert_eq!(self.grad.shape(), g.shape(), "{}", self.name);
        self.grad.add_assign(g);
    }
}

/// Hyperparameters of one Adam optimizer instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment state, one slot per parameter in a fixed order.
#[derive(Debug)]
pub struct AdamState<T: Element> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(cfg: AdamConfig, params: &[&Parameter<T>]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState { cfg, t: 0, m, v }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. Parameters must arrive in the same order
    /// as at construction; gradients are left untouched for the caller to
    /// zero.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<(), NumericsError> {
        if params.len() != self.m.len() {
            return Err(NumericsError::Dimension {
                op: "adam_step",
                detail: format!(
                    "optimizer tracks {} parameters, got {}",
                    self.m.len(),
                    params.len()
                ),
            });
        }
        self.t += 1;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one = T::one();
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        let bc1 = one - T::from_f64(self.cfg.beta1.powi(self.t as i32));
        let bc2 = one - T::from_f64(self.cfg.beta2.powi(self.t as i32));

        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.shape() != self.m[i].shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    lhs: self.m[i].shape().to_vec(),
                    rhs: p.grad.shape().to_vec(),
                });
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((mv, vv), (&g, w)) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(p.grad.data().iter().zip(p.value.data_mut()))
            {
                *mv = b1 * *mv + (one - b1) * g;
                *vv = b2 * *vv + (one - b2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
