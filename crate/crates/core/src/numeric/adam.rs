use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let dims = value.dims().to_vec();
        Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(&dims),
            m: Tensor::zeros(&dims),
            v: Tensor::zeros(&dims),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, dims: &[usize]) -> Self {
        Param::new(name, Tensor::zeros(dims))
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. The gradient is left in place.
pub fn adam_step(param: &mut Param, hyper: &AdamConfig) -> Result<()> {
    if !param.grad.is_finite() {
        return Err(Error::NonFinite {
            param: param.name.clone(),
        });
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let g = param.grad.data();
    let m = param.m.data_mut();
    for (mi, gi) in m.iter_mut().zip(g) {
        *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * gi;
    }
    let v = param.v.data_mut();
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * gi * gi;
    }
    if hyper.lr == 0.0 {
        return Ok(());
    }
    let m = param.m.data();
    let v = param.v.data();
    for ((x, mi), vi) in param.value.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        *x -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}
