//! Differentiable primitives shared by every layer.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Cached statistics of a single LayerNorm evaluation.
#[derive(Debug, Clone, Copy)]
pub struct NormStats {
    pub mean: f64,
    pub inv_std: f64,
}

/// LayerNorm over one feature vector, written into `out`. Uses the biased
/// variance.
pub fn layer_norm_into(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    out: &mut [f64],
) -> NormStats {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = gamma[i] * ((x[i] - mean) * inv_std) + beta[i];
    }
    NormStats { mean, inv_std }
}

/// Backward of [`layer_norm_into`]. Accumulates into `grad_gamma`/`grad_beta`
/// and overwrites `grad_x`.
pub fn layer_norm_backward_into(
    x: &[f64],
    gamma: &[f64],
    stats: NormStats,
    upstream: &[f64],
    grad_x: &mut [f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) {
    let d = x.len();
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for i in 0..d {
        let xhat = (x[i] - stats.mean) * stats.inv_std;
        let dxhat = upstream[i] * gamma[i];
        grad_gamma[i] += upstream[i] * xhat;
        grad_beta[i] += upstream[i];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= d as f64;
    mean_dxhat_xhat /= d as f64;
    for i in 0..d {
        let xhat = (x[i] - stats.mean) * stats.inv_std;
        let dxhat = upstream[i] * gamma[i];
        grad_x[i] = stats.inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
}

fn check_same_len(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{what}: length {} does not match {}",
            b.len(),
            a.len()
        )));
    }
    Ok(())
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::EmptyInput("layer_norm input"));
    }
    check_same_len("gamma", x, gamma)?;
    check_same_len("beta", x, beta)?;
    let mut out = Tensor::zeros(x.dims());
    layer_norm_into(x.data(), gamma.data(), beta.data(), eps, out.data_mut());
    Ok(out)
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    _beta: &Tensor,
    eps: f64,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_same_len("gamma", x, gamma)?;
    check_same_len("upstream", x, upstream)?;
    let mut scratch = vec![0.0; x.len()];
    let zeros = vec![0.0; x.len()];
    let stats = layer_norm_into(x.data(), gamma.data(), &zeros, eps, &mut scratch);
    let mut gx = Tensor::zeros(x.dims());
    let mut gg = Tensor::zeros(x.dims());
    let mut gb = Tensor::zeros(x.dims());
    layer_norm_backward_into(
        x.data(),
        gamma.data(),
        stats,
        upstream.data(),
        gx.data_mut(),
        gg.data_mut(),
        gb.data_mut(),
    );
    Ok((gx, gg, gb))
}

/// Logistic function, split on sign so `exp` never overflows.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = sigmoid_scalar(*v));
    out
}

/// Binary cross-entropy of one logit against a {0,1} target.
pub fn bce_logit_scalar(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Mean BCE over logits. Returns the loss and d loss / d logit per element.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("bce logits"));
    }
    if logits.len() != targets.len() {
        return Err(Error::Shape(format!(
            "bce: {} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(targets) {
        loss += bce_logit_scalar(z, t);
        grad.push((sigmoid_scalar(z) - t) / n);
    }
    Ok((loss / n, grad))
}

/// Mean BCE over probabilities. Probabilities are mapped back to logits
/// (clamped away from 0 and 1) so saturated inputs give finite loss.
pub fn bce_loss(p: &Tensor, t: &Tensor) -> Result<f64> {
    const CLAMP: f64 = 1e-15;
    let logits: Vec<f64> = p
        .data()
        .iter()
        .map(|&p| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            p.ln() - (-p).ln_1p()
        })
        .collect();
    bce_with_logits(&logits, t.data()).map(|(l, _)| l)
}
