//! Node head, importance head, graph readout and the graph classifier MLP.

use crate::error::{Error, Result};
use crate::numeric::{
    dot, glorot, matvec, matvec_t_acc, outer_acc, sigmoid_scalar, Param, Rng, Tensor,
};

/// Regularizer in the denominator of importance-weighted pooling.
pub const POOL_EPS: f64 = 1e-8;

/// `sigmoid(w · h_i + b)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Param,
    pub bias: Param,
}

impl LinearHead {
    pub fn new(prefix: &str, d: usize, rng: &mut Rng) -> Self {
        LinearHead {
            weight: Param::new(format!("{prefix}.weight"), glorot(&[1, d], d, 1, rng)),
            bias: Param::zeros(format!("{prefix}.bias"), &[1]),
        }
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn logits(&self, h: &Tensor) -> Vec<f64> {
        let w = self.weight.value.data();
        let b = self.bias.value.data()[0];
        (0..h.rows()).map(|i| dot(w, h.row(i)) + b).collect()
    }

    pub fn forward(&self, h: &Tensor) -> Vec<f64> {
        self.logits(h).into_iter().map(sigmoid_scalar).collect()
    }

    /// Accumulates into `grad_h`; returns `(grad_weight, grad_bias)`.
    pub fn backward(&self, h: &Tensor, d_logits: &[f64], grad_h: &mut Tensor) -> (Tensor, Tensor) {
        let w = self.weight.value.data();
        let mut gw = Tensor::zeros(self.weight.dims());
        let mut gb = 0.0;
        for (i, &d) in d_logits.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb += d;
            for (g, x) in gw.data_mut().iter_mut().zip(h.row(i)) {
                *g += d * x;
            }
            for (g, wv) in grad_h.row_mut(i).iter_mut().zip(w) {
                *g += d * wv;
            }
        }
        (gw, Tensor::vector(vec![gb]))
    }
}

/// `linear(D -> D) -> ReLU -> linear(D -> 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMlp {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
}

pub struct MlpGrads {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub input: Vec<f64>,
}

impl GraphMlp {
    pub fn new(prefix: &str, d: usize, rng: &mut Rng) -> Self {
        GraphMlp {
            w1: Param::new(format!("{prefix}.w1"), glorot(&[d, d], d, d, rng)),
            b1: Param::zeros(format!("{prefix}.b1"), &[d]),
            w2: Param::new(format!("{prefix}.w2"), glorot(&[1, d], d, 1, rng)),
            b2: Param::zeros(format!("{prefix}.b2"), &[1]),
        }
    }

    pub fn params(&self) -> [&Param; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn forward_cached(&self, pooled: &[f64]) -> (f64, MlpCache) {
        let d = pooled.len();
        let mut hidden = vec![0.0; self.b1.value.len()];
        matvec(self.w1.value.data(), d, pooled, &mut hidden);
        for (h, b) in hidden.iter_mut().zip(self.b1.value.data()) {
            *h += b;
        }
        let logit = self
            .w2
            .value
            .data()
            .iter()
            .zip(&hidden)
            .fold(0.0, |acc, (w, h)| acc + w * h.max(0.0))
            + self.b2.value.data()[0];
        (
            logit,
            MlpCache {
                input: pooled.to_vec(),
                hidden_pre: hidden,
            },
        )
    }

    /// Returns `(logit, sigmoid(logit))`.
    pub fn forward(&self, pooled: &[f64]) -> (f64, f64) {
        let (logit, _) = self.forward_cached(pooled);
        (logit, sigmoid_scalar(logit))
    }

    pub fn backward(&self, cache: &MlpCache, d_logit: f64) -> MlpGrads {
        let d = cache.input.len();
        let relu: Vec<f64> = cache.hidden_pre.iter().map(|v| v.max(0.0)).collect();
        let w2 = Tensor::from_vec(self.w2.dims(), relu.iter().map(|r| d_logit * r).collect())
            .expect("dims");
        let d_hidden: Vec<f64> = cache
            .hidden_pre
            .iter()
            .zip(self.w2.value.data())
            .map(|(pre, w)| if *pre > 0.0 { d_logit * w } else { 0.0 })
            .collect();
        let mut w1 = Tensor::zeros(self.w1.dims());
        outer_acc(w1.data_mut(), &d_hidden, &cache.input);
        let mut input = vec![0.0; d];
        matvec_t_acc(self.w1.value.data(), d, &d_hidden, &mut input);
        MlpGrads {
            w1,
            b1: Tensor::vector(d_hidden),
            w2,
            b2: Tensor::vector(vec![d_logit]),
            input,
        }
    }
}

/// Arithmetic mean of the rows, summed in row order.
pub fn mean_pool(embeddings: &Tensor) -> Result<Tensor> {
    let n = embeddings.rows();
    if n == 0 {
        return Err(Error::EmptyInput("mean_pool over zero nodes"));
    }
    let mut out = vec![0.0; embeddings.row_len()];
    for i in 0..n {
        for (o, v) in out.iter_mut().zip(embeddings.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    Ok(Tensor::vector(out))
}

/// `Σ s_i h_i / (Σ s_i + 1e-8)`.
pub fn importance_weighted_pool(embeddings: &Tensor, s: &[f64]) -> Result<Tensor> {
    if s.len() != embeddings.rows() {
        return Err(Error::Shape(format!(
            "importance pool: {} scores for {} nodes",
            s.len(),
            embeddings.rows()
        )));
    }
    let mut out = vec![0.0; embeddings.row_len()];
    let mut total = 0.0;
    for (i, &w) in s.iter().enumerate() {
        total += w;
        for (o, v) in out.iter_mut().zip(embeddings.row(i)) {
            *o += w * v;
        }
    }
    let z = total + POOL_EPS;
    out.iter_mut().for_each(|v| *v /= z);
    Ok(Tensor::vector(out))
}
