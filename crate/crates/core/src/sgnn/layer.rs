//! Structural message-passing layer.
//!
//! ```text
//! z_i = W_self h_i + b + Σ_{j ∈ N(i)} (W_neigh h_j + W_Δ (c_j − c_i))
//! h'_i = LayerNorm(z_i; γ, β)
//! ```
//!
//! The neighbour sum is accumulated in the graph's canonical edge order.

use crate::error::{Error, Result};
use crate::graph::PatchGraph;
use crate::numeric::{
    glorot, layer_norm_backward_into, layer_norm_into, matvec, matvec_t_acc, outer_acc, NormStats,
    Param, Rng, Tensor, LAYER_NORM_EPS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralLayer {
    pub w_self: Param,
    pub w_neigh: Param,
    pub w_delta: Param,
    pub gamma: Param,
    pub beta: Param,
    pub bias: Param,
    /// When false the displacement term is dropped and `w_delta` stays zero.
    pub displacement: bool,
}

/// Intermediates kept from the forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub z: Tensor,
    pub stats: Vec<NormStats>,
    pub disp: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w_self: Tensor,
    pub w_neigh: Tensor,
    pub w_delta: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub bias: Tensor,
}

impl LayerGrads {
    pub fn into_vec(self) -> Vec<Tensor> {
        vec![
            self.w_self,
            self.w_neigh,
            self.w_delta,
            self.gamma,
            self.beta,
            self.bias,
        ]
    }
}

impl StructuralLayer {
    pub fn new(prefix: &str, d_in: usize, d_out: usize, displacement: bool, rng: &mut Rng) -> Self {
        let w_self = glorot(&[d_out, d_in], d_in, d_out, rng);
        let w_neigh = glorot(&[d_out, d_in], d_in, d_out, rng);
        let w_delta = if displacement {
            glorot(&[d_out, 2], 2, d_out, rng)
        } else {
            Tensor::zeros(&[d_out, 2])
        };
        StructuralLayer {
            w_self: Param::new(format!("{prefix}.w_self"), w_self),
            w_neigh: Param::new(format!("{prefix}.w_neigh"), w_neigh),
            w_delta: Param::new(format!("{prefix}.w_delta"), w_delta),
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::filled(&[d_out], 1.0)),
            beta: Param::zeros(format!("{prefix}.beta"), &[d_out]),
            bias: Param::zeros(format!("{prefix}.bias"), &[d_out]),
            displacement,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_self.dims()[1]
    }

    pub fn d_out(&self) -> usize {
        self.w_self.dims()[0]
    }

    pub fn params(&self) -> [&Param; 6] {
        [
            &self.w_self,
            &self.w_neigh,
            &self.w_delta,
            &self.gamma,
            &self.beta,
            &self.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 6] {
        [
            &mut self.w_self,
            &mut self.w_neigh,
            &mut self.w_delta,
            &mut self.gamma,
            &mut self.beta,
            &mut self.bias,
        ]
    }

    fn check_input(&self, h: &Tensor, graph: &PatchGraph) -> Result<()> {
        if h.dims() != [graph.num_nodes(), self.d_in()] {
            return Err(Error::Shape(format!(
                "structural layer expects node input [{}, {}], got {:?}",
                graph.num_nodes(),
                self.d_in(),
                h.dims()
            )));
        }
        Ok(())
    }

    /// `W_Δ Σ_j (c_j − c_i)` for every node.
    pub fn displacement_contribution(&self, graph: &PatchGraph) -> Tensor {
        let d_out = self.d_out();
        let sums = graph.displacement_sums();
        let mut out = Tensor::zeros(&[graph.num_nodes(), d_out]);
        if self.displacement {
            for (i, d) in sums.iter().enumerate() {
                matvec(self.w_delta.value.data(), 2, d, out.row_mut(i));
            }
        }
        out
    }

    /// Pre-normalization sums `z`.
    pub fn pre_norm(&self, h: &Tensor, graph: &PatchGraph) -> Result<(Tensor, Vec<[f64; 2]>)> {
        self.check_input(h, graph)?;
        let (n, d_in, d_out) = (graph.num_nodes(), self.d_in(), self.d_out());
        let mut z = Tensor::zeros(&[n, d_out]);
        let mut neigh = Tensor::zeros(&[n, d_out]);
        for i in 0..n {
            matvec(self.w_self.value.data(), d_in, h.row(i), z.row_mut(i));
            matvec(self.w_neigh.value.data(), d_in, h.row(i), neigh.row_mut(i));
        }
        let bias = self.bias.value.data();
        for i in 0..n {
            for (zv, b) in z.row_mut(i).iter_mut().zip(bias) {
                *zv += b;
            }
        }
        for &(src, dst) in &graph.edges {
            let msg = neigh.row(src).to_vec();
            for (zv, m) in z.row_mut(dst).iter_mut().zip(&msg) {
                *zv += m;
            }
        }
        let disp = graph.displacement_sums();
        if self.displacement {
            let wd = self.w_delta.value.data();
            for (i, d) in disp.iter().enumerate() {
                for (o, zv) in z.row_mut(i).iter_mut().enumerate() {
                    *zv += wd[2 * o] * d[0] + wd[2 * o + 1] * d[1];
                }
            }
        }
        Ok((z, disp))
    }

    pub fn forward(&self, h: &Tensor, graph: &PatchGraph) -> Result<Tensor> {
        self.forward_cached(h, graph).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, h: &Tensor, graph: &PatchGraph) -> Result<(Tensor, LayerCache)> {
        let (z, disp) = self.pre_norm(h, graph)?;
        let n = graph.num_nodes();
        let mut out = Tensor::zeros(&[n, self.d_out()]);
        let mut stats = Vec::with_capacity(n);
        for i in 0..n {
            stats.push(layer_norm_into(
                z.row(i),
                self.gamma.value.data(),
                self.beta.value.data(),
                LAYER_NORM_EPS,
                out.row_mut(i),
            ));
        }
        Ok((out, LayerCache { z, stats, disp }))
    }

    /// Returns the gradient on the layer input and on every parameter.
    pub fn backward(
        &self,
        cache: &LayerCache,
        h: &Tensor,
        graph: &PatchGraph,
        upstream: &Tensor,
    ) -> Result<(Tensor, LayerGrads)> {
        self.check_input(h, graph)?;
        let (n, d_in, d_out) = (graph.num_nodes(), self.d_in(), self.d_out());
        if upstream.dims() != [n, d_out] {
            return Err(Error::Shape(format!(
                "structural layer upstream {:?}, expected [{n}, {d_out}]",
                upstream.dims()
            )));
        }
        let mut g = LayerGrads {
            w_self: Tensor::zeros(&[d_out, d_in]),
            w_neigh: Tensor::zeros(&[d_out, d_in]),
            w_delta: Tensor::zeros(&[d_out, 2]),
            gamma: Tensor::zeros(&[d_out]),
            beta: Tensor::zeros(&[d_out]),
            bias: Tensor::zeros(&[d_out]),
        };
        let mut dz = Tensor::zeros(&[n, d_out]);
        for i in 0..n {
            layer_norm_backward_into(
                cache.z.row(i),
                self.gamma.value.data(),
                cache.stats[i],
                upstream.row(i),
                dz.row_mut(i),
                g.gamma.data_mut(),
                g.beta.data_mut(),
            );
        }
        // messages flow src -> dst, so each source collects the dz of its targets
        let mut agg = Tensor::zeros(&[n, d_out]);
        for &(src, dst) in &graph.edges {
            let d = dz.row(dst).to_vec();
            for (a, v) in agg.row_mut(src).iter_mut().zip(&d) {
                *a += v;
            }
        }
        let mut grad_h = Tensor::zeros(&[n, d_in]);
        for i in 0..n {
            let dzi = dz.row(i);
            for (b, v) in g.bias.data_mut().iter_mut().zip(dzi) {
                *b += v;
            }
            outer_acc(g.w_self.data_mut(), dzi, h.row(i));
            outer_acc(g.w_neigh.data_mut(), agg.row(i), h.row(i));
            if self.displacement {
                outer_acc(g.w_delta.data_mut(), dzi, &cache.disp[i]);
            }
            let gh = grad_h.row_mut(i);
            matvec_t_acc(self.w_self.value.data(), d_in, dzi, gh);
            matvec_t_acc(self.w_neigh.value.data(), d_in, agg.row(i), gh);
        }
        Ok((grad_h, g))
    }
}
