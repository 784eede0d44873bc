use crate::backbone::{Backbone, BackboneCache, FeatureMap};
use crate::error::{Error, Result};
use crate::graph::{build_patch_graph, PatchGraph};
use crate::numeric::{sigmoid_scalar, stream, Param, Rng, Tensor};

use super::heads::{importance_weighted_pool, mean_pool, GraphMlp, LinearHead, MlpCache, POOL_EPS};
use super::layer::{LayerCache, StructuralLayer};
use super::{ModelConfig, PoolingMode};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub layer1: StructuralLayer,
    pub layer2: StructuralLayer,
    pub node_head: LinearHead,
    pub explain_head: LinearHead,
    pub graph_mlp: GraphMlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    pub node_logits: Vec<f64>,
    /// Per-node lesion probability.
    pub node_probs: Vec<f64>,
    pub explain_logits: Vec<f64>,
    /// Per-node importance score.
    pub importance: Vec<f64>,
    pub graph_logit: f64,
    pub graph_prob: f64,
    pub node_embeddings: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Loss gradients with respect to the three sets of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub graph_logit: f64,
    pub node_logits: Vec<f64>,
    pub explain_logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub backbone: Option<BackboneCache>,
    pub graph: PatchGraph,
    pub input: Tensor,
    pub l1: LayerCache,
    /// Layer-1 output before the optional inter-layer ReLU.
    pub h1: Tensor,
    pub h1_act: Tensor,
    pub l2: LayerCache,
    pub pooled: Vec<f64>,
    pub mlp: MlpCache,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, stream::INIT);
        let backbone = Backbone::new(config.backbone.clone(), &mut rng)?;
        let d_in = config.backbone.out_channels() + 2;
        let dh = config.hidden;
        let layer1 = StructuralLayer::new("layer1", d_in, dh, config.displacement, &mut rng);
        let layer2 = StructuralLayer::new("layer2", dh, dh, config.displacement, &mut rng);
        let node_head = LinearHead::new("node_head", dh, &mut rng);
        let explain_head = LinearHead::new("explain_head", dh, &mut rng);
        let graph_mlp = GraphMlp::new("graph_mlp", dh, &mut rng);
        Ok(Model {
            config,
            backbone,
            layer1,
            layer2,
            node_head,
            explain_head,
            graph_mlp,
        })
    }

    /// Every parameter in checkpoint order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.backbone.params().collect();
        out.extend(self.layer1.params());
        out.extend(self.layer2.params());
        out.extend(self.node_head.params());
        out.extend(self.explain_head.params());
        out.extend(self.graph_mlp.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.backbone.params_mut().collect();
        out.extend(self.layer1.params_mut());
        out.extend(self.layer2.params_mut());
        out.extend(self.node_head.params_mut());
        out.extend(self.explain_head.params_mut());
        out.extend(self.graph_mlp.params_mut());
        out
    }

    pub fn num_backbone_params(&self) -> usize {
        2 * self.backbone.blocks.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value
                .data_mut()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    pub fn feature_map(&self, image: &Tensor) -> Result<FeatureMap> {
        self.backbone.forward(image)
    }

    pub fn forward(&self, image: &Tensor) -> Result<ModelOutputs> {
        self.forward_cached(image).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, image: &Tensor) -> Result<(ModelOutputs, ForwardCache)> {
        let (fm, bb_cache) = self.backbone.forward_cached(image)?;
        let graph = build_patch_graph(&fm)?;
        let (out, mut cache) = self.forward_graph_cached(graph)?;
        cache.backbone = Some(bb_cache);
        Ok((out, cache))
    }

    /// Forward from an already-built graph (external feature maps, tests).
    pub fn forward_graph(&self, graph: &PatchGraph) -> Result<ModelOutputs> {
        self.forward_graph_cached(graph.clone()).map(|(o, _)| o)
    }

    pub fn forward_graph_cached(&self, graph: PatchGraph) -> Result<(ModelOutputs, ForwardCache)> {
        let c = graph.channels();
        if c + 2 != self.layer1.d_in() {
            return Err(Error::Shape(format!(
                "graph has {c} feature channels, model expects {}",
                self.layer1.d_in() - 2
            )));
        }
        let mut input = graph.node_features.clone();
        if !self.config.coord_features {
            for i in 0..input.rows() {
                let row = input.row_mut(i);
                row[c] = 0.0;
                row[c + 1] = 0.0;
            }
        }
        let (h1, l1) = self.layer1.forward_cached(&input, &graph)?;
        let mut h1_act = h1.clone();
        if self.config.inter_layer_relu {
            h1_act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let (h2, l2) = self.layer2.forward_cached(&h1_act, &graph)?;

        let node_logits = self.node_head.logits(&h2);
        let explain_logits = self.explain_head.logits(&h2);
        let node_probs: Vec<f64> = node_logits.iter().map(|&z| sigmoid_scalar(z)).collect();
        let importance: Vec<f64> = explain_logits.iter().map(|&z| sigmoid_scalar(z)).collect();
        let pooled = match self.config.pooling {
            PoolingMode::Mean => mean_pool(&h2)?,
            PoolingMode::Importance => importance_weighted_pool(&h2, &importance)?,
        };
        let (graph_logit, mlp) = self.graph_mlp.forward_cached(pooled.data());
        let outputs = ModelOutputs {
            node_logits,
            node_probs,
            explain_logits,
            importance,
            graph_logit,
            graph_prob: sigmoid_scalar(graph_logit),
            node_embeddings: h2,
            grid_h: graph.grid_h,
            grid_w: graph.grid_w,
        };
        let cache = ForwardCache {
            backbone: None,
            graph,
            input,
            l1,
            h1,
            h1_act,
            l2,
            pooled: pooled.into_data(),
            mlp,
        };
        Ok((outputs, cache))
    }

    /// Gradients for every parameter, aligned with [`Model::params`]. When
    /// `backbone` is false (or no backbone ran) the backbone entries are zero.
    pub fn backward(
        &self,
        outputs: &ModelOutputs,
        cache: &ForwardCache,
        grads: &OutputGrads,
        backbone: bool,
    ) -> Result<Vec<Tensor>> {
        let h2 = &outputs.node_embeddings;
        let n = h2.rows();
        let dh = h2.row_len();
        let mut d_h2 = Tensor::zeros(&[n, dh]);

        let mlp = self.graph_mlp.backward(&cache.mlp, grads.graph_logit);
        let mut d_explain = grads.explain_logits.clone();
        match self.config.pooling {
            PoolingMode::Mean => {
                for i in 0..n {
                    for (g, p) in d_h2.row_mut(i).iter_mut().zip(&mlp.input) {
                        *g += p / n as f64;
                    }
                }
            }
            PoolingMode::Importance => {
                let s = &outputs.importance;
                let z = s.iter().sum::<f64>() + POOL_EPS;
                for i in 0..n {
                    let mut ds = 0.0;
                    for ((g, dp), (hv, pv)) in d_h2
                        .row_mut(i)
                        .iter_mut()
                        .zip(&mlp.input)
                        .zip(h2.row(i).iter().zip(&cache.pooled))
                    {
                        *g += s[i] * dp / z;
                        ds += (hv - pv) * dp;
                    }
                    d_explain[i] += ds / z * s[i] * (1.0 - s[i]);
                }
            }
        }
        let (node_w, node_b) = self.node_head.backward(h2, &grads.node_logits, &mut d_h2);
        let (exp_w, exp_b) = self.explain_head.backward(h2, &d_explain, &mut d_h2);

        let (mut d_h1, l2_grads) =
            self.layer2
                .backward(&cache.l2, &cache.h1_act, &cache.graph, &d_h2)?;
        if self.config.inter_layer_relu {
            for (g, pre) in d_h1.data_mut().iter_mut().zip(cache.h1.data()) {
                if *pre <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let (d_input, l1_grads) =
            self.layer1
                .backward(&cache.l1, &cache.input, &cache.graph, &d_h1)?;

        let mut out: Vec<Tensor> = match (&cache.backbone, backbone) {
            (Some(bb), true) => {
                let d_fm = cache.graph.feature_map_grad(&d_input);
                self.backbone.backward(bb, &d_fm)?
            }
            _ => self
                .backbone
                .params()
                .map(|p| Tensor::zeros(p.dims()))
                .collect(),
        };
        out.extend(l1_grads.into_vec());
        out.extend(l2_grads.into_vec());
        out.extend([node_w, node_b, exp_w, exp_b]);
        out.extend([mlp.w1, mlp.b1, mlp.w2, mlp.b2]);
        Ok(out)
    }

    /// Smallest distance from any ReLU or max-pool switching point seen in
    /// this forward pass.
    pub fn kink_margin(&self, cache: &ForwardCache) -> f64 {
        let mut margin = cache
            .backbone
            .as_ref()
            .map_or(f64::INFINITY, |b| b.kink_margin());
        for v in &cache.mlp.hidden_pre {
            margin = margin.min(v.abs());
        }
        if self.config.inter_layer_relu {
            for v in cache.h1.data() {
                margin = margin.min(v.abs());
            }
        }
        margin
    }
}
