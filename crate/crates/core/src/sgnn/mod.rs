//! Structural graph network: two spatially-aware message-passing layers on
//! the patch graph, followed by node, importance and graph heads.

mod heads;
mod layer;
mod model;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};

pub use heads::{importance_weighted_pool, mean_pool, GraphMlp, LinearHead, MlpCache, POOL_EPS};
pub use layer::{LayerCache, LayerGrads, StructuralLayer};
pub use model::{ForwardCache, Model, ModelOutputs, OutputGrads};

/// How node embeddings are reduced to the graph readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Uniform mean over nodes.
    #[default]
    Mean,
    /// Mean weighted by the importance scores `s_i`.
    Importance,
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingMode::Mean),
            "importance" => Ok(PoolingMode::Importance),
            other => Err(Error::Config(format!("unknown pooling mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolingMode::Mean => "mean",
            PoolingMode::Importance => "importance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input size; other sizes are resized on load.
    pub image_size: usize,
    pub backbone: BackboneConfig,
    pub hidden: usize,
    pub pooling: PoolingMode,
    /// ReLU between the two structural layers.
    pub inter_layer_relu: bool,
    /// Append normalized coordinates to node features (zeroed when false).
    pub coord_features: bool,
    /// Use the `W_Δ (c_j − c_i)` term (frozen at zero when false).
    pub displacement: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            backbone: BackboneConfig::default(),
            hidden: 64,
            pooling: PoolingMode::Mean,
            inter_layer_relu: false,
            coord_features: true,
            displacement: true,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration used for gradient checking: 8x8 input, one conv
    /// block with 2 channels (4x4 grid), hidden width 6.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 8,
            backbone: BackboneConfig { blocks: vec![2] },
            hidden: 6,
            ..ModelConfig::default()
        }
    }

    /// Coordinates zeroed and displacement term disabled.
    pub fn without_structural_prior(mut self) -> Self {
        self.coord_features = false;
        self.displacement = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        let d = self.backbone.downsample();
        if self.image_size < self.backbone.min_image_size() || !self.image_size.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "image size {} must be a multiple of {d} and at least {}",
                self.image_size,
                self.backbone.min_image_size()
            )));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.backbone.downsample()
    }
}
