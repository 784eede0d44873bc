//! Finite-difference check of the full model: backbone, both structural
//! layers, all heads and the joint loss.

use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossWeights};
use crate::error::{Error, Result};
use crate::graph::node_labels_for_grid;
use crate::numeric::{grad_check, stream, GradCheckReport, Rng, Tensor};
use crate::sgnn::{Model, ModelConfig};

/// Minimum distance from any ReLU or max-pool switch required of the probe input.
pub const KINK_MARGIN: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
const MAX_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub seed: u64,
    pub eps: f64,
    /// Doubles the largest analytic gradient entry (negative control).
    pub corrupt_gradient: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            eps: 1e-5,
            corrupt_gradient: false,
        }
    }
}

struct Probe {
    image: Tensor,
    mask: Tensor,
}

fn draw_probe(model: &Model, rng: &mut Rng) -> Result<Probe> {
    let s = model.config.image_size;
    let d = model.config.backbone.downsample();
    for _ in 0..MAX_DRAWS {
        let image = Tensor::from_vec(&[1, s, s], (0..s * s).map(|_| rng.next_f64()).collect())?;
        let (_, cache) = model.forward_cached(&image)?;
        if model.kink_margin(&cache) > KINK_MARGIN {
            // One lesion cell: a mix of positive and negative node targets.
            let g = s / d;
            let cell = rng.below(g * g);
            let (ci, cj) = (cell / g, cell % g);
            let mut mask = Tensor::zeros(&[1, s, s]);
            for y in ci * d..(ci + 1) * d {
                for x in cj * d..(cj + 1) * d {
                    mask.data_mut()[y * s + x] = 1.0;
                }
            }
            return Ok(Probe { image, mask });
        }
    }
    Err(Error::Config(format!(
        "no probe input with kink margin above {KINK_MARGIN} in {MAX_DRAWS} draws"
    )))
}

/// Compares the analytic gradient of the joint loss for one labelled
/// sample against central differences over every model parameter.
pub fn check_model_gradients(config: &ModelConfig, opts: &CheckOptions) -> Result<GradCheckReport> {
    let model = Model::new(config.clone(), opts.seed)?;
    let mut rng = Rng::derive(opts.seed, stream::GRADCHECK);
    let probe = draw_probe(&model, &mut rng)?;
    let weights = LossWeights::default();
    let d = config.backbone.downsample();

    let loss_and_grads = |m: &Model, want_grads: bool| -> Result<(f64, Vec<Tensor>)> {
        let (out, cache) = m.forward_cached(&probe.image)?;
        let labels = node_labels_for_grid(&probe.mask, out.grid_h, out.grid_w, d, 0.0)?;
        let (loss, grads) = total_loss(&out, 1, Some(&labels), &weights)?;
        let g = if want_grads {
            m.backward(&out, &cache, &grads, true)?
        } else {
            Vec::new()
        };
        Ok((loss.total, g))
    };

    let (_, grads) = loss_and_grads(&model, true)?;
    let mut analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.data().iter().copied())
        .collect();
    if opts.corrupt_gradient {
        let worst = (0..analytic.len())
            .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
            .unwrap_or(0);
        analytic[worst] *= 2.0;
    }
    let theta = model.flat_values();
    let mut scratch = model.clone();
    let mut failure = None;
    let report = grad_check(
        |values| {
            scratch.set_flat_values(values);
            match loss_and_grads(&scratch, false) {
                Ok((l, _)) => l,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &theta,
        &analytic,
        opts.eps,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
