//! Joint loss, augmentation and the mini-batch training loop.

pub mod augment;
pub mod check;
pub mod loss;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentConfig, AugmentDraw};
pub use loss::{total_loss, LossBreakdown, LossWeights};

use crate::data::{self, Sample, Split};
use crate::error::{Error, Result};
use crate::graph::{node_labels_for_grid, DEFAULT_LABEL_THRESHOLD};
use crate::metrics::roc_auc;
use crate::numeric::{adam_step, stream, AdamConfig, Rng, Tensor};
use crate::parallel::{map_ordered, Execution};
use crate::sgnn::{Model, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub freeze_backbone: bool,
    /// Cell coverage above which a node counts as lesion.
    pub label_threshold: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-4,
            batch_size: 8,
            epochs: 15,
            seed: 0,
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            freeze_backbone: false,
            label_threshold: DEFAULT_LABEL_THRESHOLD,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// The full-length schedule (50 epochs).
    pub fn full_schedule() -> Self {
        TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.weights.lambda_node >= 0.0 && self.weights.lambda_explain >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        let a = &self.augment;
        if !(a.rotate_deg >= 0.0 && a.jitter_scale.0 > 0.0 && a.jitter_scale.0 <= a.jitter_scale.1)
        {
            return Err(Error::Config("augmentation ranges are invalid".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Mean loss components over the samples of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: LossBreakdown,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: EpochStats,
    /// `None` when the validation split is empty or single-class.
    pub val_auc: Option<f64>,
}

/// Loss and gradients for one (possibly augmented) sample.
pub fn sample_gradients(
    model: &Model,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let (image, mask) = augment(&sample.image, sample.mask.as_ref(), &cfg.augment, rng);
    let (outputs, cache) = model.forward_cached(&image)?;
    let labels = match &mask {
        Some(m) => Some(node_labels_for_grid(
            m,
            outputs.grid_h,
            outputs.grid_w,
            model.config.backbone.downsample(),
            cfg.label_threshold,
        )?),
        None => None,
    };
    let (loss, grads) = total_loss(&outputs, sample.label, labels.as_ref(), &cfg.weights)?;
    let param_grads = model.backward(&outputs, &cache, &grads, !cfg.freeze_backbone)?;
    Ok((loss, param_grads))
}

fn trainable(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    index: usize,
    name: &str,
    n_backbone: usize,
) -> bool {
    if cfg.freeze_backbone && index < n_backbone {
        return false;
    }
    !(name.ends_with(".w_delta") && !model_cfg.displacement)
}

/// Mean gradient of `batch` applied with one Adam step per trainable parameter.
pub fn train_batch(
    model: &mut Model,
    batch: &[(&Sample, u64)],
    cfg: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let shared: &Model = model;
    let results = map_ordered(cfg.exec, batch, |(sample, seed)| {
        sample_gradients(shared, sample, cfg, &mut Rng::new(*seed))
    });
    let mut losses = Vec::with_capacity(batch.len());
    let mut params = model.params_mut();
    for p in params.iter_mut() {
        p.zero_grad();
    }
    for result in results {
        let (loss, grads) = result?;
        losses.push(loss);
        for (p, g) in params.iter_mut().zip(&grads) {
            p.grad.add_assign(g);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let adam = cfg.adam();
    let n_backbone = 2 * cfg.model.backbone.blocks.len();
    for (i, p) in params.iter_mut().enumerate() {
        if trainable(&cfg.model, cfg, i, &p.name, n_backbone) {
            p.grad.scale(scale);
            adam_step(p, &adam)?;
        }
        p.zero_grad();
    }
    Ok(losses)
}

/// One pass over `samples` in an order shuffled by `rng`.
pub fn train_epoch(
    model: &mut Model,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    let mut sum = LossBreakdown::default();
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<(&Sample, u64)> = chunk
            .iter()
            .map(|&i| (&samples[i], rng.next_u64()))
            .collect();
        for l in train_batch(model, &batch, cfg)? {
            sum.graph += l.graph;
            sum.node += l.node;
            sum.explain += l.explain;
            sum.total += l.total;
        }
    }
    let n = samples.len() as f64;
    Ok(EpochStats {
        loss: LossBreakdown {
            graph: sum.graph / n,
            node: sum.node / n,
            explain: sum.explain / n,
            total: sum.total / n,
        },
        samples: samples.len(),
    })
}

/// Graph-level probabilities in sample order.
pub fn predict_graph(model: &Model, samples: &[Sample], exec: Execution) -> Result<Vec<f64>> {
    map_ordered(exec, samples, |s| {
        model.forward(&s.image).map(|o| o.graph_prob)
    })
    .into_iter()
    .collect()
}

fn validation_auc(model: &Model, val: &[Sample], exec: Execution) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let scores = predict_graph(model, val, exec)?;
    let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    match roc_auc(&scores, &labels) {
        Ok(roc) => Ok(Some(roc.auc)),
        Err(Error::UndefinedAuc) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Model with the best validation AUC, or the last model when no
    /// validation AUC was ever defined.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Trains from `Model::new(cfg.model, cfg.seed)` for `cfg.epochs` epochs.
/// `on_epoch` sees every record as soon as it is produced.
pub fn fit_with(
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut rng = Rng::derive(cfg.seed, stream::SHUFFLE);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(&mut model, train, cfg, &mut rng)?;
        let val_auc = validation_auc(&model, val, cfg.exec)?;
        if let Some(auc) = val_auc {
            if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
                best = Some((auc, epoch, model.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train: stats,
            val_auc,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(match best {
        Some((_, epoch, best_model)) => FitResult {
            model: best_model,
            history,
            best_epoch: Some(epoch),
        },
        None => FitResult {
            model,
            history,
            best_epoch: None,
        },
    })
}

pub fn fit(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<FitResult> {
    fit_with(train, val, cfg, |_| {})
}

/// Loads the train and val splits of a manifest and calls [`fit`].
pub fn fit_manifest(manifest: impl AsRef<Path>, cfg: &TrainConfig) -> Result<FitResult> {
    let records = data::load_manifest(manifest)?;
    let size = cfg.model.image_size;
    let train = data::load_split(&records, Split::Train, size)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("manifest has no train split"));
    }
    let val = data::load_split(&records, Split::Val, size)?;
    fit(&train, &val, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;

    fn small_model() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            backbone: BackboneConfig { blocks: vec![4, 4] },
            hidden: 8,
            ..ModelConfig::default()
        }
    }

    /// A bright centred blob (label 1) or plain background (label 0).
    fn toy(label: u8) -> Sample {
        let n = 16;
        let mut image = Tensor::filled(&[1, n, n], 0.2);
        let mut mask = Tensor::zeros(&[1, n, n]);
        if label == 1 {
            for y in 5..11 {
                for x in 5..11 {
                    image.data_mut()[y * n + x] = 0.9;
                    mask.data_mut()[y * n + x] = 1.0;
                }
            }
        }
        Sample {
            image,
            mask: Some(mask),
            label,
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            model: small_model(),
            lr: 1e-3,
            batch_size: 2,
            epochs: 3,
            seed: 5,
            augment: AugmentConfig::disabled(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let cfg = TrainConfig {
            lr: 0.0,
            augment: AugmentConfig::default(),
            ..cfg()
        };
        let mut model = Model::new(cfg.model.clone(), 1).unwrap();
        let before = model.flat_values();
        train_epoch(
            &mut model,
            &[toy(0), toy(1), toy(1)],
            &cfg,
            &mut Rng::new(2),
        )
        .unwrap();
        let after = model.flat_values();
        assert!(before
            .iter()
            .zip(&after)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn epochs_are_deterministic() {
        let cfg = TrainConfig {
            augment: AugmentConfig::default(),
            ..cfg()
        };
        let data = [toy(0), toy(1), toy(1), toy(0), toy(1)];
        let run = |exec| {
            let cfg = TrainConfig {
                exec,
                ..cfg.clone()
            };
            let mut model = Model::new(cfg.model.clone(), 9).unwrap();
            let stats = train_epoch(&mut model, &data, &cfg, &mut Rng::new(4)).unwrap();
            (stats, model.flat_values())
        };
        let (s1, p1) = run(Execution::Sequential);
        let (s2, p2) = run(Execution::Sequential);
        let (s3, p3) = run(Execution::Parallel);
        assert_eq!(s1, s2);
        assert_eq!(s1, s3);
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(p1.iter().zip(&p3).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_split_is_an_error() {
        let mut model = Model::new(small_model(), 1).unwrap();
        assert!(train_epoch(&mut model, &[], &cfg(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn overfits_a_single_sample() {
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            ..cfg()
        };
        let result = fit(&[toy(1)], &[], &cfg).unwrap();
        let last = result.history.last().unwrap().train.loss.graph;
        assert!(last < 0.1, "final graph BCE {last}");
    }

    #[test]
    fn frozen_backbone_descent_is_monotone() {
        let cfg = TrainConfig {
            freeze_backbone: true,
            batch_size: 4,
            ..cfg()
        };
        let batch = [toy(0), toy(1), toy(1), toy(0)];
        let mut model = Model::new(cfg.model.clone(), 3).unwrap();
        let backbone_before: Vec<f64> = model
            .backbone
            .params()
            .flat_map(|p| p.value.data().to_vec())
            .collect();
        let mut prev = f64::INFINITY;
        for epoch in 0..10 {
            let stats = train_epoch(&mut model, &batch, &cfg, &mut Rng::new(epoch)).unwrap();
            assert!(
                stats.loss.total <= prev,
                "epoch {epoch}: {} > {prev}",
                stats.loss.total
            );
            prev = stats.loss.total;
        }
        let backbone_after: Vec<f64> = model
            .backbone
            .params()
            .flat_map(|p| p.value.data().to_vec())
            .collect();
        assert_eq!(backbone_before, backbone_after);
    }

    #[test]
    fn fit_contract() {
        let data = [toy(0), toy(1), toy(0), toy(1)];
        let zero = fit(&data, &data, &TrainConfig { epochs: 0, ..cfg() }).unwrap();
        assert!(zero.history.is_empty());
        assert_eq!(
            zero.model.flat_values(),
            Model::new(small_model(), 5).unwrap().flat_values()
        );

        let r = fit(&data, &data, &cfg()).unwrap();
        assert_eq!(r.history.len(), 3);
        assert!(r.history.iter().all(|h| h.val_auc.is_some()));
        let best = r
            .history
            .iter()
            .map(|h| h.val_auc.unwrap())
            .fold(f64::MIN, f64::max);
        let chosen = r.history[r.best_epoch.unwrap() - 1].val_auc.unwrap();
        assert_eq!(best, chosen);
    }

    #[test]
    fn ablated_model_keeps_w_delta_at_zero() {
        let cfg = TrainConfig {
            model: small_model().without_structural_prior(),
            ..cfg()
        };
        let r = fit(&[toy(0), toy(1)], &[], &cfg).unwrap();
        for p in r
            .model
            .params()
            .iter()
            .filter(|p| p.name.ends_with(".w_delta"))
        {
            assert!(p.value.data().iter().all(|&v| v == 0.0));
        }
    }
}
