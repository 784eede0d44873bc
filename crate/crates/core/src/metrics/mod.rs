//! Classification metrics, ROC analysis, Welch's t-test and model evaluation.

pub mod classification;
pub mod roc;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use classification::{confusion, prf1, ConfusionMatrix, Prf1, DEFAULT_THRESHOLD};
pub use roc::{roc_auc, roc_to_csv, RocCurve, RocPoint};
pub use stats::{welch_t_test, WelchResult};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::graph::node_labels_for_grid;
use crate::parallel::{map_ordered, Execution};
use crate::sgnn::{Model, ModelOutputs};

/// Confusion counts at the decision threshold plus derived scores. `auc` is
/// `None` when the labels contain a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub count: u64,
    pub confusion: ConfusionMatrix,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
}

impl LevelMetrics {
    fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(Self, Option<RocCurve>)> {
        let cm = confusion(scores, labels, threshold)?;
        let m = prf1(&cm)?;
        let roc = match roc_auc(scores, labels) {
            Ok(r) => Some(r),
            Err(Error::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };
        Ok((
            LevelMetrics {
                count: cm.total(),
                confusion: cm,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                auc: roc.as_ref().map(|r| r.auc),
            },
            roc,
        ))
    }
}

/// Fraction of diseased images (with masks) whose highest-scoring node lies
/// in a cell containing lesion pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub images: u64,
    pub hits_importance: u64,
    pub hits_node_prob: u64,
    pub rate_importance: Option<f64>,
    pub rate_node_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: u64,
    pub threshold: f64,
    pub graph: LevelMetrics,
    /// Pooled over all nodes of images with masks; `None` without masks.
    pub node: Option<LevelMetrics>,
    /// Mean of [`Evaluation::per_image_node_f1`]; `None` when it is empty.
    pub mean_image_node_f1: Option<f64>,
    pub localization: Localization,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub graph_roc: Option<RocCurve>,
    /// Graph probability per sample, in input order.
    pub graph_scores: Vec<f64>,
    /// Node F1 at the threshold for every image whose mask marks at least one
    /// lesion node, in input order.
    pub per_image_node_f1: Vec<f64>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    label_threshold: f64,
    exec: Execution,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let outputs: Vec<ModelOutputs> = map_ordered(exec, samples, |s| model.forward(&s.image))
        .into_iter()
        .collect::<Result<_>>()?;
    evaluate_outputs(
        model.config.backbone.downsample(),
        samples,
        &outputs,
        label_threshold,
    )
}

/// [`evaluate`] from precomputed forward passes.
pub fn evaluate_outputs(
    downsample: usize,
    samples: &[Sample],
    outputs: &[ModelOutputs],
    label_threshold: f64,
) -> Result<Evaluation> {
    let threshold = DEFAULT_THRESHOLD;
    let graph_scores: Vec<f64> = outputs.iter().map(|o| o.graph_prob).collect();
    let graph_labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let (graph, graph_roc) = LevelMetrics::compute(&graph_scores, &graph_labels, threshold)?;

    let mut node_scores = Vec::new();
    let mut node_targets = Vec::new();
    let mut per_image_node_f1 = Vec::new();
    let mut loc = Localization {
        images: 0,
        hits_importance: 0,
        hits_node_prob: 0,
        rate_importance: None,
        rate_node_prob: None,
    };
    for (s, o) in samples.iter().zip(outputs) {
        let Some(mask) = &s.mask else { continue };
        let labels = node_labels_for_grid(mask, o.grid_h, o.grid_w, downsample, label_threshold)?;
        node_scores.extend_from_slice(&o.node_probs);
        node_targets.extend_from_slice(&labels.labels);
        if labels.positives() > 0 {
            let cm = confusion(&o.node_probs, &labels.labels, threshold)?;
            per_image_node_f1.push(prf1(&cm)?.f1);
        }
        if s.label == 1 && labels.coverage.iter().any(|&c| c > 0.0) {
            loc.images += 1;
            loc.hits_importance += u64::from(labels.coverage[argmax(&o.importance)] > 0.0);
            loc.hits_node_prob += u64::from(labels.coverage[argmax(&o.node_probs)] > 0.0);
        }
    }
    if loc.images > 0 {
        loc.rate_importance = Some(loc.hits_importance as f64 / loc.images as f64);
        loc.rate_node_prob = Some(loc.hits_node_prob as f64 / loc.images as f64);
    }
    let node = if node_scores.is_empty() {
        None
    } else {
        Some(LevelMetrics::compute(&node_scores, &node_targets, threshold)?.0)
    };
    let mean_image_node_f1 = if per_image_node_f1.is_empty() {
        None
    } else {
        Some(per_image_node_f1.iter().sum::<f64>() / per_image_node_f1.len() as f64)
    };
    Ok(Evaluation {
        report: MetricsReport {
            samples: samples.len() as u64,
            threshold,
            graph,
            node,
            mean_image_node_f1,
            localization: loc,
        },
        graph_roc,
        graph_scores,
        per_image_node_f1,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    /// `acc=<a> auc=<u> node_f1=<f>`.
    pub fn summary_line(&self) -> String {
        format!(
            "acc={:.4} auc={} node_f1={}",
            self.graph.accuracy,
            fmt_opt(self.graph.auc),
            fmt_opt(self.node.as_ref().map(|n| n.f1))
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }
}
