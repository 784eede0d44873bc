use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeLabels;
use crate::numeric::bce_with_logits;
use crate::sgnn::{ModelOutputs, OutputGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_node: f64,
    pub lambda_explain: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_node: 1.0,
            lambda_explain: 1.0,
        }
    }
}

/// Unweighted per-term losses and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub graph: f64,
    pub node: f64,
    pub explain: f64,
    pub total: f64,
}

/// `BCE(Ŷ, Y) + λ_node·BCE(ŷ, labels) + λ_explain·BCE(s, labels)`. The node
/// terms are zero when no labels are given.
pub fn total_loss(
    outputs: &ModelOutputs,
    graph_label: u8,
    node_labels: Option<&NodeLabels>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    let n = outputs.node_logits.len();
    let (graph, g_graph) = bce_with_logits(&[outputs.graph_logit], &[graph_label as f64])?;
    let mut breakdown = LossBreakdown {
        graph,
        ..LossBreakdown::default()
    };
    let mut grads = OutputGrads {
        graph_logit: g_graph[0],
        node_logits: vec![0.0; n],
        explain_logits: vec![0.0; n],
    };
    if let Some(labels) = node_labels {
        if labels.labels.len() != n {
            return Err(Error::Shape(format!(
                "{} node labels for {n} nodes",
                labels.labels.len()
            )));
        }
        let targets = labels.as_targets();
        let (node, g_node) = bce_with_logits(&outputs.node_logits, &targets)?;
        let (explain, g_explain) = bce_with_logits(&outputs.explain_logits, &targets)?;
        breakdown.node = node;
        breakdown.explain = explain;
        grads.node_logits = g_node
            .into_iter()
            .map(|g| g * weights.lambda_node)
            .collect();
        grads.explain_logits = g_explain
            .into_iter()
            .map(|g| g * weights.lambda_explain)
            .collect();
    }
    breakdown.total = breakdown.graph
        + weights.lambda_node * breakdown.node
        + weights.lambda_explain * breakdown.explain;
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{sigmoid_scalar, Tensor};

    fn outputs(node_logit: f64, graph_logit: f64, n: usize) -> ModelOutputs {
        ModelOutputs {
            node_logits: vec![node_logit; n],
            node_probs: vec![sigmoid_scalar(node_logit); n],
            explain_logits: vec![node_logit; n],
            importance: vec![sigmoid_scalar(node_logit); n],
            graph_logit,
            graph_prob: sigmoid_scalar(graph_logit),
            node_embeddings: Tensor::zeros(&[n, 1]),
            grid_h: 2,
            grid_w: n / 2,
        }
    }

    fn labels(v: &[u8]) -> NodeLabels {
        NodeLabels {
            labels: v.to_vec(),
            coverage: v.iter().map(|&x| x as f64).collect(),
        }
    }

    #[test]
    fn uniform_outputs_cost_ln2_per_term() {
        let l = labels(&[0, 1, 1, 0]);
        let w = LossWeights {
            lambda_node: 0.5,
            lambda_explain: 2.0,
        };
        let (b, _) = total_loss(&outputs(0.0, 0.0, 4), 1, Some(&l), &w).unwrap();
        assert!((b.total - 3.5 * 2f64.ln()).abs() < 1e-12);
        let (b, _) =
            total_loss(&outputs(0.0, 0.0, 4), 0, Some(&l), &LossWeights::default()).unwrap();
        assert!((b.total - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let mut o = outputs(0.0, 1000.0, 4);
        o.node_logits = vec![-1000.0, 1000.0, -1000.0, 1000.0];
        o.explain_logits = o.node_logits.clone();
        let (b, _) =
            total_loss(&o, 1, Some(&labels(&[0, 1, 0, 1])), &LossWeights::default()).unwrap();
        assert!(b.total < 1e-5);
    }

    #[test]
    fn zero_weights_leave_graph_term() {
        let w = LossWeights {
            lambda_node: 0.0,
            lambda_explain: 0.0,
        };
        let (b, g) =
            total_loss(&outputs(0.7, -0.3, 4), 1, Some(&labels(&[1, 1, 0, 0])), &w).unwrap();
        assert_eq!(b.total, b.graph);
        assert!(g.node_logits.iter().all(|&v| v == 0.0));
        assert!(b.node > 0.0 && b.explain > 0.0);
    }

    #[test]
    fn missing_masks_skip_node_terms() {
        let (b, g) = total_loss(&outputs(0.7, -0.3, 4), 0, None, &LossWeights::default()).unwrap();
        assert_eq!(b.total, b.graph);
        assert_eq!((b.node, b.explain), (0.0, 0.0));
        assert!(g.explain_logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_length_mismatch() {
        assert!(total_loss(
            &outputs(0.0, 0.0, 4),
            0,
            Some(&labels(&[1, 0])),
            &LossWeights::default()
        )
        .is_err());
    }
}
