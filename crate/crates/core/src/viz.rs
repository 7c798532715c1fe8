//! Per-patient export of final node scalars with top-k highlighting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{forward, ModelParams};
use crate::graph::PatientGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizNode {
    pub event: usize,
    pub name: String,
    /// Encoded input value.
    pub value: f64,
    /// Per-node output scalar after the last layer.
    pub activation: f64,
    pub top_k: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizEdge {
    pub src: u32,
    pub dst: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizGraph {
    pub row: usize,
    pub k: usize,
    pub nodes: Vec<VizNode>,
    pub edges: Vec<VizEdge>,
    pub probs: Vec<f64>,
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn export_viz<F: Scalar>(
    params: &ModelParams<F>,
    graph: &PatientGraph,
    k: usize,
    event_names: &[String],
) -> Result<VizGraph> {
    let m = graph.n_nodes();
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!("k must be in 1..={m}, got {k}")));
    }
    let (probs, cache) = forward(graph, params)?;
    let activations: Vec<f64> = cache.z.iter().map(|z| z.as_f64()).collect();
    let mut flagged = vec![false; m];
    for i in top_k(&activations, k) {
        flagged[i] = true;
    }
    let nodes = (0..m)
        .map(|v| VizNode {
            event: v,
            name: event_names
                .get(v)
                .cloned()
                .unwrap_or_else(|| format!("event_{v}")),
            value: graph.node_values[v],
            activation: activations[v],
            top_k: flagged[v],
        })
        .collect();
    Ok(VizGraph {
        row: graph.row_id,
        k,
        nodes,
        edges: graph
            .edges
            .iter()
            .map(|(src, dst, weight)| VizEdge { src, dst, weight })
            .collect(),
        probs: probs.iter().map(|p| p.as_f64()).collect(),
    })
}
