//! Per-patient event graphs.
//!
//! Every patient built from the same statistics and encodings shares one
//! [`EdgeSet`] behind an `Arc`; only the node values and labels are stored per
//! patient.

use std::sync::Arc;

use serde::Serialize;

use crate::cohort::EventCohort;
use crate::encoders::NodeEncoding;
use crate::error::{Error, Result};

/// Directed weighted edges in compressed form, grouped by destination.
/// Construction sorts edges by `(dst, src)`, so the storage order of the input
/// list has no effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    n_nodes: usize,
    in_ptr: Vec<usize>,
    src: Vec<u32>,
    weight: Vec<f64>,
}

impl EdgeSet {
    pub fn new(n_nodes: usize, mut edges: Vec<(u32, u32, f64)>) -> Result<Self> {
        for &(s, d, w) in &edges {
            if s == d {
                return Err(Error::DimensionMismatch(format!("self-loop on node {s}")));
            }
            if s as usize >= n_nodes || d as usize >= n_nodes {
                return Err(Error::DimensionMismatch(format!(
                    "edge {s}->{d} outside {n_nodes} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(Error::DimensionMismatch(format!(
                    "edge {s}->{d} has non-finite weight"
                )));
            }
        }
        edges.sort_unstable_by_key(|&(s, d, _)| (d, s));
        for w in edges.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::DimensionMismatch(format!(
                    "duplicate edge {}->{}",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut in_ptr = vec![0usize; n_nodes + 1];
        for &(_, d, _) in &edges {
            in_ptr[d as usize + 1] += 1;
        }
        for i in 0..n_nodes {
            in_ptr[i + 1] += in_ptr[i];
        }
        Ok(Self {
            n_nodes,
            in_ptr,
            src: edges.iter().map(|e| e.0).collect(),
            weight: edges.iter().map(|e| e.2).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Sources and weights of the edges entering `dst`.
    #[inline]
    pub fn incoming(&self, dst: usize) -> (&[u32], &[f64]) {
        let range = self.in_ptr[dst]..self.in_ptr[dst + 1];
        (&self.src[range.clone()], &self.weight[range])
    }

    pub fn in_degree(&self, dst: usize) -> usize {
        self.in_ptr[dst + 1] - self.in_ptr[dst]
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        let (srcs, weights) = self.incoming(dst);
        srcs.binary_search(&(src as u32)).ok().map(|k| weights[k])
    }

    /// `(src, dst, weight)` ordered by `(dst, src)`.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.n_nodes).flat_map(move |d| {
            let (s, w) = self.incoming(d);
            s.iter().zip(w).map(move |(&s, &w)| (s, d as u32, w))
        })
    }

    /// Replaces every weight, visiting edges in `(dst, src)` order.
    pub fn map_weights(&mut self, mut f: impl FnMut(u32, u32, f64) -> f64) {
        for d in 0..self.n_nodes {
            for k in self.in_ptr[d]..self.in_ptr[d + 1] {
                self.weight[k] = f(self.src[k], d as u32, self.weight[k]);
            }
        }
    }
}

/// Nodes with neither incoming nor outgoing edges.
pub fn isolated_nodes(edges: &EdgeSet, n_nodes: usize) -> Vec<usize> {
    let mut touched = vec![false; n_nodes];
    for (s, d, _) in edges.iter() {
        touched[s as usize] = true;
        touched[d as usize] = true;
    }
    touched
        .iter()
        .enumerate()
        .filter(|(_, &t)| !t)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone)]
pub struct PatientGraph {
    pub node_values: Vec<f64>,
    pub edges: Arc<EdgeSet>,
    pub labels: Vec<u8>,
    pub row_id: usize,
    pub group_id: Option<String>,
}

impl PatientGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_values.len()
    }
}

/// Builds one patient graph from a dense event row.
pub fn build_graph(
    row_id: usize,
    x_row: &[u8],
    labels_row: &[u8],
    nodes: &NodeEncoding,
    edges: &Arc<EdgeSet>,
) -> Result<PatientGraph> {
    if x_row.len() != edges.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "row has {} events, edge set has {} nodes",
            x_row.len(),
            edges.n_nodes()
        )));
    }
    Ok(PatientGraph {
        node_values: nodes.node_values(row_id, x_row)?,
        edges: Arc::clone(edges),
        labels: labels_row.to_vec(),
        row_id,
        group_id: None,
    })
}

/// Graph builder bound to one cohort plus prepared encodings.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    pub nodes: NodeEncoding,
    pub edges: Arc<EdgeSet>,
}

impl GraphBuilder {
    pub fn new(nodes: NodeEncoding, edges: EdgeSet) -> Result<Self> {
        if nodes.n_events() != edges.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "node encoding covers {} events, edge set {}",
                nodes.n_events(),
                edges.n_nodes()
            )));
        }
        Ok(Self {
            nodes,
            edges: Arc::new(edges),
        })
    }

    pub fn build(&self, cohort: &EventCohort, row: usize) -> PatientGraph {
        PatientGraph {
            node_values: self.nodes.node_values_sparse(row, cohort.events.row(row)),
            edges: Arc::clone(&self.edges),
            labels: cohort.labels.dense_row(row),
            row_id: row,
            group_id: cohort.group_ids.as_ref().map(|g| g[row].clone()),
        }
    }

    pub fn build_rows(&self, cohort: &EventCohort, rows: &[usize]) -> Vec<PatientGraph> {
        rows.iter().map(|&r| self.build(cohort, r)).collect()
    }
}

#[derive(Serialize)]
struct NodeJson<'a> {
    event: usize,
    name: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct EdgeJson {
    src: u32,
    dst: u32,
    weight: f64,
}

#[derive(Serialize)]
struct GraphJson<'a> {
    row: usize,
    nodes: Vec<NodeJson<'a>>,
    edges: Vec<EdgeJson>,
    labels: &'a [u8],
}

/// `{nodes: [{event, name, value}], edges: [{src, dst, weight}], labels: [...]}`.
pub fn graph_to_json(graph: &PatientGraph, event_names: &[String]) -> Result<String> {
    let doc = GraphJson {
        row: graph.row_id,
        nodes: graph
            .node_values
            .iter()
            .enumerate()
            .map(|(event, &value)| NodeJson {
                event,
                name: event_names.get(event).map(String::as_str).unwrap_or(""),
                value,
            })
            .collect(),
        edges: graph
            .edges
            .iter()
            .map(|(src, dst, weight)| EdgeJson { src, dst, weight })
            .collect(),
        labels: &graph.labels,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}
