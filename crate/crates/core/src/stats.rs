//! Empirical Bernoulli statistics: per-event marginals, pairwise joint counts
//! and the conditional table `e_ij = P(event i | event j)`.
//!
//! Joint counting walks each row's nonzero set and increments every pair in
//! it, so the cost is `sum_rows nnz(row)^2` rather than `N * M^2`. Rows are
//! sharded across rayon workers; per-worker tables are merged by integer
//! addition, which makes the result independent of scheduling.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::BinaryMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub n_rows: u64,
    pub event_counts: Vec<u64>,
    /// `rho[j] = event_counts[j] / n_rows`.
    pub rho: Vec<f64>,
}

impl Marginals {
    /// `P(X_j = 0) = 1 - rho_j`.
    pub fn absent(&self, j: usize) -> f64 {
        1.0 - self.rho[j]
    }
}

pub fn estimate_marginals(events: &BinaryMatrix) -> Result<Marginals> {
    if events.n_rows() == 0 {
        return Err(Error::NoRows);
    }
    let n_rows = events.n_rows() as u64;
    let event_counts = events.column_counts();
    let rho = event_counts
        .iter()
        .map(|&c| c as f64 / n_rows as f64)
        .collect();
    Ok(Marginals {
        n_rows,
        event_counts,
        rho,
    })
}

/// Symmetric co-occurrence counts. Only unordered pairs `i < j` with a count of
/// at least one are stored, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    n_events: usize,
    pairs: Vec<(u32, u32, u64)>,
}

impl JointCounts {
    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stored `(i, j, count)` with `i < j`.
    pub fn pairs(&self) -> &[(u32, u32, u64)] {
        &self.pairs
    }

    /// Count of rows with both `i` and `j`; `0` when absent or `i == j`.
    pub fn get(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return 0;
        }
        let key = if i < j {
            (i as u32, j as u32)
        } else {
            (j as u32, i as u32)
        };
        self.pairs
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .map(|idx| self.pairs[idx].2)
            .unwrap_or(0)
    }

    /// Drops pairs seen fewer than `min_joint` times.
    pub fn pruned(&self, min_joint: u64) -> Self {
        Self {
            n_events: self.n_events,
            pairs: self
                .pairs
                .iter()
                .copied()
                .filter(|&(_, _, c)| c >= min_joint)
                .collect(),
        }
    }
}

const SHARD_ROWS: usize = 4096;

pub fn joint_counts(events: &BinaryMatrix) -> JointCounts {
    let n_rows = events.n_rows();
    let shards: Vec<(usize, usize)> = (0..n_rows)
        .step_by(SHARD_ROWS)
        .map(|start| (start, (start + SHARD_ROWS).min(n_rows)))
        .collect();

    let merged = shards
        .into_par_iter()
        .map(|(start, end)| {
            let mut table: HashMap<(u32, u32), u64> = HashMap::new();
            for r in start..end {
                let row = events.row(r);
                for (a_idx, &a) in row.iter().enumerate() {
                    for &b in &row[a_idx + 1..] {
                        *table.entry((a, b)).or_insert(0) += 1;
                    }
                }
            }
            table
        })
        .reduce(HashMap::new, |mut acc, part| {
            for (k, v) in part {
                *acc.entry(k).or_insert(0) += v;
            }
            acc
        });

    let mut pairs: Vec<(u32, u32, u64)> = merged.into_iter().map(|((a, b), c)| (a, b, c)).collect();
    pairs.sort_unstable();
    JointCounts {
        n_events: events.n_cols(),
        pairs,
    }
}

/// One directed conditional: `e = P(target | given) = joint / count[given]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditional {
    pub target: u32,
    pub given: u32,
    pub joint: u64,
    pub e: f64,
}

/// Both directions of every stored pair, sorted by `(target, given)`.
pub fn conditionals(joint: &JointCounts, event_counts: &[u64]) -> Vec<Conditional> {
    let mut out = Vec::with_capacity(joint.len() * 2);
    for &(a, b, c) in joint.pairs() {
        out.push(Conditional {
            target: a,
            given: b,
            joint: c,
            e: c as f64 / event_counts[b as usize] as f64,
        });
        out.push(Conditional {
            target: b,
            given: a,
            joint: c,
            e: c as f64 / event_counts[a as usize] as f64,
        });
    }
    out.sort_unstable_by_key(|c| (c.target, c.given));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliStats {
    pub marginals: Marginals,
    pub joint: JointCounts,
}

impl BernoulliStats {
    pub fn estimate(events: &BinaryMatrix) -> Result<Self> {
        let marginals = estimate_marginals(events)?;
        let joint = joint_counts(events);
        Ok(Self { marginals, joint })
    }

    /// Statistics restricted to the given rows (typically the training split).
    pub fn estimate_rows(events: &BinaryMatrix, rows: &[usize]) -> Result<Self> {
        Self::estimate(&events.select_rows(rows))
    }

    pub fn n_rows(&self) -> u64 {
        self.marginals.n_rows
    }

    pub fn n_events(&self) -> usize {
        self.marginals.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.marginals.rho
    }

    pub fn event_counts(&self) -> &[u64] {
        &self.marginals.event_counts
    }

    /// `e_ij = P(i | j)`; `None` when the pair never co-occurs.
    pub fn conditional(&self, i: usize, j: usize) -> Option<f64> {
        match self.joint.get(i, j) {
            0 => None,
            c => Some(c as f64 / self.marginals.event_counts[j] as f64),
        }
    }

    pub fn conditionals(&self) -> Vec<Conditional> {
        conditionals(&self.joint, &self.marginals.event_counts)
    }
}
