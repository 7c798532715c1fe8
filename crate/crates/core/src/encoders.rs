//! Node-value and edge-weight encodings.
//!
//! Node modes map each `(event, observed bit)` to a scalar in `[0, 1]`:
//! Bernoulli means, rescaled drug-averaged log-likelihood ratios, target
//! means, or seeded uniform noise. Edge modes weight one shared edge support
//! (every co-occurring pair, both directions) by conditional probability,
//! joint relative frequency, or seeded uniform noise.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::sparse::BinaryMatrix;
use crate::stats::BernoulliStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeMode {
    Bernoulli,
    Llr,
    Target,
    Random,
}

impl NodeMode {
    pub const ALL: [NodeMode; 4] = [Self::Bernoulli, Self::Llr, Self::Target, Self::Random];

    pub fn flag(self) -> &'static str {
        match self {
            Self::Bernoulli => "bm",
            Self::Llr => "llr",
            Self::Target => "te",
            Self::Random => "rn",
        }
    }
}

impl fmt::Display for NodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for NodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm" | "bernoulli" => Ok(Self::Bernoulli),
            "llr" => Ok(Self::Llr),
            "te" | "target" => Ok(Self::Target),
            "rn" | "random" => Ok(Self::Random),
            _ => Err(Error::InvalidConfig(format!(
                "unknown node mode {s:?} (expected bm, llr, te or rn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    Posterior,
    Cooccurrence,
    Random,
}

impl EdgeMode {
    pub fn flag(self) -> &'static str {
        match self {
            Self::Posterior => "post",
            Self::Cooccurrence => "cooc",
            Self::Random => "re",
        }
    }
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post" | "posterior" => Ok(Self::Posterior),
            "cooc" | "cooccurrence" => Ok(Self::Cooccurrence),
            "re" | "random" => Ok(Self::Random),
            _ => Err(Error::InvalidConfig(format!(
                "unknown edge mode {s:?} (expected post, cooc or re)"
            ))),
        }
    }
}

/// Prepared node encoding. For the table-driven modes, `table[j]` holds the
/// value for `x_j = 0` and `x_j = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEncoding {
    pub mode: NodeMode,
    pub seed: u64,
    table: Vec<[f64; 2]>,
}

impl NodeEncoding {
    /// Prepares an encoding from training rows. `stats` must come from the same
    /// rows as `events`/`labels` for the target and LLR modes to be consistent.
    pub fn prepare(
        mode: NodeMode,
        stats: &BernoulliStats,
        events: &BinaryMatrix,
        labels: &BinaryMatrix,
        seed: u64,
    ) -> Result<Self> {
        let m = stats.n_events();
        let table = match mode {
            NodeMode::Bernoulli => stats.rho().iter().map(|&r| [1.0 - r, r]).collect(),
            NodeMode::Llr => {
                let scores = llr_scores(events, labels)?;
                scores.iter().map(|&s| [1.0 - s, s]).collect()
            }
            NodeMode::Target => target_encode(events, labels)?,
            NodeMode::Random => vec![[0.0, 0.0]; m],
        };
        Ok(Self { mode, seed, table })
    }

    pub fn bernoulli(stats: &BernoulliStats) -> Self {
        Self {
            mode: NodeMode::Bernoulli,
            seed: 0,
            table: stats.rho().iter().map(|&r| [1.0 - r, r]).collect(),
        }
    }

    pub fn n_events(&self) -> usize {
        self.table.len()
    }

    /// Score for `(event, observed bit)`; unused in random mode.
    pub fn score(&self, event: usize, present: bool) -> f64 {
        self.table[event][present as usize]
    }

    /// Node values for a dense binary row. `row_id` keys the random stream.
    pub fn node_values(&self, row_id: usize, x: &[u8]) -> Result<Vec<f64>> {
        if x.len() != self.n_events() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} events, encoding has {}",
                x.len(),
                self.n_events()
            )));
        }
        let ones: Vec<u32> = x
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(j, _)| j as u32)
            .collect();
        Ok(self.node_values_sparse(row_id, &ones))
    }

    /// Node values for a row given by its sorted nonzero columns.
    pub fn node_values_sparse(&self, row_id: usize, ones: &[u32]) -> Vec<f64> {
        match self.mode {
            NodeMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(row_id as u64);
                (0..self.n_events()).map(|_| rng.random::<f64>()).collect()
            }
            _ => {
                let mut values: Vec<f64> = self.table.iter().map(|t| t[0]).collect();
                for &j in ones {
                    values[j as usize] = self.table[j as usize][1];
                }
                values
            }
        }
    }
}

/// Dunning log-likelihood ratio of a 2x2 table `[[k11, k12], [k21, k22]]`,
/// `2 T (H(k) - H(rowsums) - H(colsums))` with `H(v) = sum (v_i/T) ln(v_i/T)`.
pub fn llr(k: [[u64; 2]; 2]) -> Result<f64> {
    let total: u64 = k.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Other("LLR of an empty contingency table".into()));
    }
    let t = total as f64;
    let h = |v: &[u64]| -> f64 {
        v.iter()
            .filter(|&&x| x > 0)
            .map(|&x| {
                let p = x as f64 / t;
                p * p.ln()
            })
            .sum()
    };
    let cells = [k[0][0], k[0][1], k[1][0], k[1][1]];
    let rows = [k[0][0] + k[0][1], k[1][0] + k[1][1]];
    let cols = [k[0][0] + k[1][0], k[0][1] + k[1][1]];
    let v = 2.0 * t * (h(&cells) - h(&rows) - h(&cols));
    // rounding can leave a tiny negative under exact independence
    Ok(v.max(0.0))
}

/// `co[j * C + c]` = rows where event `j` and drug `c` are both 1.
fn event_drug_counts(events: &BinaryMatrix, labels: &BinaryMatrix) -> Result<Vec<u64>> {
    if events.n_rows() != labels.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} event rows vs {} label rows",
            events.n_rows(),
            labels.n_rows()
        )));
    }
    let c = labels.n_cols();
    let mut co = vec![0u64; events.n_cols() * c];
    for r in 0..events.n_rows() {
        let drugs = labels.row(r);
        for &j in events.row(r) {
            let base = j as usize * c;
            for &d in drugs {
                co[base + d as usize] += 1;
            }
        }
    }
    Ok(co)
}

/// Per-event LLR against every drug, averaged over drugs, then min-max
/// rescaled across events to `[0, 1]` (all zeros when every event ties).
pub fn llr_scores(events: &BinaryMatrix, labels: &BinaryMatrix) -> Result<Vec<f64>> {
    let n = events.n_rows() as u64;
    if n == 0 {
        return Err(Error::NoRows);
    }
    let co = event_drug_counts(events, labels)?;
    let event_counts = events.column_counts();
    let drug_counts = labels.column_counts();
    let c = labels.n_cols();

    let mut raw = Vec::with_capacity(events.n_cols());
    for (j, &ej) in event_counts.iter().enumerate() {
        let mut sum = 0.0;
        for (d, &yd) in drug_counts.iter().enumerate() {
            let k11 = co[j * c + d];
            let k12 = ej - k11;
            let k21 = yd - k11;
            let k22 = n - ej - k21;
            sum += llr([[k11, k12], [k21, k22]])?;
        }
        raw.push(if c == 0 { 0.0 } else { sum / c as f64 });
    }
    Ok(min_max(&raw))
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Target encoding per event: `[TE(x=0), TE(x=1)]`, each the drug-averaged
/// label mean among rows with that event value. An empty category falls back
/// to the global drug mean.
pub fn target_encode(events: &BinaryMatrix, labels: &BinaryMatrix) -> Result<Vec<[f64; 2]>> {
    let n = events.n_rows() as u64;
    if n == 0 {
        return Err(Error::NoRows);
    }
    let co = event_drug_counts(events, labels)?;
    let event_counts = events.column_counts();
    let drug_counts = labels.column_counts();
    let c = labels.n_cols();
    if c == 0 {
        return Ok(vec![[0.0, 0.0]; events.n_cols()]);
    }
    let global = drug_counts.iter().map(|&y| y as f64 / n as f64).sum::<f64>() / c as f64;

    Ok(event_counts
        .iter()
        .enumerate()
        .map(|(j, &ej)| {
            let present = if ej == 0 {
                global
            } else {
                (0..c).map(|d| co[j * c + d] as f64 / ej as f64).sum::<f64>() / c as f64
            };
            let absent_rows = n - ej;
            let absent = if absent_rows == 0 {
                global
            } else {
                drug_counts
                    .iter()
                    .enumerate()
                    .map(|(d, &yd)| (yd - co[j * c + d]) as f64 / absent_rows as f64)
                    .sum::<f64>()
                    / c as f64
            };
            [absent, present]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeEncoding {
    pub mode: EdgeMode,
    pub seed: u64,
    /// Pairs co-occurring fewer times than this are dropped from the support.
    pub min_joint: u64,
}

impl EdgeEncoding {
    pub fn new(mode: EdgeMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            min_joint: 1,
        }
    }
}

// Keeps the edge stream distinct from the node stream under a shared seed.
const EDGE_STREAM: u64 = 0x6564_6765;

/// Directed weighted edges for every stored pair, both directions. The edge
/// `src -> dst` carries `P(dst | src)` in posterior mode.
pub fn edge_weights(stats: &BernoulliStats, encoding: &EdgeEncoding) -> Result<EdgeSet> {
    let joint = stats.joint.pruned(encoding.min_joint.max(1));
    let counts = stats.event_counts();
    let n_rows = stats.n_rows() as f64;
    let mut edges = Vec::with_capacity(joint.len() * 2);
    for &(a, b, c) in joint.pairs() {
        let (w_ab, w_ba) = match encoding.mode {
            EdgeMode::Posterior => (
                c as f64 / counts[a as usize] as f64,
                c as f64 / counts[b as usize] as f64,
            ),
            EdgeMode::Cooccurrence => (c as f64 / n_rows, c as f64 / n_rows),
            EdgeMode::Random => (0.0, 0.0),
        };
        edges.push((a, b, w_ab));
        edges.push((b, a, w_ba));
    }
    let mut set = EdgeSet::new(stats.n_events(), edges)?;
    if encoding.mode == EdgeMode::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(encoding.seed);
        rng.set_stream(EDGE_STREAM);
        set.map_weights(|_, _, _| rng.random::<f64>());
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(columns: &[&[u8]]) -> BinaryMatrix {
        let n = columns[0].len();
        let dense: Vec<Vec<u8>> = (0..n)
            .map(|r| columns.iter().map(|c| c[r]).collect())
            .collect();
        BinaryMatrix::from_dense(columns.len(), &dense).unwrap()
    }

    #[test]
    fn bernoulli_branch() {
        let events = cols(&[&[1, 1, 0, 0], &[1, 0, 1, 0]]);
        let stats = BernoulliStats::estimate(&events).unwrap();
        let enc = NodeEncoding::bernoulli(&stats);
        assert_eq!(enc.node_values(0, &[1, 0]).unwrap(), vec![0.5, 0.5]);

        let zero = BernoulliStats::estimate(&BinaryMatrix::zeros(5, 3)).unwrap();
        let enc = NodeEncoding::bernoulli(&zero);
        assert_eq!(enc.node_values(0, &[0, 0, 0]).unwrap(), vec![1.0; 3]);
        assert!(enc.node_values(0, &[0, 0]).is_err());
    }

    #[test]
    fn bernoulli_branch_asymmetric_marginal() {
        // rho = 0.3
        let events = cols(&[&[1, 1, 1, 0, 0, 0, 0, 0, 0, 0]]);
        let stats = BernoulliStats::estimate(&events).unwrap();
        let enc = NodeEncoding::bernoulli(&stats);
        assert_eq!(enc.node_values(0, &[1]).unwrap(), vec![0.3]);
        assert_eq!(enc.node_values(0, &[0]).unwrap(), vec![1.0 - 0.3]);
    }

    #[test]
    fn llr_examples() {
        assert_eq!(llr([[1, 1], [1, 1]]).unwrap(), 0.0);
        let v = llr([[2, 0], [0, 2]]).unwrap();
        assert!((v - 8.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 5.545).abs() < 1e-3);
        assert!(llr([[0, 0], [0, 0]]).is_err());
    }

    #[test]
    fn constant_event_scores_zero() {
        let events = cols(&[&[1, 1, 1, 1], &[1, 1, 0, 0]]);
        let labels = cols(&[&[1, 1, 0, 0]]);
        let s = llr_scores(&events, &labels).unwrap();
        assert_eq!(s, vec![0.0, 1.0]);
    }

    #[test]
    fn target_examples() {
        let events = cols(&[&[1, 1, 0, 0]]);
        let te = target_encode(&events, &cols(&[&[1, 1, 0, 0]])).unwrap();
        assert_eq!(te, vec![[0.0, 1.0]]);
        let te = target_encode(&events, &cols(&[&[1, 0, 1, 0]])).unwrap();
        assert_eq!(te, vec![[0.5, 0.5]]);
        // empty category falls back to the global mean
        let te = target_encode(&cols(&[&[0, 0, 0, 0]]), &cols(&[&[1, 0, 0, 0]])).unwrap();
        assert_eq!(te, vec![[0.25, 0.25]]);
    }

    #[test]
    fn edge_modes_share_support() {
        let events = cols(&[&[1, 0, 0, 0], &[1, 1, 0, 0], &[0, 0, 1, 1]]);
        let stats = BernoulliStats::estimate(&events).unwrap();
        let post = edge_weights(&stats, &EdgeEncoding::new(EdgeMode::Posterior, 0)).unwrap();
        // A = 0, B = 1: P(A|B) = 0.5, P(B|A) = 1
        assert_eq!(post.weight(1, 0), Some(0.5));
        assert_eq!(post.weight(0, 1), Some(1.0));

        let cooc = edge_weights(&stats, &EdgeEncoding::new(EdgeMode::Cooccurrence, 0)).unwrap();
        assert_eq!(cooc.weight(1, 0), Some(0.25));
        assert_eq!(cooc.weight(0, 1), Some(0.25));

        let re = edge_weights(&stats, &EdgeEncoding::new(EdgeMode::Random, 7)).unwrap();
        let re2 = edge_weights(&stats, &EdgeEncoding::new(EdgeMode::Random, 7)).unwrap();
        assert_eq!(re, re2);
        let support = |s: &EdgeSet| s.iter().map(|(a, b, _)| (a, b)).collect::<Vec<_>>();
        assert_eq!(support(&post), support(&cooc));
        assert_eq!(support(&post), support(&re));
        assert!(re.iter().all(|(_, _, w)| (0.0..1.0).contains(&w)));
    }

    #[test]
    fn random_nodes_are_keyed_by_row() {
        let stats = BernoulliStats::estimate(&BinaryMatrix::zeros(4, 5)).unwrap();
        let events = BinaryMatrix::zeros(4, 5);
        let labels = BinaryMatrix::zeros(4, 1);
        let enc = NodeEncoding::prepare(NodeMode::Random, &stats, &events, &labels, 3).unwrap();
        let a = enc.node_values_sparse(2, &[]);
        let b = enc.node_values_sparse(2, &[1]);
        let c = enc.node_values_sparse(3, &[]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }
}
