//! Example-based multi-label metrics, bootstrap and group-averaged evaluation.
//!
//! Every metric is computed per row over its drug decisions and then averaged
//! across rows. Rows with no true drugs define Jaccard and F1 as 1 when the
//! prediction is also empty and are skipped for the rank metrics; rows whose
//! truth is constant are skipped for AUROC.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// `decisions[y] = 1` iff `probs[y] > 0.5`.
    pub decisions: Vec<u8>,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let decisions = probs.iter().map(|&p| (p > THRESHOLD) as u8).collect();
        Self { probs, decisions }
    }

    pub fn n_recommended(&self) -> usize {
        self.decisions.iter().filter(|&&r| r != 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: Option<f64>,
    pub auroc: Option<f64>,
    pub n_recommended: usize,
}

pub fn row_metrics(pred: &Prediction, truth: &[u8]) -> RowMetrics {
    assert_eq!(pred.decisions.len(), truth.len(), "prediction/label width mismatch");
    let mut inter = 0usize;
    let mut n_pred = 0usize;
    let mut n_true = 0usize;
    for (&r, &t) in pred.decisions.iter().zip(truth) {
        let (r, t) = (r != 0, t != 0);
        inter += (r && t) as usize;
        n_pred += r as usize;
        n_true += t as usize;
    }
    let union = n_pred + n_true - inter;
    let jaccard = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    let f1 = if n_pred + n_true == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (n_pred + n_true) as f64
    };
    RowMetrics {
        jaccard,
        f1,
        prauc: average_precision(&pred.probs, truth),
        auroc: auroc(&pred.probs, truth),
        n_recommended: n_pred,
    }
}

/// Step-wise average precision over distinct score thresholds; `None` when no
/// item is relevant.
pub fn average_precision(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t != 0).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if truth[order[k]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Mann-Whitney AUROC with midranks for ties; `None` when truth is constant.
pub fn auroc(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t != 0).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        // 1-based midrank of the tie block k..=end
        let midrank = (k + end) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=end] {
            if truth[idx] != 0 {
                rank_sum += midrank;
            }
        }
        k = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jaccard: Summary,
    pub f1: Summary,
    pub prauc: Summary,
    pub auroc: Summary,
    pub avg_drug: Summary,
    pub n_rows: usize,
    pub skipped_prauc: usize,
    pub skipped_auroc: usize,
    /// Bootstrap rounds behind the standard deviations (1 for a plain evaluation).
    pub rounds: usize,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 5] = ["jaccard", "f1", "prauc", "auroc", "avg_drug"];

    pub fn means(&self) -> [f64; 5] {
        [
            self.jaccard.mean,
            self.f1.mean,
            self.prauc.mean,
            self.auroc.mean,
            self.avg_drug.mean,
        ]
    }

    pub fn stds(&self) -> [f64; 5] {
        [
            self.jaccard.std,
            self.f1.std,
            self.prauc.std,
            self.auroc.std,
            self.avg_drug.std,
        ]
    }
}

/// Running mean/variance; constant input gives exactly that value and zero.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn summary(&self) -> Summary {
        Summary {
            mean: self.mean,
            std: if self.n == 0 {
                0.0
            } else {
                (self.m2 / self.n as f64).sqrt()
            },
        }
    }
}

#[derive(Default)]
struct Accumulator {
    jaccard: Welford,
    f1: Welford,
    prauc: Welford,
    auroc: Welford,
    avg_drug: Welford,
    n_rows: usize,
    skipped_prauc: usize,
    skipped_auroc: usize,
}

impl Accumulator {
    fn push(&mut self, m: &RowMetrics) {
        self.n_rows += 1;
        self.jaccard.push(m.jaccard);
        self.f1.push(m.f1);
        self.avg_drug.push(m.n_recommended as f64);
        match m.prauc {
            Some(v) => self.prauc.push(v),
            None => self.skipped_prauc += 1,
        }
        match m.auroc {
            Some(v) => self.auroc.push(v),
            None => self.skipped_auroc += 1,
        }
    }

    fn report(&self) -> MetricsReport {
        let point = |w: &Welford| Summary {
            mean: w.summary().mean,
            std: 0.0,
        };
        MetricsReport {
            jaccard: point(&self.jaccard),
            f1: point(&self.f1),
            prauc: point(&self.prauc),
            auroc: point(&self.auroc),
            avg_drug: point(&self.avg_drug),
            n_rows: self.n_rows,
            skipped_prauc: self.skipped_prauc,
            skipped_auroc: self.skipped_auroc,
            rounds: 1,
        }
    }
}

fn check_lengths(preds: &[Prediction], labels: &[Vec<u8>]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} label rows",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn metrics(preds: &[Prediction], labels: &[Vec<u8>]) -> Result<MetricsReport> {
    check_lengths(preds, labels)?;
    let mut acc = Accumulator::default();
    for (p, t) in preds.iter().zip(labels) {
        acc.push(&row_metrics(p, t));
    }
    Ok(acc.report())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub summary: MetricsReport,
    pub rounds: Vec<MetricsReport>,
}

/// Repeated subsampling without replacement of `floor(frac * n)` rows.
/// Sampled rows are evaluated in ascending index order.
pub fn bootstrap_eval(
    preds: &[Prediction],
    labels: &[Vec<u8>],
    rounds: usize,
    frac: f64,
    seed: u64,
) -> Result<BootstrapReport> {
    check_lengths(preds, labels)?;
    if preds.is_empty() {
        return Err(Error::InvalidConfig("bootstrap on an empty test set".into()));
    }
    if rounds == 0 || !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs rounds >= 1 and 0 < frac <= 1, got {rounds} and {frac}"
        )));
    }
    let n = preds.len();
    let take = ((frac * n as f64) + 1e-9).floor().max(1.0) as usize;
    let row_metrics: Vec<RowMetrics> = preds
        .iter()
        .zip(labels)
        .map(|(p, t)| row_metrics(p, t))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_round = Vec::with_capacity(rounds);
    let mut agg: [Welford; 5] = Default::default();
    let (mut skipped_prauc, mut skipped_auroc) = (0, 0);
    for _ in 0..rounds {
        let mut rows = index::sample(&mut rng, n, take).into_vec();
        rows.sort_unstable();
        let mut acc = Accumulator::default();
        for r in rows {
            acc.push(&row_metrics[r]);
        }
        let report = acc.report();
        for (w, v) in agg.iter_mut().zip(report.means()) {
            w.push(v);
        }
        skipped_prauc += report.skipped_prauc;
        skipped_auroc += report.skipped_auroc;
        per_round.push(report);
    }
    let s = agg.map(|w| w.summary());
    Ok(BootstrapReport {
        summary: MetricsReport {
            jaccard: s[0],
            f1: s[1],
            prauc: s[2],
            auroc: s[3],
            avg_drug: s[4],
            n_rows: take,
            skipped_prauc: skipped_prauc / rounds,
            skipped_auroc: skipped_auroc / rounds,
            rounds,
        },
        rounds: per_round,
    })
}

/// Averages per-row metrics within each group, then across groups.
pub fn group_eval(
    preds: &[Prediction],
    labels: &[Vec<u8>],
    group_ids: &[String],
) -> Result<MetricsReport> {
    check_lengths(preds, labels)?;
    if group_ids.len() != preds.len() {
        return Err(Error::InvalidConfig(format!(
            "{} group ids for {} rows",
            group_ids.len(),
            preds.len()
        )));
    }
    let mut groups: BTreeMap<&str, Accumulator> = BTreeMap::new();
    for ((p, t), g) in preds.iter().zip(labels).zip(group_ids) {
        groups.entry(g.as_str()).or_default().push(&row_metrics(p, t));
    }
    let mut outer: [Welford; 5] = Default::default();
    let (mut skipped_prauc, mut skipped_auroc) = (0, 0);
    for acc in groups.values() {
        outer[0].push(acc.jaccard.mean);
        outer[1].push(acc.f1.mean);
        if acc.prauc.n > 0 {
            outer[2].push(acc.prauc.mean);
        }
        if acc.auroc.n > 0 {
            outer[3].push(acc.auroc.mean);
        }
        outer[4].push(acc.avg_drug.mean);
        skipped_prauc += acc.skipped_prauc;
        skipped_auroc += acc.skipped_auroc;
    }
    let point = |w: &Welford| Summary {
        mean: w.mean,
        std: 0.0,
    };
    Ok(MetricsReport {
        jaccard: point(&outer[0]),
        f1: point(&outer[1]),
        prauc: point(&outer[2]),
        auroc: point(&outer[3]),
        avg_drug: point(&outer[4]),
        n_rows: preds.len(),
        skipped_prauc,
        skipped_auroc,
        rounds: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(probs: &[f64]) -> Prediction {
        Prediction::from_probs(probs.to_vec())
    }

    #[test]
    fn threshold_semantics() {
        let p = pred(&[0.51, 0.5, 0.49]);
        assert_eq!(p.decisions, vec![1, 0, 0]);
        assert_eq!(pred(&[0.5; 4]).n_recommended(), 0);
    }

    #[test]
    fn set_metrics() {
        let m = row_metrics(&pred(&[0.9, 0.9, 0.1]), &[1, 1, 0]);
        assert_eq!((m.jaccard, m.f1), (1.0, 1.0));
        // R = {d1, d2}, T = {d2, d3}
        let m = row_metrics(&pred(&[0.9, 0.9, 0.1]), &[0, 1, 1]);
        assert!((m.jaccard - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 0.5).abs() < 1e-15);
        let m = row_metrics(&pred(&[0.1, 0.2]), &[0, 0]);
        assert_eq!((m.jaccard, m.f1, m.prauc, m.auroc), (1.0, 1.0, None, None));
        let m = row_metrics(&pred(&[0.9, 0.2]), &[0, 0]);
        assert_eq!((m.jaccard, m.f1), (0.0, 0.0));
    }

    #[test]
    fn rank_metrics() {
        let m = row_metrics(&pred(&[0.9, 0.8, 0.1]), &[1, 0, 0]);
        assert_eq!(m.auroc, Some(1.0));
        assert_eq!(m.prauc, Some(1.0));
        // ranking pos at 2nd of 3: AP = 1/2, AUC = 1/2
        let m = row_metrics(&pred(&[0.9, 0.8, 0.1]), &[0, 1, 0]);
        assert_eq!(m.prauc, Some(0.5));
        assert_eq!(m.auroc, Some(0.5));
        // all tied: AUC = 1/2, AP = prevalence
        assert_eq!(auroc(&[0.3; 4], &[1, 0, 0, 1]), Some(0.5));
        assert_eq!(average_precision(&[0.3; 4], &[1, 0, 0, 1]), Some(0.5));
        assert_eq!(auroc(&[0.3, 0.4], &[1, 1]), None);
    }

    #[test]
    fn rank_metrics_ignore_monotone_transforms() {
        let scores = [0.2, 0.7, 0.4, 0.9, 0.1];
        let truth = [0, 1, 1, 0, 0];
        let warped: Vec<f64> = scores.iter().map(|&s: &f64| (3.0 * s).exp()).collect();
        assert_eq!(auroc(&scores, &truth), auroc(&warped, &truth));
        assert_eq!(
            average_precision(&scores, &truth),
            average_precision(&warped, &truth)
        );
    }

    #[test]
    fn bootstrap_full_fraction_has_zero_std() {
        let preds: Vec<Prediction> = (0..7)
            .map(|i| pred(&[i as f64 / 7.0, 1.0 - i as f64 / 7.0]))
            .collect();
        let labels: Vec<Vec<u8>> = (0..7).map(|i| vec![(i % 2) as u8, (i % 3 == 0) as u8]).collect();
        let plain = metrics(&preds, &labels).unwrap();
        let b = bootstrap_eval(&preds, &labels, 10, 1.0, 4).unwrap();
        assert_eq!(b.summary.stds(), [0.0; 5]);
        assert_eq!(b.summary.means(), plain.means());

        let b1 = bootstrap_eval(&preds, &labels, 10, 0.8, 4).unwrap();
        let b2 = bootstrap_eval(&preds, &labels, 10, 0.8, 4).unwrap();
        assert_eq!(b1, b2);
        assert!(bootstrap_eval(&[], &[], 10, 0.8, 4).is_err());
    }

    #[test]
    fn group_examples() {
        // row Jaccards 1; 0, 0, 0
        let preds = vec![pred(&[0.9]), pred(&[0.9]), pred(&[0.9]), pred(&[0.9])];
        let labels = vec![vec![1], vec![0], vec![0], vec![0]];
        let groups: Vec<String> = ["a", "b", "b", "b"].iter().map(|s| s.to_string()).collect();
        let plain = metrics(&preds, &labels).unwrap();
        assert_eq!(plain.jaccard.mean, 0.25);
        let grouped = group_eval(&preds, &labels, &groups).unwrap();
        assert_eq!(grouped.jaccard.mean, 0.5);

        let singletons: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        assert_eq!(
            group_eval(&preds, &labels, &singletons).unwrap().means(),
            plain.means()
        );
        assert!(group_eval(&preds, &labels, &groups[..2]).is_err());
    }
}
