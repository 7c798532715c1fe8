//! Mini-batch training of the graph network and batched prediction.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{DatasetSplit, EventCohort};
use crate::encoders::{edge_weights, EdgeEncoding, EdgeMode, NodeEncoding, NodeMode};
use crate::error::{Error, Result};
use crate::gnn::{backward_from_logits, forward, GnnDims, ModelParams};
use crate::graph::{GraphBuilder, PatientGraph};
use crate::metrics::{bootstrap_eval, metrics, BootstrapReport, MetricsReport, Prediction};
use crate::nn::{bce_logit_grad, bce_loss, ParamSet};
use crate::optim::{adam_step, AdamState};
use crate::scalar::Scalar;
use crate::stats::BernoulliStats;

/// Graphs per gradient work unit. Fixed so the reduction order does not depend
/// on the thread count.
const GRAD_CHUNK: usize = 8;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub node_mode: NodeMode,
    pub edge_mode: EdgeMode,
    /// Early stopping on validation Jaccard; `None` trains all epochs.
    pub patience: Option<usize>,
    /// Drop co-occurring pairs seen fewer than this many times.
    pub min_joint: u64,
    /// Estimate statistics and encodings on every row instead of training rows.
    pub stats_all_rows: bool,
    /// Evaluate the validation rows after every epoch.
    pub track_validation: bool,
    /// Seed for random node and edge encodings; falls back to `seed`.
    pub encoding_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            hidden: 128,
            layers: 2,
            node_mode: NodeMode::Bernoulli,
            edge_mode: EdgeMode::Posterior,
            patience: None,
            min_joint: 1,
            stats_all_rows: false,
            track_validation: true,
            encoding_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn encoding_seed(&self) -> u64 {
        self.encoding_seed.unwrap_or(self.seed)
    }

    /// `lr = 0` and zero epochs are accepted so null runs can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden must be at least 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub params: ModelParams<F>,
    pub state: AdamState<F>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based, 0 for none).
    pub selected_epoch: usize,
}

/// Encodings and graphs for one split, built from training rows only unless
/// `stats_all_rows` is set.
pub struct Prepared {
    pub builder: GraphBuilder,
    pub stats: BernoulliStats,
    pub train: Vec<PatientGraph>,
    pub val: Vec<PatientGraph>,
    pub test: Vec<PatientGraph>,
}

/// Statistics and encodings fitted on the split's training rows (or all rows).
pub fn prepare_builder(
    cohort: &EventCohort,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<(GraphBuilder, BernoulliStats)> {
    let fit_rows: Vec<usize> = if config.stats_all_rows {
        (0..cohort.n_patients()).collect()
    } else {
        split.train_rows.clone()
    };
    let stats = BernoulliStats::estimate_rows(&cohort.events, &fit_rows)?;
    let nodes = NodeEncoding::prepare(
        config.node_mode,
        &stats,
        &cohort.events.select_rows(&fit_rows),
        &cohort.labels.select_rows(&fit_rows),
        config.encoding_seed(),
    )?;
    let mut edge_enc = EdgeEncoding::new(config.edge_mode, config.encoding_seed());
    edge_enc.min_joint = config.min_joint;
    let edges = edge_weights(&stats, &edge_enc)?;
    Ok((GraphBuilder::new(nodes, edges)?, stats))
}

pub fn prepare(cohort: &EventCohort, split: &DatasetSplit, config: &TrainConfig) -> Result<Prepared> {
    let (builder, stats) = prepare_builder(cohort, split, config)?;
    Ok(Prepared {
        train: builder.build_rows(cohort, &split.train_rows),
        val: builder.build_rows(cohort, &split.val_rows),
        test: builder.build_rows(cohort, &split.test_rows),
        builder,
        stats,
    })
}

/// Prepares the split and trains. Returns the outcome with the prepared graphs.
pub fn train<F: Scalar>(
    cohort: &EventCohort,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<(TrainOutcome<F>, Prepared)> {
    config.validate()?;
    let prepared = prepare(cohort, split, config)?;
    let outcome = train_graphs::<F>(&prepared.train, &prepared.val, cohort.n_drugs(), config)?;
    Ok((outcome, prepared))
}

pub fn train_graphs<F: Scalar>(
    train: &[PatientGraph],
    val: &[PatientGraph],
    n_drugs: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let first = train.first().ok_or(Error::NoRows)?;
    let dims = GnnDims::new(config.hidden, config.layers, first.n_nodes(), n_drugs);
    let mut params = ModelParams::<F>::init(dims, config.seed);
    let mut state = AdamState::new(&params);
    let lr = F::of(config.learning_rate);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams<F>, AdamState<F>)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let graphs: Vec<&PatientGraph> = batch.iter().map(|&i| &train[i]).collect();
            let (mut grads, batch_loss) = batch_gradient(&params, &graphs)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            grads.scale(F::one() / F::of(batch.len() as f64));
            adam_step(&mut params, &grads, &mut state, lr)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let validation = if config.track_validation && !val.is_empty() {
            let labels: Vec<Vec<u8>> = val.iter().map(|g| g.labels.clone()).collect();
            Some(metrics(&predict(&params, val)?, &labels)?)
        } else {
            None
        };
        if let (Some(patience), Some(report)) = (config.patience, &validation) {
            let score = report.jaccard.mean;
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch, params.clone(), state.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            history.push(EpochRecord {
                epoch,
                train_loss,
                validation,
            });
            if since_best >= patience {
                break;
            }
            continue;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation,
        });
    }

    let selected_epoch = history.last().map_or(0, |r| r.epoch);
    Ok(match best {
        Some((_, epoch, params, state)) => TrainOutcome {
            params,
            state,
            history,
            selected_epoch: epoch,
        },
        None => TrainOutcome {
            params,
            state,
            history,
            selected_epoch,
        },
    })
}

/// Groups graphs with identical structure and node values so each distinct
/// input is run forward once. Groups keep first-appearance order.
fn dedupe(graphs: &[&PatientGraph]) -> Vec<(usize, Vec<usize>)> {
    let mut index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        let key = (
            Arc::as_ptr(&g.edges) as usize,
            g.node_values.iter().map(|v| v.to_bits()).collect(),
        );
        match index.get(&key) {
            Some(&k) => groups[k].1.push(i),
            None => {
                index.insert(key, groups.len());
                groups.push((i, vec![i]));
            }
        }
    }
    groups
}

/// Summed (not averaged) loss gradient and summed loss over `graphs`.
pub fn batch_gradient<F: Scalar>(
    params: &ModelParams<F>,
    graphs: &[&PatientGraph],
) -> Result<(ModelParams<F>, f64)> {
    let groups = dedupe(graphs);
    let partials: Vec<Result<(ModelParams<F>, f64)>> = groups
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for (rep, members) in chunk {
                let g = graphs[*rep];
                let (probs, cache) = forward(g, params)?;
                let probs = probs.as_slice().expect("standard layout");
                let mut dlogits = Array1::<F>::zeros(params.dims.n_drugs);
                for &i in members {
                    let labels = &graphs[i].labels;
                    loss += bce_loss(probs, labels).as_f64();
                    for (d, v) in dlogits.iter_mut().zip(bce_logit_grad(probs, labels)) {
                        *d += v;
                    }
                }
                backward_from_logits(g, params, &cache, &dlogits, &mut grads)?;
            }
            Ok((grads, loss))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for part in partials {
        let (g, l) = part?;
        total.add_assign(&g);
        loss += l;
    }
    Ok((total, loss))
}

pub fn predict<F: Scalar>(params: &ModelParams<F>, graphs: &[PatientGraph]) -> Result<Vec<Prediction>> {
    let refs: Vec<&PatientGraph> = graphs.iter().collect();
    let groups = dedupe(&refs);
    let probs: Vec<Result<Vec<f64>>> = groups
        .par_iter()
        .map(|(rep, _)| Ok(forward(&graphs[*rep], params)?.1.probs_f64()))
        .collect();
    let mut out = vec![None; graphs.len()];
    for ((_, members), p) in groups.iter().zip(probs) {
        let p = p?;
        for &i in members {
            out[i] = Some(Prediction::from_probs(p.clone()));
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every row grouped")).collect())
}

pub fn graph_labels(graphs: &[PatientGraph]) -> Vec<Vec<u8>> {
    graphs.iter().map(|g| g.labels.clone()).collect()
}

pub fn evaluate<F: Scalar>(params: &ModelParams<F>, graphs: &[PatientGraph]) -> Result<MetricsReport> {
    metrics(&predict(params, graphs)?, &graph_labels(graphs))
}

pub fn bootstrap_model<F: Scalar>(
    params: &ModelParams<F>,
    graphs: &[PatientGraph],
    rounds: usize,
    frac: f64,
    seed: u64,
) -> Result<BootstrapReport> {
    bootstrap_eval(&predict(params, graphs)?, &graph_labels(graphs), rounds, frac, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeSet;

    fn toy_graphs(n: usize) -> Vec<PatientGraph> {
        let edges = Arc::new(EdgeSet::new(3, vec![(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.3)]).unwrap());
        (0..n)
            .map(|i| {
                let a = i % 2 == 0;
                let b = i % 3 == 0;
                PatientGraph {
                    node_values: vec![if a { 0.4 } else { 0.6 }, if b { 0.3 } else { 0.7 }, 0.9],
                    edges: edges.clone(),
                    labels: vec![a as u8, (a || b) as u8],
                    row_id: i,
                    group_id: None,
                }
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 8,
            hidden: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deduped_gradient_matches_per_graph_sum() {
        let graphs = toy_graphs(12);
        let refs: Vec<&PatientGraph> = graphs.iter().collect();
        let params = ModelParams::<f64>::init(GnnDims::new(8, 2, 3, 2), 1);
        let (grads, loss) = batch_gradient(&params, &refs).unwrap();
        let mut expected = params.zeros_like();
        let mut expected_loss = 0.0;
        for g in &graphs {
            let (probs, cache) = forward(g, &params).unwrap();
            expected_loss += bce_loss(probs.as_slice().unwrap(), &g.labels);
            expected.add_assign(&crate::gnn::backward(g, &params, &cache, &g.labels).unwrap());
        }
        assert!((loss - expected_loss).abs() < 1e-12);
        for (a, b) in grads.tensors().concat().iter().zip(expected.tensors().concat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_decreases_and_runs_repeat() {
        let graphs = toy_graphs(60);
        let a = train_graphs::<f64>(&graphs, &graphs[..10], 2, &small_config()).unwrap();
        let b = train_graphs::<f64>(&graphs, &graphs[..10], 2, &small_config()).unwrap();
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let graphs = toy_graphs(20);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..small_config()
        };
        let out = train_graphs::<f64>(&graphs, &[], 2, &config).unwrap();
        assert_eq!(out.params, ModelParams::init(out.params.dims, config.seed));
        assert!(out.history.iter().all(|r| r.validation.is_none()));
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let graphs = toy_graphs(30);
        let config = TrainConfig {
            patience: Some(2),
            epochs: 50,
            ..small_config()
        };
        let out = train_graphs::<f64>(&graphs, &graphs, 2, &config).unwrap();
        let best = out
            .history
            .iter()
            .map(|r| r.validation.as_ref().unwrap().jaccard.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen = &out.history[out.selected_epoch - 1];
        assert_eq!(chosen.validation.as_ref().unwrap().jaccard.mean, best);
        assert_eq!(evaluate(&out.params, &graphs).unwrap().jaccard.mean, best);
    }

    #[test]
    fn zero_model_predicts_nothing() {
        let graphs = toy_graphs(5);
        let p = ModelParams::<f64>::zeros(GnnDims::new(4, 1, 3, 2));
        let preds = predict(&p, &graphs).unwrap();
        assert!(preds.iter().all(|p| p.probs == vec![0.5, 0.5] && p.n_recommended() == 0));
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { patience: Some(0), ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
