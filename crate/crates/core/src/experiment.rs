//! Model arms, the ablation grid and consolidated result tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{feature_matrix, label_rows, predict_baseline, train_lr, train_mlp, BaselineConfig, FeatureMode};
use crate::cohort::{DatasetSplit, EventCohort};
use crate::encoders::{EdgeMode, NodeEncoding, NodeMode};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_eval, MetricsReport, Prediction};
use crate::scalar::Scalar;
use crate::stats::BernoulliStats;
use crate::train::{predict, train, EpochRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            _ => Err(Error::InvalidConfig(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Gnn(NodeMode, EdgeMode),
    Lr,
    Mlp,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gnn(n, e) => write!(f, "{n}-{e}"),
            Self::Lr => f.write_str("lr"),
            Self::Mlp => f.write_str("mlp"),
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Self::Lr),
            "mlp" => Ok(Self::Mlp),
            _ => {
                let (n, e) = s.split_once('-').ok_or_else(|| {
                    Error::InvalidConfig(format!("unknown arm {s:?} (expected e.g. bm-post, lr, mlp)"))
                })?;
                Ok(Self::Gnn(n.parse()?, e.parse()?))
            }
        }
    }
}

/// The eleven-arm ablation: every node mode with posterior and co-occurrence
/// edges where meaningful, the random-edge controls, and the two baselines.
pub const ABLATION_ARMS: [Arm; 11] = [
    Arm::Gnn(NodeMode::Bernoulli, EdgeMode::Posterior),
    Arm::Gnn(NodeMode::Bernoulli, EdgeMode::Cooccurrence),
    Arm::Gnn(NodeMode::Llr, EdgeMode::Posterior),
    Arm::Gnn(NodeMode::Llr, EdgeMode::Cooccurrence),
    Arm::Gnn(NodeMode::Target, EdgeMode::Posterior),
    Arm::Gnn(NodeMode::Target, EdgeMode::Cooccurrence),
    Arm::Gnn(NodeMode::Bernoulli, EdgeMode::Random),
    Arm::Gnn(NodeMode::Random, EdgeMode::Posterior),
    Arm::Gnn(NodeMode::Random, EdgeMode::Random),
    Arm::Lr,
    Arm::Mlp,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub rounds: usize,
    pub frac: f64,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            rounds: 10,
            frac: 0.8,
            seed: 0,
        }
    }
}

/// Everything besides the arm that decides a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSettings {
    /// Graph-model configuration; its node and edge modes are replaced per arm.
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    /// Logistic-regression input. The MLP always sees Bernoulli-encoded rows.
    pub lr_features: FeatureMode,
    pub precision: Precision,
}

impl ArmSettings {
    /// Baselines share the graph model's optimizer settings; raw LR inputs, f64.
    pub fn new(train: TrainConfig) -> Self {
        Self {
            baseline: BaselineConfig::from_train(&train),
            train,
            lr_features: FeatureMode::Raw,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: Arm,
    pub test_rows: Vec<usize>,
    pub predictions: Vec<Prediction>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub history: Vec<EpochRecord>,
}

/// Dense baseline inputs for `rows`, with encodings fitted like the graph
/// model's (training rows unless `stats_all_rows`).
pub fn baseline_features<F: Scalar>(
    cohort: &EventCohort,
    split: &DatasetSplit,
    rows: &[usize],
    mode: FeatureMode,
    stats_all_rows: bool,
) -> Result<ndarray::Array2<F>> {
    let encoding = match mode {
        FeatureMode::Raw => None,
        FeatureMode::Encoded => {
            let fit_rows: Vec<usize> = if stats_all_rows {
                (0..cohort.n_patients()).collect()
            } else {
                split.train_rows.clone()
            };
            Some(NodeEncoding::bernoulli(&BernoulliStats::estimate_rows(&cohort.events, &fit_rows)?))
        }
    };
    feature_matrix::<F>(cohort, rows, mode, encoding.as_ref())
}

/// Trains one arm on the split's training rows and predicts its test rows.
pub fn run_arm<F: Scalar>(
    cohort: &EventCohort,
    split: &DatasetSplit,
    arm: Arm,
    settings: &ArmSettings,
) -> Result<ArmRun> {
    match arm {
        Arm::Gnn(node_mode, edge_mode) => {
            let config = TrainConfig {
                node_mode,
                edge_mode,
                ..settings.train.clone()
            };
            let (outcome, prepared) = train::<F>(cohort, split, &config)?;
            Ok(ArmRun {
                arm,
                test_rows: split.test_rows.clone(),
                predictions: predict(&outcome.params, &prepared.test)?,
                train_loss: outcome.history.iter().map(|r| r.train_loss).collect(),
                history: outcome.history,
            })
        }
        Arm::Lr | Arm::Mlp => {
            let mode = if arm == Arm::Lr { settings.lr_features } else { FeatureMode::Encoded };
            let all_rows = settings.train.stats_all_rows;
            let x_train = baseline_features::<F>(cohort, split, &split.train_rows, mode, all_rows)?;
            let x_test = baseline_features::<F>(cohort, split, &split.test_rows, mode, all_rows)?;
            let y_train = label_rows(cohort, &split.train_rows);
            let (predictions, train_loss) = if arm == Arm::Lr {
                let out = train_lr(&x_train, &y_train, &settings.baseline)?;
                (predict_baseline(&out.model, &x_test)?, out.losses)
            } else {
                let out = train_mlp(&x_train, &y_train, &settings.baseline)?;
                (predict_baseline(&out.model, &x_test)?, out.losses)
            };
            Ok(ArmRun {
                arm,
                test_rows: split.test_rows.clone(),
                predictions,
                train_loss,
                history: Vec::new(),
            })
        }
    }
}

pub fn run_arm_with(cohort: &EventCohort, split: &DatasetSplit, arm: Arm, settings: &ArmSettings) -> Result<ArmRun> {
    match settings.precision {
        Precision::F32 => run_arm::<f32>(cohort, split, arm, settings),
        Precision::F64 => run_arm::<f64>(cohort, split, arm, settings),
    }
}

/// Bootstrapped metrics of a run. `truth` replaces the cohort labels (indexed
/// by cohort row) when given, e.g. with simulator ground truth.
pub fn score_run(
    run: &ArmRun,
    cohort: &EventCohort,
    truth: Option<&[Vec<u8>]>,
    protocol: &EvalProtocol,
) -> Result<MetricsReport> {
    let labels: Vec<Vec<u8>> = match truth {
        Some(t) => run.test_rows.iter().map(|&r| t[r].clone()).collect(),
        None => label_rows(cohort, &run.test_rows),
    };
    Ok(bootstrap_eval(&run.predictions, &labels, protocol.rounds, protocol.frac, protocol.seed)?.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub report: MetricsReport,
}

pub fn ablate(
    cohort: &EventCohort,
    split: &DatasetSplit,
    arms: &[Arm],
    settings: &ArmSettings,
    protocol: &EvalProtocol,
    truth: Option<&[Vec<u8>]>,
) -> Result<Vec<AblationRow>> {
    arms.iter()
        .map(|&arm| {
            let run = run_arm_with(cohort, split, arm, settings)?;
            Ok(AblationRow {
                model: arm.to_string(),
                report: score_run(&run, cohort, truth, protocol)?,
            })
        })
        .collect()
}

/// `model,jaccard,f1,prauc,auroc,avg_drug` with bootstrap means.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("model,jaccard,f1,prauc,auroc,avg_drug\n");
    for row in rows {
        out.push_str(&row.model);
        for v in row.report.means() {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Same layout as [`ablation_csv`] with bootstrap standard deviations.
pub fn ablation_std_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("model,jaccard,f1,prauc,auroc,avg_drug\n");
    for row in rows {
        out.push_str(&row.model);
        for v in row.report.stds() {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_names_round_trip() {
        for arm in ABLATION_ARMS {
            assert_eq!(arm.to_string().parse::<Arm>().unwrap(), arm);
        }
        assert_eq!(ABLATION_ARMS[0].to_string(), "bm-post");
        assert!("bm".parse::<Arm>().is_err());
        assert!("xx-post".parse::<Arm>().is_err());
        assert_eq!("f32".parse::<Precision>().unwrap(), Precision::F32);
    }
}
