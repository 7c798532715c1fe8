//! One-vs-rest logistic regression and a one-hidden-layer MLP over flat
//! per-row feature vectors, trained with the same Adam/BCE code as the graph
//! network.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::EventCohort;
use crate::encoders::NodeEncoding;
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::nn::{
    bce_logit_grad, bce_loss, bias_init, glorot, sigmoid, slice1, slice1_mut, slice2, slice2_mut,
    ParamSet,
};
use crate::optim::{adam_step, AdamState};
use crate::scalar::Scalar;
use crate::train::TrainConfig;

pub const MLP_HIDDEN: usize = 64;
const SHUFFLE_STREAM: u64 = 0x6261_7365;

/// Per-row input features for the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The 0/1 event indicators.
    Raw,
    /// The node values of a prepared [`NodeEncoding`].
    Encoded,
}

/// Stacks feature rows; `encoding` is required for [`FeatureMode::Encoded`].
pub fn feature_matrix<F: Scalar>(
    cohort: &EventCohort,
    rows: &[usize],
    mode: FeatureMode,
    encoding: Option<&NodeEncoding>,
) -> Result<Array2<F>> {
    let m = cohort.n_events();
    let mut x = Array2::<F>::zeros((rows.len(), m));
    for (i, &r) in rows.iter().enumerate() {
        let ones = cohort.events.row(r);
        match mode {
            FeatureMode::Raw => {
                for &j in ones {
                    x[[i, j as usize]] = F::one();
                }
            }
            FeatureMode::Encoded => {
                let enc = encoding.ok_or_else(|| {
                    Error::InvalidConfig("encoded features need a node encoding".into())
                })?;
                for (j, v) in enc.node_values_sparse(r, ones).into_iter().enumerate() {
                    x[[i, j]] = F::of(v);
                }
            }
        }
    }
    Ok(x)
}

pub fn label_rows(cohort: &EventCohort, rows: &[usize]) -> Vec<Vec<u8>> {
    rows.iter().map(|&r| cohort.labels.dense_row(r)).collect()
}

/// Forward results a dense model needs for its backward pass.
pub struct DenseCache<F> {
    pub hidden_pre: Option<Array2<F>>,
    pub hidden: Option<Array2<F>>,
    pub logits: Array2<F>,
}

pub trait DenseModel<F: Scalar>: ParamSet<F> {
    fn n_inputs(&self) -> usize;

    fn n_outputs(&self) -> usize;

    fn forward(&self, x: &Array2<F>) -> DenseCache<F>;

    /// Gradient for a batch given the loss gradient at the logits.
    fn gradient(&self, x: &Array2<F>, cache: &DenseCache<F>, dlogits: &Array2<F>) -> Self;

    /// Adds `l2 * w` to the gradient of every weight matrix.
    fn add_l2(&self, grads: &mut Self, l2: F);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<F> {
    /// `C x M`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> LinearModel<F> {
    /// All-zero start; the loss is convex so no symmetry needs breaking.
    pub fn zeros(n_inputs: usize, n_outputs: usize) -> Self {
        Self {
            w: Array2::zeros((n_outputs, n_inputs)),
            b: Array1::zeros(n_outputs),
        }
    }
}

impl<F: Scalar> ParamSet<F> for LinearModel<F> {
    fn tensor_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }

    fn tensors(&self) -> Vec<&[F]> {
        vec![slice2(&self.w), slice1(&self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![slice2_mut(&mut self.w), slice1_mut(&mut self.b)]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.n_inputs(), self.n_outputs())
    }
}

impl<F: Scalar> DenseModel<F> for LinearModel<F> {
    fn n_inputs(&self) -> usize {
        self.w.ncols()
    }

    fn n_outputs(&self) -> usize {
        self.w.nrows()
    }

    fn forward(&self, x: &Array2<F>) -> DenseCache<F> {
        DenseCache {
            hidden_pre: None,
            hidden: None,
            logits: x.dot(&self.w.t()) + &self.b,
        }
    }

    fn gradient(&self, x: &Array2<F>, _cache: &DenseCache<F>, dlogits: &Array2<F>) -> Self {
        Self {
            w: dlogits.t().dot(x),
            b: dlogits.sum_axis(Axis(0)),
        }
    }

    fn add_l2(&self, grads: &mut Self, l2: F) {
        grads.w.scaled_add(l2, &self.w);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<F> {
    /// `H x M`.
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    /// `C x H`.
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

impl<F: Scalar> MlpModel<F> {
    pub fn zeros(n_inputs: usize, hidden: usize, n_outputs: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, n_inputs)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((n_outputs, hidden)),
            b2: Array1::zeros(n_outputs),
        }
    }

    pub fn init(n_inputs: usize, hidden: usize, n_outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = glorot(&mut rng, hidden, n_inputs);
        let b1 = bias_init(&mut rng, hidden, n_inputs);
        let w2 = glorot(&mut rng, n_outputs, hidden);
        let b2 = bias_init(&mut rng, n_outputs, hidden);
        Self { w1, b1, w2, b2 }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }
}

impl<F: Scalar> ParamSet<F> for MlpModel<F> {
    fn tensor_names(&self) -> Vec<String> {
        ["w1", "b1", "w2", "b2"].map(String::from).to_vec()
    }

    fn tensors(&self) -> Vec<&[F]> {
        vec![slice2(&self.w1), slice1(&self.b1), slice2(&self.w2), slice1(&self.b2)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            slice2_mut(&mut self.w1),
            slice1_mut(&mut self.b1),
            slice2_mut(&mut self.w2),
            slice1_mut(&mut self.b2),
        ]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.n_inputs(), self.hidden(), self.n_outputs())
    }
}

impl<F: Scalar> DenseModel<F> for MlpModel<F> {
    fn n_inputs(&self) -> usize {
        self.w1.ncols()
    }

    fn n_outputs(&self) -> usize {
        self.w2.nrows()
    }

    fn forward(&self, x: &Array2<F>) -> DenseCache<F> {
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(crate::nn::relu);
        let logits = hidden.dot(&self.w2.t()) + &self.b2;
        DenseCache {
            hidden_pre: Some(pre),
            hidden: Some(hidden),
            logits,
        }
    }

    fn gradient(&self, x: &Array2<F>, cache: &DenseCache<F>, dlogits: &Array2<F>) -> Self {
        let pre = cache.hidden_pre.as_ref().expect("mlp cache");
        let hidden = cache.hidden.as_ref().expect("mlp cache");
        let mut dh = dlogits.dot(&self.w2);
        dh.zip_mut_with(pre, |g, &p| {
            if p <= F::zero() {
                *g = F::zero();
            }
        });
        Self {
            w1: dh.t().dot(x),
            b1: dh.sum_axis(Axis(0)),
            w2: dlogits.t().dot(hidden),
            b2: dlogits.sum_axis(Axis(0)),
        }
    }

    fn add_l2(&self, grads: &mut Self, l2: F) {
        grads.w1.scaled_add(l2, &self.w1);
        grads.w2.scaled_add(l2, &self.w2);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty on weight matrices (not biases).
    pub l2: f64,
    pub hidden: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self::from_train(&TrainConfig::default())
    }
}

impl BaselineConfig {
    pub fn from_train(config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            batch_size: config.batch_size,
            seed: config.seed,
            l2: 0.0,
            hidden: MLP_HIDDEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("batch_size and hidden must be at least 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2 must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DenseOutcome<F, M> {
    pub model: M,
    pub state: AdamState<F>,
    /// Mean training BCE per epoch.
    pub losses: Vec<f64>,
}

fn check_inputs<F: Scalar, M: DenseModel<F>>(model: &M, x: &Array2<F>, labels: &[Vec<u8>]) -> Result<()> {
    if x.ncols() != model.n_inputs() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} features, rows have {}",
            model.n_inputs(),
            x.ncols()
        )));
    }
    if labels.len() != x.nrows() || labels.iter().any(|l| l.len() != model.n_outputs()) {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} label rows of width {}",
            x.nrows(),
            labels.len(),
            model.n_outputs()
        )));
    }
    Ok(())
}

/// Mean BCE of `model` over all rows.
pub fn dense_loss<F: Scalar, M: DenseModel<F>>(model: &M, x: &Array2<F>, labels: &[Vec<u8>]) -> f64 {
    let logits = model.forward(x).logits;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, y)| {
            let probs: Vec<F> = row.iter().map(|&z| sigmoid(z)).collect();
            bce_loss(&probs, y).as_f64()
        })
        .sum();
    total / labels.len().max(1) as f64
}

pub fn train_dense<F: Scalar, M: DenseModel<F>>(
    mut model: M,
    x: &Array2<F>,
    labels: &[Vec<u8>],
    config: &BaselineConfig,
) -> Result<DenseOutcome<F, M>> {
    config.validate()?;
    if x.nrows() == 0 {
        return Err(Error::NoRows);
    }
    check_inputs(&model, x, labels)?;
    let mut state = AdamState::new(&model);
    let lr = F::of(config.learning_rate);
    let l2 = F::of(config.l2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let cache = model.forward(&xb);
            let inv_b = F::one() / F::of(batch.len() as f64);
            let mut dlogits = Array2::<F>::zeros(cache.logits.raw_dim());
            for (i, &r) in batch.iter().enumerate() {
                let probs: Vec<F> = cache.logits.row(i).iter().map(|&z| sigmoid(z)).collect();
                loss_sum += bce_loss(&probs, &labels[r]).as_f64();
                for (d, g) in dlogits.row_mut(i).iter_mut().zip(bce_logit_grad(&probs, &labels[r])) {
                    *d = g * inv_b;
                }
            }
            let mut grads = model.gradient(&xb, &cache, &dlogits);
            if config.l2 > 0.0 {
                model.add_l2(&mut grads, l2);
            }
            adam_step(&mut model, &grads, &mut state, lr)?;
        }
        let loss = loss_sum / x.nrows() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        losses.push(loss);
    }
    Ok(DenseOutcome {
        model,
        state,
        losses,
    })
}

pub fn train_lr<F: Scalar>(
    x: &Array2<F>,
    labels: &[Vec<u8>],
    config: &BaselineConfig,
) -> Result<DenseOutcome<F, LinearModel<F>>> {
    let c = labels.first().ok_or(Error::NoRows)?.len();
    train_dense(LinearModel::zeros(x.ncols(), c), x, labels, config)
}

pub fn train_mlp<F: Scalar>(
    x: &Array2<F>,
    labels: &[Vec<u8>],
    config: &BaselineConfig,
) -> Result<DenseOutcome<F, MlpModel<F>>> {
    let c = labels.first().ok_or(Error::NoRows)?.len();
    let model = MlpModel::init(x.ncols(), config.hidden, c, config.seed);
    train_dense(model, x, labels, config)
}

pub fn predict_baseline<F: Scalar, M: DenseModel<F>>(model: &M, x: &Array2<F>) -> Result<Vec<Prediction>> {
    if x.ncols() != model.n_inputs() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} features, rows have {}",
            model.n_inputs(),
            x.ncols()
        )));
    }
    let logits = model.forward(x).logits;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| Prediction::from_probs(row.iter().map(|&z| sigmoid(z).as_f64()).collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn config(lr: f64, epochs: usize, batch: usize) -> BaselineConfig {
        BaselineConfig {
            learning_rate: lr,
            epochs,
            batch_size: batch,
            ..BaselineConfig::default()
        }
    }

    /// Four XOR patterns repeated; drug = a xor b.
    fn parity(reps: usize) -> (Array2<f64>, Vec<Vec<u8>>) {
        let pats = [(0.0, 0.0, 0u8), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)];
        let mut x = Array2::zeros((4 * reps, 2));
        let mut y = Vec::new();
        for i in 0..4 * reps {
            let (a, b, t) = pats[i % 4];
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push(vec![t]);
        }
        (x, y)
    }

    #[test]
    fn zero_epochs_predict_one_half() {
        let (x, y) = parity(2);
        let out = train_lr(&x, &y, &config(1e-2, 0, 4)).unwrap();
        let preds = predict_baseline(&out.model, &x).unwrap();
        assert!(preds.iter().all(|p| p.probs == vec![0.5] && p.decisions == vec![0]));
    }

    #[test]
    fn separable_set_is_fit() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        let y = vec![vec![1], vec![0], vec![1], vec![0]];
        let out = train_lr(&x, &y, &config(5e-2, 200, 2)).unwrap();
        assert!(*out.losses.last().unwrap() < 0.1);
    }

    #[test]
    fn duplicated_rows_give_same_full_batch_model() {
        let x: Array2<f64> = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let y = vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![0, 0]];
        let mut x2 = Array2::zeros((8, 3));
        let mut y2 = Vec::new();
        for i in 0..8 {
            x2.row_mut(i).assign(&x.row(i % 4));
            y2.push(y[i % 4].clone());
        }
        let a = train_lr(&x, &y, &config(1e-2, 50, 100)).unwrap();
        let b = train_lr(&x2, &y2, &config(1e-2, 50, 100)).unwrap();
        for (p, q) in a.model.tensors().concat().iter().zip(b.model.tensors().concat()) {
            assert!((p - q).abs() < 1e-9f64);
        }
    }

    #[test]
    fn mlp_learns_parity_where_lr_cannot() {
        let (x, y) = parity(50);
        let cfg = config(1e-2, 200, 32);
        let lr = train_lr(&x, &y, &cfg).unwrap();
        let mlp = train_mlp(&x, &y, &cfg).unwrap();
        assert!((lr.losses.last().unwrap() - std::f64::consts::LN_2).abs() < 0.02);
        assert!(*mlp.losses.last().unwrap() < 0.1);
        let again = train_mlp(&x, &y, &cfg).unwrap();
        assert_eq!(mlp.model, again.model);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let x = array![[0.3, -0.7, 0.5], [0.9, 0.1, -0.4], [-0.2, 0.6, 0.8]];
        let y = vec![vec![1, 0], vec![0, 0], vec![1, 1]];
        let model = MlpModel::<f64>::init(3, 5, 2, 7);
        let cache = model.forward(&x);
        let mut dlogits = Array2::zeros((3, 2));
        for i in 0..3 {
            let probs: Vec<f64> = cache.logits.row(i).iter().map(|&z| sigmoid(z)).collect();
            for (d, g) in dlogits.row_mut(i).iter_mut().zip(bce_logit_grad(&probs, &y[i])) {
                *d = g / 3.0;
            }
        }
        let analytic = model.gradient(&x, &cache, &dlogits).tensors().concat();
        let h = 1e-5;
        let mut idx = 0;
        for t in 0..4 {
            for k in 0..model.tensors()[t].len() {
                let mut hi = model.clone();
                hi.tensors_mut()[t][k] += h;
                let mut lo = model.clone();
                lo.tensors_mut()[t][k] -= h;
                let numeric = (dense_loss(&hi, &x, &y) - dense_loss(&lo, &x, &y)) / (2.0 * h);
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                assert!(rel < 1e-4, "tensor {t}[{k}]: {a} vs {numeric}");
                idx += 1;
            }
        }
    }

    #[test]
    fn hand_set_weights() {
        let model = LinearModel {
            w: array![[0.5, -1.0]],
            b: array![0.25],
        };
        let x = array![[2.0, 0.5]];
        let p = predict_baseline(&model, &x).unwrap();
        let expected = 1.0 / (1.0 + (-(0.5 * 2.0 - 0.5 + 0.25f64)).exp());
        assert!((p[0].probs[0] - expected).abs() < 1e-15);
        assert_eq!(p[0].decisions, vec![1]);
        assert!(predict_baseline(&model, &array![[1.0, 2.0, 3.0]]).is_err());
    }
}
