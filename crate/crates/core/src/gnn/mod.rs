//! Edge-featured message-passing network over patient event graphs.
//!
//! Each node starts from a scalar value lifted to `d` dimensions. Every layer
//! sends a message along each directed edge from the source embedding
//! concatenated with the scalar edge weight, mean-aggregates messages per
//! destination, combines the aggregate with the node's own embedding and
//! L2-normalizes the result. A per-node scalar head feeds a linear readout
//! over all nodes with one sigmoid output per drug.

mod backward;
mod forward;

pub use backward::{backward, backward_from_logits};
pub use forward::{forward, ForwardCache, LayerCache};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{bias_init, glorot, slice1, slice1_mut, slice2, slice2_mut, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnDims {
    /// Hidden width `d`.
    pub hidden: usize,
    /// Number of message-passing layers `K`.
    pub layers: usize,
    /// Nodes per graph (events).
    pub n_events: usize,
    /// Output width (drugs).
    pub n_drugs: usize,
}

impl GnnDims {
    pub fn new(hidden: usize, layers: usize, n_events: usize, n_drugs: usize) -> Self {
        Self {
            hidden,
            layers,
            n_events,
            n_drugs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    /// `d x (d + 1)`: source embedding columns followed by the edge column.
    pub w_msg: Array2<F>,
    pub b_msg: Array1<F>,
    /// `d x 2d`: own embedding columns followed by aggregate columns.
    pub w_upd: Array2<F>,
    pub b_upd: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub dims: GnnDims,
    /// Input lift `d x 1`, stored as a vector.
    pub w_in: Array1<F>,
    pub b_in: Array1<F>,
    pub layers: Vec<LayerParams<F>>,
    /// Per-node scalar head `1 x d`.
    pub w_out: Array1<F>,
    pub b_out: Array1<F>,
    /// Readout `C x M` over the concatenated node scalars.
    pub w_read: Array2<F>,
    pub b_read: Array1<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(dims: GnnDims) -> Self {
        let d = dims.hidden;
        Self {
            dims,
            w_in: Array1::zeros(d),
            b_in: Array1::zeros(d),
            layers: (0..dims.layers)
                .map(|_| LayerParams {
                    w_msg: Array2::zeros((d, d + 1)),
                    b_msg: Array1::zeros(d),
                    w_upd: Array2::zeros((d, 2 * d)),
                    b_upd: Array1::zeros(d),
                })
                .collect(),
            w_out: Array1::zeros(d),
            b_out: Array1::zeros(1),
            w_read: Array2::zeros((dims.n_drugs, dims.n_events)),
            b_read: Array1::zeros(dims.n_drugs),
        }
    }

    /// Glorot-uniform weights and `±1/sqrt(fan_in)` biases from `seed`.
    ///
    /// Nonzero biases matter here: with zero biases the lift and update are
    /// positively homogeneous in the node value, so after normalization an
    /// isolated node looks the same whether its event is present or absent.
    pub fn init(dims: GnnDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.hidden;
        let mut p = Self::zeros(dims);
        p.w_in = glorot::<F>(&mut rng, d, 1).into_shape_with_order(d).unwrap();
        p.b_in = bias_init(&mut rng, d, 1);
        for layer in &mut p.layers {
            layer.w_msg = glorot(&mut rng, d, d + 1);
            layer.b_msg = bias_init(&mut rng, d, d + 1);
            layer.w_upd = glorot(&mut rng, d, 2 * d);
            layer.b_upd = bias_init(&mut rng, d, 2 * d);
        }
        p.w_out = glorot::<F>(&mut rng, 1, d).into_shape_with_order(d).unwrap();
        p.b_out = bias_init(&mut rng, 1, d);
        p.w_read = glorot(&mut rng, dims.n_drugs, dims.n_events);
        p.b_read = bias_init(&mut rng, dims.n_drugs, dims.n_events);
        p
    }

    /// Fails unless every tensor matches `dims`.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = Self::zeros(self.dims);
        let got: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        let want: Vec<usize> = expected.tensors().iter().map(|t| t.len()).collect();
        if got != want
            || self.w_read.dim() != expected.w_read.dim()
            || self
                .layers
                .iter()
                .any(|l| l.w_msg.dim() != (self.dims.hidden, self.dims.hidden + 1))
        {
            return Err(Error::ShapeMismatch(format!(
                "parameters do not match dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let c1 = |a: &Array1<F>| a.mapv(|x| G::of(x.as_f64()));
        let c2 = |a: &Array2<F>| a.mapv(|x| G::of(x.as_f64()));
        ModelParams {
            dims: self.dims,
            w_in: c1(&self.w_in),
            b_in: c1(&self.b_in),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_msg: c2(&l.w_msg),
                    b_msg: c1(&l.b_msg),
                    w_upd: c2(&l.w_upd),
                    b_upd: c1(&l.b_upd),
                })
                .collect(),
            w_out: c1(&self.w_out),
            b_out: c1(&self.b_out),
            w_read: c2(&self.w_read),
            b_read: c1(&self.b_read),
        }
    }
}

impl<F: Scalar> ParamSet<F> for ModelParams<F> {
    fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["w_in".to_string(), "b_in".to_string()];
        for k in 1..=self.layers.len() {
            names.push(format!("w_msg{k}"));
            names.push(format!("b_msg{k}"));
            names.push(format!("w_upd{k}"));
            names.push(format!("b_upd{k}"));
        }
        names.extend(["w_out", "b_out", "w_read", "b_read"].map(String::from));
        names
    }

    fn tensors(&self) -> Vec<&[F]> {
        let mut out = vec![slice1(&self.w_in), slice1(&self.b_in)];
        for l in &self.layers {
            out.push(slice2(&l.w_msg));
            out.push(slice1(&l.b_msg));
            out.push(slice2(&l.w_upd));
            out.push(slice1(&l.b_upd));
        }
        out.push(slice1(&self.w_out));
        out.push(slice1(&self.b_out));
        out.push(slice2(&self.w_read));
        out.push(slice1(&self.b_read));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = vec![slice1_mut(&mut self.w_in), slice1_mut(&mut self.b_in)];
        for l in &mut self.layers {
            out.push(slice2_mut(&mut l.w_msg));
            out.push(slice1_mut(&mut l.b_msg));
            out.push(slice2_mut(&mut l.w_upd));
            out.push(slice1_mut(&mut l.b_upd));
        }
        out.push(slice1_mut(&mut self.w_out));
        out.push(slice1_mut(&mut self.b_out));
        out.push(slice2_mut(&mut self.w_read));
        out.push(slice1_mut(&mut self.b_read));
        out
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }
}
