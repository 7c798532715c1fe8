//! Pieces shared by every trainable model: parameter-set plumbing, seeded
//! Glorot initialization, activations and the multi-label BCE loss.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Probability clip used by [`bce_loss`].
pub const PROB_CLIP: f64 = 1e-12;

/// A fixed, ordered list of named parameter tensors.
///
/// The order is the serialization order in checkpoints and the pairing order
/// for optimizer moments.
pub trait ParamSet<F: Scalar>: Clone {
    fn tensor_names(&self) -> Vec<String>;

    fn tensors(&self) -> Vec<&[F]>;

    fn tensors_mut(&mut self) -> Vec<&mut [F]>;

    /// Same shapes, all entries zero.
    fn zeros_like(&self) -> Self;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fill(&mut self, value: F) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: F) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn slice1<F>(a: &Array1<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice1_mut<F>(a: &mut Array1<F>) -> &mut [F] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn slice2<F>(a: &Array2<F>) -> &[F] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice2_mut<F>(a: &mut Array2<F>) -> &mut [F] {
    a.as_slice_mut().expect("standard layout")
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, shape `(fan_out, fan_in)`.
pub fn glorot<F: Scalar>(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> Array2<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_out, fan_in), || {
        F::of(rng.random_range(-limit..limit))
    })
}

/// Uniform in `±1 / sqrt(fan_in)`, the usual dense-layer bias default.
pub fn bias_init<F: Scalar>(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Array1<F> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || F::of(rng.random_range(-limit..limit)))
}

#[inline]
pub fn relu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Mean binary cross-entropy over the drugs, probabilities clipped at
/// [`PROB_CLIP`].
pub fn bce_loss<F: Scalar>(probs: &[F], labels: &[u8]) -> F {
    assert_eq!(probs.len(), labels.len(), "probs/labels length mismatch");
    if probs.is_empty() {
        return F::zero();
    }
    let clip = F::of(PROB_CLIP);
    let total: F = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if y != 0 {
                -(p.max(clip)).ln()
            } else {
                -((F::one() - p).max(clip)).ln()
            }
        })
        .sum();
    total / F::of(probs.len() as f64)
}

/// Derivative of [`bce_loss`] with respect to the logits. Terms sitting in
/// the clipped region contribute zero.
pub fn bce_logit_grad<F: Scalar>(probs: &[F], labels: &[u8]) -> Vec<F> {
    let clip = F::of(PROB_CLIP);
    let c = F::of(probs.len() as f64);
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let g = if y != 0 {
                if p > clip {
                    p - F::one()
                } else {
                    F::zero()
                }
            } else if F::one() - p > clip {
                p
            } else {
                F::zero()
            };
            g / c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let perfect: f64 = bce_loss(&[1.0, 0.0], &[1, 0]);
        assert!(perfect.abs() < 1e-12);
        let uniform: f64 = bce_loss(&[0.5, 0.5, 0.5], &[1, 0, 1]);
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-15);
        let v: f64 = bce_loss(&[0.9, 0.2], &[1, 0]);
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.1643).abs() < 1e-4);
    }

    #[test]
    fn bce_grad_matches_finite_difference() {
        let logits = [0.3f64, -1.2, 2.0];
        let labels = [1u8, 0, 0];
        let loss = |z: &[f64]| {
            let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            bce_loss(&p, &labels)
        };
        let p: Vec<f64> = logits.iter().map(|&v| sigmoid(v)).collect();
        let g = bce_logit_grad(&p, &labels);
        for k in 0..3 {
            let mut hi = logits;
            let mut lo = logits;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let fd = (loss(&hi) - loss(&lo)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
    }
}
