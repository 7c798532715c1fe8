//! Bias-corrected Adam over any [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<F> {
    /// First moments, one vector per parameter tensor.
    pub m: Vec<Vec<F>>,
    /// Second moments.
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<P: ParamSet<F>>(params: &P) -> Self {
        let zeros: Vec<Vec<F>> = params
            .tensors()
            .iter()
            .map(|t| vec![F::zero(); t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

pub fn adam_step<F: Scalar, P: ParamSet<F>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<F>,
    lr: F,
) -> Result<()> {
    let names = grads.tensor_names();
    let grad_tensors = grads.tensors();
    for (name, g) in names.iter().zip(&grad_tensors) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: name.clone(),
            });
        }
    }
    if state.m.len() != grad_tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} tensors, model has {}",
            state.m.len(),
            grad_tensors.len()
        )));
    }

    state.step += 1;
    let (b1, b2, eps) = (F::of(BETA1), F::of(BETA2), F::of(EPSILON));
    let t = state.step as i32;
    let bc1 = F::one() - b1.powi(t);
    let bc2 = F::one() - b2.powi(t);

    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (F::one() - b1) * g[k];
            v[k] = b2 * v[k] + (F::one() - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{slice1, slice1_mut};
    use ndarray::Array1;

    #[derive(Clone)]
    struct Vector(Array1<f64>);

    impl ParamSet<f64> for Vector {
        fn tensor_names(&self) -> Vec<String> {
            vec!["v".into()]
        }
        fn tensors(&self) -> Vec<&[f64]> {
            vec![slice1(&self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![slice1_mut(&mut self.0)]
        }
        fn zeros_like(&self) -> Self {
            Vector(Array1::zeros(self.0.len()))
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Vector(Array1::from(vec![1.0, -2.0]));
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        assert_eq!(p.0.to_vec(), vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Vector(Array1::from(vec![0.0, 0.0, 0.0]));
        let g = Vector(Array1::from(vec![3.0, -0.01, 1e-3]));
        let mut s = AdamState::new(&p);
        let lr = 1e-4;
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        for (x, gk) in p.0.iter().zip(g.0.iter()) {
            // update = lr * g / (|g| + eps)
            let expected = -lr * gk / (gk.abs() + EPSILON);
            assert!((x - expected).abs() < 1e-15);
            assert!((x + lr * gk.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_calls_agree_and_nan_is_rejected() {
        let p0 = Vector(Array1::from(vec![0.5, 0.25]));
        let g = Vector(Array1::from(vec![0.1, -0.3]));
        let s0 = AdamState::new(&p0);
        let (mut p1, mut s1) = (p0.clone(), s0.clone());
        let (mut p2, mut s2) = (p0.clone(), s0.clone());
        adam_step(&mut p1, &g, &mut s1, 1e-2).unwrap();
        adam_step(&mut p2, &g, &mut s2, 1e-2).unwrap();
        assert_eq!(p1.0, p2.0);
        assert_eq!(s1, s2);

        let bad = Vector(Array1::from(vec![f64::NAN, 0.0]));
        assert!(matches!(
            adam_step(&mut p1, &bad, &mut s1, 1e-2),
            Err(Error::NonFiniteGradient { .. })
        ));
    }
}
