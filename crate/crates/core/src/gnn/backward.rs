use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use super::{ForwardCache, ModelParams};
use crate::error::{Error, Result};
use crate::graph::PatientGraph;
use crate::nn::{bce_logit_grad, ParamSet};
use crate::scalar::Scalar;

/// Gradient of the mean BCE loss for one graph.
pub fn backward<F: Scalar>(
    graph: &PatientGraph,
    params: &ModelParams<F>,
    cache: &ForwardCache<F>,
    labels: &[u8],
) -> Result<ModelParams<F>> {
    if labels.len() != params.dims.n_drugs {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} drugs",
            labels.len(),
            params.dims.n_drugs
        )));
    }
    let probs = cache.probs.as_slice().expect("standard layout");
    let dlogits = Array1::from(bce_logit_grad(probs, labels));
    let mut grads = params.zeros_like();
    backward_from_logits(graph, params, cache, &dlogits, &mut grads)?;
    Ok(grads)
}

/// Accumulates into `grads` the parameter gradient implied by `dlogits`, the
/// loss gradient at the readout logits. The map is linear in `dlogits`, so
/// rows sharing one forward pass may pass the sum of their logit gradients.
pub fn backward_from_logits<F: Scalar>(
    graph: &PatientGraph,
    params: &ModelParams<F>,
    cache: &ForwardCache<F>,
    dlogits: &Array1<F>,
    grads: &mut ModelParams<F>,
) -> Result<()> {
    let dims = params.dims;
    let d = dims.hidden;
    let m = dims.n_events;
    if cache.h.len() != dims.layers + 1
        || cache.z.len() != m
        || dlogits.len() != dims.n_drugs
        || graph.n_nodes() != m
    {
        return Err(Error::ShapeMismatch(
            "forward cache does not match parameters".into(),
        ));
    }
    let one = F::one();

    // readout
    for (c, &g) in dlogits.iter().enumerate() {
        grads.b_read[c] += g;
        let mut row = grads.w_read.row_mut(c);
        row.scaled_add(g, &cache.z);
    }
    let dz = params.w_read.t().dot(dlogits);

    // per-node scalar head
    let h_last = &cache.h[dims.layers];
    grads.w_out += &h_last.t().dot(&dz);
    grads.b_out[0] += dz.sum();
    let mut dh = Array2::<F>::zeros((m, d));
    for (v, mut row) in dh.axis_iter_mut(Axis(0)).enumerate() {
        row.scaled_add(dz[v], &params.w_out);
    }

    let edges = &*graph.edges;
    for k in (0..dims.layers).rev() {
        let layer = &params.layers[k];
        let lc = &cache.layers[k];
        let h_prev = &cache.h[k];
        let h_out = &cache.h[k + 1];

        // through normalization and relu
        let mut du = Array2::<F>::zeros((m, d));
        for v in 0..m {
            let n = lc.norms[v];
            if n <= F::zero() {
                continue;
            }
            let hv = h_out.row(v);
            let gv = dh.row(v);
            let proj = hv.dot(&gv);
            let mut out = du.row_mut(v);
            for c in 0..d {
                if lc.upd_pre[[v, c]] > F::zero() {
                    out[c] = (gv[c] - hv[c] * proj) / n;
                }
            }
        }

        let gl = &mut grads.layers[k];
        general_mat_mul(one, &du.t(), h_prev, one, &mut gl.w_upd.slice_mut(s![.., ..d]));
        general_mat_mul(one, &du.t(), &lc.agg, one, &mut gl.w_upd.slice_mut(s![.., d..]));
        gl.b_upd += &du.sum_axis(Axis(0));

        let mut dh_prev = du.dot(&layer.w_upd.slice(s![.., ..d]));
        let dagg = du.dot(&layer.w_upd.slice(s![.., d..]));

        // through mean aggregation and message relu
        let mut dproj = Array2::<F>::zeros((m, d));
        let mut d_edge_col = vec![F::zero(); d];
        let mut d_bias = vec![F::zero(); d];
        {
            let q_s = lc.msg_pre.as_slice().expect("standard layout");
            let dagg_s = dagg.as_slice().expect("standard layout");
            let dproj_s = dproj.as_slice_mut().expect("standard layout");
            let mut e_idx = 0;
            for dst in 0..m {
                let (srcs, weights) = edges.incoming(dst);
                if srcs.is_empty() {
                    continue;
                }
                let inv = one / F::of(srcs.len() as f64);
                let ga = &dagg_s[dst * d..(dst + 1) * d];
                for (&src, &w) in srcs.iter().zip(weights) {
                    let w = F::of(w);
                    let q = &q_s[e_idx * d..(e_idx + 1) * d];
                    let dp = &mut dproj_s[src as usize * d..(src as usize + 1) * d];
                    for c in 0..d {
                        if q[c] > F::zero() {
                            let g = ga[c] * inv;
                            dp[c] += g;
                            d_edge_col[c] += g * w;
                            d_bias[c] += g;
                        }
                    }
                    e_idx += 1;
                }
            }
        }
        for c in 0..d {
            gl.w_msg[[c, d]] += d_edge_col[c];
            gl.b_msg[c] += d_bias[c];
        }
        general_mat_mul(one, &dproj.t(), h_prev, one, &mut gl.w_msg.slice_mut(s![.., ..d]));
        general_mat_mul(one, &dproj, &layer.w_msg.slice(s![.., ..d]), one, &mut dh_prev);
        dh = dh_prev;
    }

    // input lift
    for v in 0..m {
        let x = cache.node_values[v];
        for c in 0..d {
            if cache.lift_pre[[v, c]] > F::zero() {
                let g = dh[[v, c]];
                grads.w_in[c] += g * x;
                grads.b_in[c] += g;
            }
        }
    }
    Ok(())
}
