use ndarray::{s, Array1, Array2, Axis};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::graph::PatientGraph;
use crate::nn::{relu, sigmoid};
use crate::scalar::Scalar;

/// Activations of one message-passing layer.
#[derive(Debug, Clone)]
pub struct LayerCache<F> {
    /// Per-edge message pre-activations, in edge storage order (`E x d`).
    pub msg_pre: Array2<F>,
    /// Mean of incoming messages (`M x d`); zero rows for nodes without in-edges.
    pub agg: Array2<F>,
    /// Update pre-activations (`M x d`).
    pub upd_pre: Array2<F>,
    /// L2 norm of `relu(upd_pre)` per node.
    pub norms: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    pub node_values: Array1<F>,
    /// Input lift pre-activations (`M x d`).
    pub lift_pre: Array2<F>,
    /// `h[0]` is the lifted input, `h[k]` the normalized output of layer `k`.
    pub h: Vec<Array2<F>>,
    pub layers: Vec<LayerCache<F>>,
    /// Per-node output scalars, concatenated.
    pub z: Array1<F>,
    pub logits: Array1<F>,
    pub probs: Array1<F>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn probs_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.as_f64()).collect()
    }
}

fn check_finite<F: Scalar>(a: &Array2<F>, layer: usize) -> Result<()> {
    for (node, row) in a.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { layer, node });
        }
    }
    Ok(())
}

pub fn forward<F: Scalar>(
    graph: &PatientGraph,
    params: &ModelParams<F>,
) -> Result<(Array1<F>, ForwardCache<F>)> {
    let dims = params.dims;
    let d = dims.hidden;
    let m = graph.n_nodes();
    if m != dims.n_events || graph.edges.n_nodes() != m {
        return Err(Error::ShapeMismatch(format!(
            "graph has {m} nodes, model expects {}",
            dims.n_events
        )));
    }

    let values: Array1<F> = graph.node_values.iter().map(|&v| F::of(v)).collect();
    let mut lift_pre = Array2::<F>::zeros((m, d));
    for (v, mut row) in lift_pre.axis_iter_mut(Axis(0)).enumerate() {
        let x = values[v];
        for ((r, &w), &b) in row.iter_mut().zip(&params.w_in).zip(&params.b_in) {
            *r = w * x + b;
        }
    }
    let mut h = vec![lift_pre.mapv(relu)];
    check_finite(&h[0], 0)?;

    let edges = &*graph.edges;
    let n_edges = edges.len();
    let mut layers = Vec::with_capacity(dims.layers);

    for (k, layer) in params.layers.iter().enumerate() {
        let h_prev = &h[k];
        let w_src = layer.w_msg.slice(s![.., ..d]);
        let proj = h_prev.dot(&w_src.t());

        let w_edge: Vec<F> = layer.w_msg.column(d).to_vec();
        let bias = layer.b_msg.as_slice().expect("standard layout");
        let proj_s = proj.as_slice().expect("standard layout");

        let mut msg_pre = Array2::<F>::zeros((n_edges, d));
        let mut agg = Array2::<F>::zeros((m, d));
        {
            let msg_s = msg_pre.as_slice_mut().expect("standard layout");
            let agg_s = agg.as_slice_mut().expect("standard layout");
            let mut e_idx = 0;
            for dst in 0..m {
                let (srcs, weights) = edges.incoming(dst);
                if srcs.is_empty() {
                    continue;
                }
                let acc = &mut agg_s[dst * d..(dst + 1) * d];
                for (&src, &w) in srcs.iter().zip(weights) {
                    let w = F::of(w);
                    let p = &proj_s[src as usize * d..(src as usize + 1) * d];
                    let q = &mut msg_s[e_idx * d..(e_idx + 1) * d];
                    for c in 0..d {
                        let v = p[c] + w_edge[c] * w + bias[c];
                        q[c] = v;
                        acc[c] += relu(v);
                    }
                    e_idx += 1;
                }
                let inv = F::one() / F::of(srcs.len() as f64);
                for a in acc.iter_mut() {
                    *a *= inv;
                }
            }
        }

        let mut upd_pre = h_prev.dot(&layer.w_upd.slice(s![.., ..d]).t());
        upd_pre += &agg.dot(&layer.w_upd.slice(s![.., d..]).t());
        upd_pre += &layer.b_upd;

        let mut out = upd_pre.mapv(relu);
        let mut norms = Array1::<F>::zeros(m);
        for (v, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let n = row.iter().map(|&x| x * x).sum::<F>().sqrt();
            norms[v] = n;
            if n > F::zero() {
                row.mapv_inplace(|x| x / n);
            } else {
                row.fill(F::zero());
            }
        }
        check_finite(&out, k + 1)?;
        layers.push(LayerCache {
            msg_pre,
            agg,
            upd_pre,
            norms,
        });
        h.push(out);
    }

    let z = h[dims.layers].dot(&params.w_out) + params.b_out[0];
    let logits = params.w_read.dot(&z) + &params.b_read;
    let probs = logits.mapv(sigmoid);
    if let Some(node) = z.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            layer: dims.layers + 1,
            node,
        });
    }

    Ok((
        probs.clone(),
        ForwardCache {
            node_values: values,
            lift_pre,
            h,
            layers,
            z,
            logits,
            probs,
        },
    ))
}
