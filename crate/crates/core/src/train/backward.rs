//! Hand-derived gradients of one interaction's loss.
//!
//! The graph of a single interaction:
//!
//! ```text
//! û  = (1 + Wp·Δu) ⊙ u
//! j̃  = W1·û + W2[:, user] + W3·k + W4[:, prev] + B
//! u' = σ(W1u·u + W2u·i + W3u·f + W4u·Δu)
//! i' = σ(W1i·i + W2i·u + W3i·f + W4i·Δi)
//! L  = ‖j̃ − [e_item, i]‖ + λU‖u' − u‖ + λI‖i' − i‖ + s·CE(σ(θ·[u' ‖ e_user] + b), y)
//! ```
//!
//! `u`, `i` and `k` are the embeddings entering the interaction. Their
//! gradients are returned so a caller can keep propagating into earlier
//! interactions. The derivative of a norm at zero is taken as zero.

use crate::model::{LossWeights, ModelParams, StepTrace};
use crate::numkit::{matvec_t_acc, norm, Mat};

/// Gradients with respect to the embeddings that entered an interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    /// Previous item's dynamic embedding; zero when the user had no history.
    pub prev_item: Vec<f64>,
}

/// The recurrent weights needed to push gradients through an update cell.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellWeights<'a> {
    pub w1u: &'a Mat,
    pub w2u: &'a Mat,
    pub w1i: &'a Mat,
    pub w2i: &'a Mat,
}

impl<'a> CellWeights<'a> {
    pub(crate) fn of(p: &'a ModelParams) -> Self {
        CellWeights {
            w1u: &p.w1u,
            w2u: &p.w2u,
            w1i: &p.w1i,
            w2i: &p.w2i,
        }
    }
}

/// Inputs and outputs of one update cell pair.
pub(crate) struct CellIo<'a> {
    pub u_prev: &'a [f64],
    pub i_prev: &'a [f64],
    pub features: &'a [f64],
    pub delta_u: f64,
    pub delta_i: f64,
    pub u_new: &'a [f64],
    pub i_new: &'a [f64],
}

/// Back through both σ-cells given `∂L/∂u'` and `∂L/∂i'`. Weight gradients go
/// to `g`; input gradients are added to `d_u` and `d_i`.
pub(crate) fn backprop_cells(
    w: CellWeights<'_>,
    io: &CellIo<'_>,
    d_un: &[f64],
    d_in: &[f64],
    g: &mut ModelParams,
    d_u: &mut [f64],
    d_i: &mut [f64],
) {
    let gz_u: Vec<f64> = d_un
        .iter()
        .zip(io.u_new)
        .map(|(d, s)| d * s * (1.0 - s))
        .collect();
    let gz_i: Vec<f64> = d_in
        .iter()
        .zip(io.i_new)
        .map(|(d, s)| d * s * (1.0 - s))
        .collect();

    if gz_u.iter().any(|&v| v != 0.0) {
        g.w1u.add_outer(&gz_u, io.u_prev);
        g.w2u.add_outer(&gz_u, io.i_prev);
        g.w3u.add_outer(&gz_u, io.features);
        g.w4u.add_to_column(0, io.delta_u, &gz_u);
        matvec_t_acc(w.w1u, &gz_u, d_u);
        matvec_t_acc(w.w2u, &gz_u, d_i);
    }
    if gz_i.iter().any(|&v| v != 0.0) {
        g.w1i.add_outer(&gz_i, io.i_prev);
        g.w2i.add_outer(&gz_i, io.u_prev);
        g.w3i.add_outer(&gz_i, io.features);
        g.w4i.add_to_column(0, io.delta_i, &gz_i);
        matvec_t_acc(w.w1i, &gz_i, d_i);
        matvec_t_acc(w.w2i, &gz_i, d_u);
    }
}

/// Adds the gradient of `t.loss.total` with respect to every tensor of `p`
/// into `g` and returns the gradients with respect to the entering
/// embeddings.
pub fn backward_step(t: &StepTrace, p: &ModelParams, w: &LossWeights, g: &mut ModelParams) -> InputGrads {
    let n = p.dims.n;
    let di = p.dims.num_items;
    let mut d_u = vec![0.0; n];
    let mut d_i = vec![0.0; n];
    let mut d_k = vec![0.0; n];

    // prediction term
    let mut e = t.j_pred.clone();
    e[t.item] -= 1.0;
    for (r, v) in e[di..].iter_mut().zip(&t.i_prev) {
        *r -= v;
    }
    let dist = norm(&e);
    if dist > 0.0 {
        e.iter_mut().for_each(|v| *v /= dist);
        g.bias.add_to_column(0, 1.0, &e);
        g.pw1.add_outer(&e, &t.u_proj);
        g.pw2.add_to_column(t.user, 1.0, &e);
        g.pw3.add_outer(&e, &t.k_dyn);
        if let Some(k) = t.prev_item {
            g.pw4.add_to_column(k, 1.0, &e);
            matvec_t_acc(&p.pw3, &e, &mut d_k);
        }
        // the target's dynamic part is the entering item embedding
        for (a, b) in d_i.iter_mut().zip(&e[di..]) {
            *a -= b;
        }
        let mut d_proj = vec![0.0; n];
        matvec_t_acc(&p.pw1, &e, &mut d_proj);
        for k in 0..n {
            g.wp.as_mut_slice()[k] += d_proj[k] * t.u_prev[k] * t.delta_u;
            d_u[k] += d_proj[k] * (1.0 + p.wp.get(k, 0) * t.delta_u);
        }
    }

    // state-change classifier
    let mut d_un = vec![0.0; n];
    if w.state_scale != 0.0 {
        let gs = w.state_scale * (t.state_prob - t.label as f64);
        g.theta_b.as_mut_slice()[0] += gs;
        let gw = g.theta_w.as_mut_slice();
        for (gk, &uk) in gw[..n].iter_mut().zip(&t.u_new) {
            *gk += gs * uk;
        }
        if p.state_uses_static {
            gw[n + t.user] += gs;
        }
        for (d, &th) in d_un.iter_mut().zip(&p.theta_w.row(0)[..n]) {
            *d += gs * th;
        }
    }

    // regularizers
    let mut d_in = vec![0.0; n];
    reg_grad(w.lambda_u, &t.u_new, &t.u_prev, &mut d_un, &mut d_u);
    reg_grad(w.lambda_i, &t.i_new, &t.i_prev, &mut d_in, &mut d_i);

    let io = CellIo {
        u_prev: &t.u_prev,
        i_prev: &t.i_prev,
        features: &t.features,
        delta_u: t.delta_u,
        delta_i: t.delta_i,
        u_new: &t.u_new,
        i_new: &t.i_new,
    };
    backprop_cells(CellWeights::of(p), &io, &d_un, &d_in, g, &mut d_u, &mut d_i);

    InputGrads {
        user: d_u,
        item: d_i,
        prev_item: d_k,
    }
}

/// `λ‖new − old‖`: adds `+r` to `d_new` and `−r` to `d_old`, `r = λ(new − old)/‖new − old‖`.
fn reg_grad(lambda: f64, new: &[f64], old: &[f64], d_new: &mut [f64], d_old: &mut [f64]) {
    if lambda == 0.0 {
        return;
    }
    let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    let len = norm(&diff);
    if len == 0.0 {
        return;
    }
    for k in 0..diff.len() {
        let r = lambda * diff[k] / len;
        d_new[k] += r;
        d_old[k] -= r;
    }
}
