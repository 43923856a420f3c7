//! Frozen-parameter passes over an interaction stream.
//!
//! [`forward_sequential`] processes one interaction at a time with
//! matrix–vector products. [`forward_batched`] walks a [`BatchPlan`]: every
//! member of a batch reads the state as it was when the batch started, the
//! batch is evaluated with matrix–matrix products (optionally split across a
//! thread pool), and the new embeddings are written back afterwards. Because
//! members of a batch touch disjoint users and items, both routes leave the
//! same [`EmbeddingState`] behind.

use std::ops::Range;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::data::{Dataset, DeltaTable};
use crate::model::{
    cross_entropy, sq_dist_to_item, step_forward, EmbeddingState, LossComponents, LossWeights, ModelParams,
    StepInput,
};
use crate::numkit::{gemm_nt, sigmoid_scalar, sq_dist};
use crate::tbatch::BatchPlan;

/// Builds the step input of interaction `seq` against the current state.
pub fn step_input<'a>(ds: &'a Dataset, deltas: &DeltaTable, state: &EmbeddingState, seq: usize) -> StepInput<'a> {
    let x = &ds.interactions[seq];
    StepInput {
        user: x.user,
        item: x.item,
        prev_item: state.prev_item[x.user],
        features: &x.features,
        delta_u: deltas.delta_u[seq],
        delta_i: deltas.delta_i[seq],
        label: x.state_label,
    }
}

/// One interaction at a time, in time order.
pub fn forward_sequential(
    p: &ModelParams,
    state: &mut EmbeddingState,
    ds: &Dataset,
    deltas: &DeltaTable,
    range: Range<usize>,
    w: &LossWeights,
) -> LossComponents {
    let mut total = LossComponents::default();
    for seq in range {
        let t = step_forward(p, state, step_input(ds, deltas, state, seq), w);
        state.commit(t.user, t.item, &t.u_new, &t.i_new, ds.interactions[seq].timestamp);
        total.add(&t.loss);
    }
    total
}

/// Batch by batch following `plan`. With a pool, each batch is split into
/// row blocks evaluated concurrently.
pub fn forward_batched(
    p: &ModelParams,
    state: &mut EmbeddingState,
    ds: &Dataset,
    deltas: &DeltaTable,
    plan: &BatchPlan,
    w: &LossWeights,
    pool: Option<&ThreadPool>,
) -> LossComponents {
    let n = p.dims.n;
    let mut total = LossComponents::default();
    for batch in &plan.batches {
        let blocks: Vec<BlockOutput> = match pool {
            Some(pool) if batch.len() >= 2 * MIN_BLOCK => {
                let per = batch.len().div_ceil(pool.current_num_threads()).max(MIN_BLOCK);
                let snapshot: &EmbeddingState = state;
                pool.install(|| {
                    batch
                        .par_chunks(per)
                        .map(|chunk| forward_block(p, snapshot, ds, deltas, chunk, w))
                        .collect()
                })
            }
            _ => vec![forward_block(p, state, ds, deltas, batch, w)],
        };
        let mut members = batch.iter();
        for block in &blocks {
            total.add(&block.loss);
            for (r, &seq) in members.by_ref().take(block.rows).enumerate() {
                let x = &ds.interactions[seq];
                state.commit(
                    x.user,
                    x.item,
                    &block.u_new[r * n..(r + 1) * n],
                    &block.i_new[r * n..(r + 1) * n],
                    x.timestamp,
                );
            }
        }
    }
    total
}

const MIN_BLOCK: usize = 8;

struct BlockOutput {
    rows: usize,
    u_new: Vec<f64>,
    i_new: Vec<f64>,
    loss: LossComponents,
}

/// Evaluates a block of independent interactions with matrix–matrix products.
fn forward_block(
    p: &ModelParams,
    state: &EmbeddingState,
    ds: &Dataset,
    deltas: &DeltaTable,
    members: &[usize],
    w: &LossWeights,
) -> BlockOutput {
    let b = members.len();
    let n = p.dims.n;
    let f = p.dims.feature_dim;
    let di = p.dims.num_items;
    let d = p.dims.item_vec_len();

    let mut u0 = Vec::with_capacity(b * n);
    let mut i0 = Vec::with_capacity(b * n);
    let mut kd = Vec::with_capacity(b * n);
    let mut feats = Vec::with_capacity(b * f);
    for &seq in members {
        let x = &ds.interactions[seq];
        u0.extend_from_slice(state.user_dyn.row(x.user));
        i0.extend_from_slice(state.item_dyn.row(x.item));
        match state.prev_item[x.user] {
            Some(k) => kd.extend_from_slice(state.item_dyn.row(k)),
            None => kd.extend(std::iter::repeat_n(0.0, n)),
        }
        feats.extend_from_slice(&x.features);
    }

    let mut zu = vec![0.0; b * n];
    gemm_nt(&u0, b, &p.w1u, 0.0, &mut zu);
    gemm_nt(&i0, b, &p.w2u, 1.0, &mut zu);
    gemm_nt(&feats, b, &p.w3u, 1.0, &mut zu);
    let mut zi = vec![0.0; b * n];
    gemm_nt(&i0, b, &p.w1i, 0.0, &mut zi);
    gemm_nt(&u0, b, &p.w2i, 1.0, &mut zi);
    gemm_nt(&feats, b, &p.w3i, 1.0, &mut zi);

    let mut uh = u0.clone();
    for (r, &seq) in members.iter().enumerate() {
        let (du, dii) = (deltas.delta_u[seq], deltas.delta_i[seq]);
        for k in 0..n {
            zu[r * n + k] = sigmoid_scalar(zu[r * n + k] + p.w4u.get(k, 0) * du);
            zi[r * n + k] = sigmoid_scalar(zi[r * n + k] + p.w4i.get(k, 0) * dii);
            uh[r * n + k] *= 1.0 + p.wp.get(k, 0) * du;
        }
    }

    let mut j = vec![0.0; b * d];
    gemm_nt(&uh, b, &p.pw1, 0.0, &mut j);
    gemm_nt(&kd, b, &p.pw3, 1.0, &mut j);

    let mut loss = LossComponents::default();
    for (r, &seq) in members.iter().enumerate() {
        let x = &ds.interactions[seq];
        let prev = state.prev_item[x.user];
        let row = &mut j[r * d..(r + 1) * d];
        for (k, v) in row.iter_mut().enumerate() {
            *v += p.bias.get(k, 0) + p.pw2.get(k, x.user);
            if let Some(pi) = prev {
                *v += p.pw4.get(k, pi);
            }
        }
        let ip = &i0[r * n..(r + 1) * n];
        let un = &zu[r * n..(r + 1) * n];
        let inn = &zi[r * n..(r + 1) * n];
        let prediction = sq_dist_to_item(row, di, x.item, ip).sqrt();
        let user_reg = sq_dist(un, &u0[r * n..(r + 1) * n]).sqrt();
        let item_reg = sq_dist(inn, ip).sqrt();
        let mut c = LossComponents {
            prediction,
            user_reg,
            item_reg,
            state_ce: 0.0,
            total: prediction + w.lambda_u * user_reg + w.lambda_i * item_reg,
        };
        if w.state_scale != 0.0 {
            let prob = crate::model::predict_state_change(un, x.user, p);
            c.state_ce = cross_entropy(prob, x.state_label);
            c.total += w.state_scale * c.state_ce;
        }
        loss.add(&c);
    }
    BlockOutput {
        rows: b,
        u_new: zu,
        i_new: zi,
        loss,
    }
}
