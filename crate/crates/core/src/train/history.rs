//! Record of past update cells for backpropagation across batch boundaries.
//!
//! Every processed interaction appends its cell inputs and outputs. Given
//! gradients on the embeddings entering the current batch, [`Tape::backprop`]
//! walks the record backwards: an entity's adjoint is pushed through the cell
//! that produced its current value, then handed on to that cell's inputs.
//! Each cell is replayed with the recurrent weights that were live when it
//! ran.

use crate::model::{ModelParams, StepTrace};
use crate::numkit::Mat;
use crate::train::backward::{backprop_cells, CellIo, CellWeights};

#[derive(Debug, Clone)]
struct Weights {
    w1u: Mat,
    w2u: Mat,
    w1i: Mat,
    w2i: Mat,
}

#[derive(Debug, Clone)]
struct Entry {
    weights: usize,
    user: usize,
    item: usize,
    features: Vec<f64>,
    delta_u: f64,
    delta_i: f64,
    u_prev: Vec<f64>,
    i_prev: Vec<f64>,
    u_new: Vec<f64>,
    i_new: Vec<f64>,
}

/// Seed gradient on an embedding entering the current batch.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Seed<'a> {
    User(usize, &'a [f64]),
    Item(usize, &'a [f64]),
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tape {
    weights: Vec<Weights>,
    entries: Vec<Entry>,
}

impl Tape {
    /// Snapshots the recurrent weights used by the cells recorded next.
    pub(crate) fn begin_batch(&mut self, p: &ModelParams) {
        self.weights.push(Weights {
            w1u: p.w1u.clone(),
            w2u: p.w2u.clone(),
            w1i: p.w1i.clone(),
            w2i: p.w2i.clone(),
        });
    }

    pub(crate) fn record(&mut self, t: &StepTrace) {
        debug_assert!(!self.weights.is_empty(), "begin_batch first");
        self.entries.push(Entry {
            weights: self.weights.len() - 1,
            user: t.user,
            item: t.item,
            features: t.features.clone(),
            delta_u: t.delta_u,
            delta_i: t.delta_i,
            u_prev: t.u_prev.clone(),
            i_prev: t.i_prev.clone(),
            u_new: t.u_new.clone(),
            i_new: t.i_new.clone(),
        });
    }

    pub(crate) fn len(&self) -> usize {
        self.entries.len()
    }

    /// Propagates `seeds` through every recorded cell, adding weight
    /// gradients into `g`.
    pub(crate) fn backprop(&self, seeds: &[Seed<'_>], g: &mut ModelParams) {
        let n = g.dims.n;
        let mut adj_user = Mat::zeros(g.dims.num_users, n);
        let mut adj_item = Mat::zeros(g.dims.num_items, n);
        let mut any = false;
        for s in seeds {
            let (row, grad) = match *s {
                Seed::User(u, v) => (adj_user.row_mut(u), v),
                Seed::Item(i, v) => (adj_item.row_mut(i), v),
            };
            for (a, b) in row.iter_mut().zip(grad) {
                *a += b;
                any |= *b != 0.0;
            }
        }
        if !any {
            return;
        }
        let mut d_u = vec![0.0; n];
        let mut d_i = vec![0.0; n];
        for e in self.entries.iter().rev() {
            let du_new = adj_user.row(e.user);
            let di_new = adj_item.row(e.item);
            if du_new.iter().chain(di_new).all(|&v| v == 0.0) {
                continue;
            }
            d_u.fill(0.0);
            d_i.fill(0.0);
            let w = &self.weights[e.weights];
            let cw = CellWeights {
                w1u: &w.w1u,
                w2u: &w.w2u,
                w1i: &w.w1i,
                w2i: &w.w2i,
            };
            let io = CellIo {
                u_prev: &e.u_prev,
                i_prev: &e.i_prev,
                features: &e.features,
                delta_u: e.delta_u,
                delta_i: e.delta_i,
                u_new: &e.u_new,
                i_new: &e.i_new,
            };
            let (du_new, di_new) = (du_new.to_vec(), di_new.to_vec());
            backprop_cells(cw, &io, &du_new, &di_new, g, &mut d_u, &mut d_i);
            adj_user.row_mut(e.user).copy_from_slice(&d_u);
            adj_item.row_mut(e.item).copy_from_slice(&d_i);
        }
    }
}
