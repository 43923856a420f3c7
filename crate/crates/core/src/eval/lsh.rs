//! Random-hyperplane LSH over item vectors `[one_hot(m), dyn_m]`.
//!
//! Planes are centered on the item centroid at build time. A query probes its
//! own bucket and every bucket one bit away in each table, then ranks the
//! union of candidates exactly.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::eval::item_distances;
use crate::numkit::{dot, sq_dist, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct LshParams {
    pub tables: usize,
    /// Hyperplanes per table (signature bits), 1..=64.
    pub planes: usize,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams {
            tables: 4,
            planes: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Table {
    /// `planes × (num_items + n)`.
    planes: Mat,
    /// `plane · centroid`, one per plane.
    offsets: Vec<f64>,
    buckets: HashMap<u64, Vec<usize>>,
    signature_of: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct LshIndex {
    num_items: usize,
    tables: Vec<Table>,
}

impl Table {
    fn signature(&self, static_part: Option<&[f64]>, item: Option<usize>, dynp: &[f64]) -> u64 {
        let ni = self.signature_of.len();
        let mut sig = 0u64;
        for h in 0..self.planes.rows() {
            let row = self.planes.row(h);
            let mut s = dot(&row[ni..], dynp) - self.offsets[h];
            if let Some(k) = item {
                s += row[k];
            }
            if let Some(st) = static_part {
                s += dot(&row[..ni], st);
            }
            if s > 0.0 {
                sig |= 1 << h;
            }
        }
        sig
    }
}

/// Hashes every item of `item_dyn` into `params.tables` tables.
pub fn lsh_build(item_dyn: &Mat, params: &LshParams) -> Result<LshIndex> {
    if params.planes == 0 || params.planes > 64 {
        return Err(Error::Config(format!(
            "LSH needs between 1 and 64 planes per table, got {}",
            params.planes
        )));
    }
    if params.tables == 0 {
        return Err(Error::Config("LSH needs at least one table".into()));
    }
    let (ni, n) = item_dyn.shape();
    let dim = ni + n;
    let mut centroid = vec![1.0 / ni.max(1) as f64; dim];
    for c in 0..n {
        centroid[ni + c] = (0..ni).map(|m| item_dyn.get(m, c)).sum::<f64>() / ni.max(1) as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let tables = (0..params.tables)
        .map(|_| {
            let planes = Mat::from_fn(params.planes, dim, |_, _| StandardNormal.sample(&mut rng));
            let offsets = (0..params.planes).map(|h| dot(planes.row(h), &centroid)).collect();
            let mut t = Table {
                planes,
                offsets,
                buckets: HashMap::new(),
                signature_of: vec![0; ni],
            };
            for m in 0..ni {
                let sig = t.signature(None, Some(m), item_dyn.row(m));
                t.signature_of[m] = sig;
                t.buckets.entry(sig).or_default().push(m);
            }
            t
        })
        .collect();
    Ok(LshIndex {
        num_items: ni,
        tables,
    })
}

impl LshIndex {
    /// Re-hashes `item` after its dynamic embedding changed.
    pub fn update_item(&mut self, item: usize, dynp: &[f64]) {
        for t in &mut self.tables {
            let new = t.signature(None, Some(item), dynp);
            let old = t.signature_of[item];
            if new == old {
                continue;
            }
            if let Some(b) = t.buckets.get_mut(&old) {
                b.retain(|&m| m != item);
                if b.is_empty() {
                    t.buckets.remove(&old);
                }
            }
            t.buckets.entry(new).or_default().push(item);
            t.signature_of[item] = new;
        }
    }

    /// Items sharing a probed bucket with the query in any table.
    pub fn candidates(&self, j_pred: &[f64]) -> Vec<usize> {
        let (stat, dynp) = j_pred.split_at(self.num_items);
        let mut seen = vec![false; self.num_items];
        let mut out = Vec::new();
        for t in &self.tables {
            let sig = t.signature(Some(stat), None, dynp);
            let probes = std::iter::once(sig).chain((0..t.planes.rows()).map(|h| sig ^ (1 << h)));
            for probe in probes {
                for &m in t.buckets.get(&probe).into_iter().flatten() {
                    if !seen[m] {
                        seen[m] = true;
                        out.push(m);
                    }
                }
            }
        }
        out
    }

    pub fn bucket_count(&self) -> usize {
        self.tables.iter().map(|t| t.buckets.len()).sum()
    }
}

/// Up to `k` candidates nearest to `j_pred`, exactly ranked.
pub fn lsh_query(index: &LshIndex, item_dyn: &Mat, j_pred: &[f64], k: usize) -> Vec<usize> {
    let ni = index.num_items;
    let (stat, dynp) = j_pred.split_at(ni);
    let base: f64 = stat.iter().map(|v| v * v).sum();
    let mut scored: Vec<(f64, usize)> = index
        .candidates(j_pred)
        .into_iter()
        .map(|m| (base - 2.0 * stat[m] + 1.0 + sq_dist(dynp, item_dyn.row(m)), m))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, m)| m).collect()
}

/// Exact top-`k` by brute force, for comparison.
pub fn exact_top_k(item_dyn: &Mat, j_pred: &[f64], k: usize) -> Vec<usize> {
    let d = item_distances(j_pred, item_dyn);
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
