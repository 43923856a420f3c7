//! Ranking metrics for future-interaction prediction, AUC for state-change
//! prediction, and the sequential evaluation protocol.
//!
//! For every evaluated interaction the user is projected to the interaction
//! time, an item embedding is predicted, the true item is ranked against all
//! items by L2 distance, and only then is the update applied, so later
//! interactions see the evolved state. Parameters stay frozen.

mod lsh;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use lsh::{exact_top_k, lsh_build, lsh_query, LshIndex, LshParams};

use crate::data::{Dataset, DeltaTable};
use crate::error::{Error, Result};
use crate::forward::step_input;
use crate::model::{step_forward, EmbeddingState, LossWeights, ModelParams};
use crate::numkit::{sq_dist, Mat};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Interaction,
    StateChange,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interaction" => Ok(Task::Interaction),
            "state_change" | "state-change" => Ok(Task::StateChange),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Interaction => "interaction",
            Task::StateChange => "state_change",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub seq_id: usize,
    /// 1-based rank of the true item.
    pub rank: usize,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub task: Task,
    pub mrr: f64,
    pub recall_at_10: f64,
    /// Present when the range holds both labels.
    pub auc: Option<f64>,
    pub n_test_interactions: usize,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lsh_top1_agreement: Option<f64>,
}

impl MetricsReport {
    /// The metric used for model selection on this task.
    pub fn selection_metric(&self) -> Option<f64> {
        match self.task {
            Task::Interaction => Some(self.mrr),
            Task::StateChange => self.auc,
        }
    }
}

/// Squared distance from `j_pred` to every item's `[one_hot(m), dyn_m]`.
///
/// `‖j − [e_m, d_m]‖² = ‖j_s‖² − 2·j_s[m] + 1 + ‖j_d − d_m‖²`.
pub fn item_distances(j_pred: &[f64], item_dyn: &Mat) -> Vec<f64> {
    let num_items = item_dyn.rows();
    let (stat, dynp) = j_pred.split_at(num_items);
    let base: f64 = stat.iter().map(|v| v * v).sum();
    (0..num_items)
        .map(|m| base - 2.0 * stat[m] + 1.0 + sq_dist(dynp, item_dyn.row(m)))
        .collect()
}

/// Rank of `true_idx` given per-item distances. Items at the same distance as
/// the true item share a block, and the true item takes the mean position of
/// that block rounded up: `less + ⌈(1 + ties) / 2⌉`.
pub fn rank_from_distances(dist: &[f64], true_idx: usize) -> usize {
    let dt = dist[true_idx];
    let less = dist.iter().filter(|&&d| d < dt).count();
    let ties = dist.iter().filter(|&&d| d == dt).count();
    less + (ties + 2) / 2
}

/// Rank of the true item among all items.
pub fn rank_ground_truth(j_pred: &[f64], item_dyn: &Mat, true_idx: usize) -> Result<usize> {
    if item_dyn.rows() == 0 {
        return Err(Error::Metric("cannot rank against an empty item set".into()));
    }
    if true_idx >= item_dyn.rows() {
        return Err(Error::Index {
            what: "item",
            index: true_idx,
            len: item_dyn.rows(),
        });
    }
    if j_pred.len() != item_dyn.rows() + item_dyn.cols() {
        return Err(Error::shape(
            format!("prediction of length {}", j_pred.len()),
            format!("{} items of dimension {}", item_dyn.rows(), item_dyn.cols()),
        ));
    }
    Ok(rank_from_distances(&item_distances(j_pred, item_dyn), true_idx))
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn recall_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann–Whitney U via average ranks).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            format!("{} scores", scores.len()),
            format!("{} labels", labels.len()),
        ));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC undefined: labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // 1-based ranks k+1..=end share their mean
        let mean_rank = (k + 1 + end) as f64 / 2.0;
        let pos_here = order[k..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += mean_rank * pos_here as f64;
        k = end;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Also answer every query through an LSH index and report how often its
    /// top item agrees with exact search.
    pub lsh: Option<LshParams>,
}

/// Output of one sequential pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub ranks: Vec<RankRecord>,
    /// State-change probability after each interaction.
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Evaluates `range` in time order, advancing `state` through it.
pub fn evaluate_range(
    ds: &Dataset,
    deltas: &DeltaTable,
    range: Range<usize>,
    p: &ModelParams,
    state: &mut EmbeddingState,
    task: Task,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if !state.dims_match(&p.dims) {
        return Err(Error::shape("embedding state", "model dimensions"));
    }
    if range.end > ds.len() {
        return Err(Error::Index {
            what: "interaction",
            index: range.end,
            len: ds.len(),
        });
    }
    let started = Instant::now();
    let weights = LossWeights {
        state_scale: 0.0,
        ..LossWeights::default()
    };
    let mut index = opts
        .lsh
        .as_ref()
        .map(|params| lsh_build(&state.item_dyn, params))
        .transpose()?;
    let mut agree = 0usize;

    let mut ranks = Vec::with_capacity(range.len());
    let mut scores = Vec::with_capacity(range.len());
    let mut labels = Vec::with_capacity(range.len());
    for seq in range.clone() {
        let input = step_input(ds, deltas, state, seq);
        let t = step_forward(p, state, input, &weights);
        let dist = item_distances(&t.j_pred, &state.item_dyn);
        let rank = rank_from_distances(&dist, t.item);
        if let Some(index) = &index {
            let exact_top = (0..dist.len())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                .expect("non-empty item set");
            let approx = lsh_query(index, &state.item_dyn, &t.j_pred, 1);
            if approx.first() == Some(&exact_top) {
                agree += 1;
            }
        }
        ranks.push(RankRecord {
            seq_id: seq,
            rank,
            reciprocal_rank: 1.0 / rank as f64,
        });
        scores.push(t.state_prob);
        labels.push(t.label);
        state.commit(t.user, t.item, &t.u_new, &t.i_new, ds.interactions[seq].timestamp);
        if let Some(index) = &mut index {
            index.update_item(t.item, &t.i_new);
        }
    }

    let plain: Vec<usize> = ranks.iter().map(|r| r.rank).collect();
    let report = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        task,
        mrr: mean_reciprocal_rank(&plain),
        recall_at_10: recall_at(&plain, 10),
        auc: auc(&scores, &labels).ok(),
        n_test_interactions: range.len(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        lsh_top1_agreement: index.map(|_| agree as f64 / range.len().max(1) as f64),
    };
    Ok(Evaluation {
        report,
        ranks,
        scores,
        labels,
    })
}

/// Future-interaction prediction over `range`: MRR and recall@10.
pub fn evaluate_interactions(
    ds: &Dataset,
    deltas: &DeltaTable,
    range: Range<usize>,
    p: &ModelParams,
    state: &mut EmbeddingState,
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<RankRecord>)> {
    let e = evaluate_range(ds, deltas, range, p, state, Task::Interaction, opts)?;
    Ok((e.report, e.ranks))
}

/// State-change prediction over `range`: AUC of the classifier's
/// probabilities against the labels.
pub fn evaluate_state_change(
    ds: &Dataset,
    deltas: &DeltaTable,
    range: Range<usize>,
    p: &ModelParams,
    state: &mut EmbeddingState,
) -> Result<MetricsReport> {
    if !ds.has_labels {
        return Err(Error::NoStateLabels);
    }
    if ds.positive_labels(range.clone()) == 0 {
        return Err(Error::Metric("no positive state labels in evaluation range".into()));
    }
    let e = evaluate_range(ds, deltas, range, p, state, Task::StateChange, &EvalOptions::default())?;
    Ok(e.report)
}

/// Writes rank records as `seq_id,rank,reciprocal_rank` CSV.
pub fn write_rank_records(path: impl AsRef<std::path::Path>, ranks: &[RankRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Metric(e.to_string()))?;
    for r in ranks {
        w.serialize(r).map_err(|e| Error::Metric(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
