//! t-Batch: partition a time-ordered interaction stream into batches that are
//! independent edge sets.
//!
//! Interaction `r` between user `u` and item `i` goes to batch
//! `max(1 + maxBatch(u), 1 + maxBatch(i))`, where `maxBatch(e)` is the largest
//! batch index holding an earlier interaction of `e`. Two interactions in one
//! batch never share a user or an item, and each entity's interactions land
//! in strictly increasing batches, so running the batches in order preserves
//! every entity's temporal order while the members of a batch can run
//! concurrently.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Ordered batches of interaction `seq_id`s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    /// Interactions covered by the plan.
    pub range: Range<usize>,
    pub batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Batch index of every covered interaction, indexed by `seq_id - range.start`.
    pub fn batch_of(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.range.len()];
        for (b, batch) in self.batches.iter().enumerate() {
            for &s in batch {
                if let Some(slot) = s.checked_sub(self.range.start).and_then(|k| out.get_mut(k)) {
                    *slot = b;
                }
            }
        }
        out
    }
}

/// Per-entity largest batch index used so far; 0 means "none yet", so batch
/// numbers are 1-based here.
#[derive(Debug, Clone)]
struct BatchAssignmentState {
    max_batch_user: Vec<usize>,
    max_batch_item: Vec<usize>,
}

pub fn assign_batches(ds: &Dataset) -> BatchPlan {
    assign_batches_range(ds, 0..ds.len())
}

/// Plans only the interactions in `range`, e.g. the training split.
pub fn assign_batches_range(ds: &Dataset, range: Range<usize>) -> BatchPlan {
    let range = range.start.min(ds.len())..range.end.min(ds.len());
    let mut st = BatchAssignmentState {
        max_batch_user: vec![0; ds.num_users],
        max_batch_item: vec![0; ds.num_items],
    };
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for x in &ds.interactions[range.clone()] {
        let k = 1 + st.max_batch_user[x.user].max(st.max_batch_item[x.item]);
        st.max_batch_user[x.user] = k;
        st.max_batch_item[x.item] = k;
        if batches.len() < k {
            batches.resize_with(k, Vec::new);
        }
        batches[k - 1].push(x.seq_id);
    }
    // k grows by at most one per interaction, so there are no gaps and no
    // trailing empty batches; seq_ids are pushed in ascending order.
    BatchPlan { range, batches }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Two interactions in one batch share an entity.
    SharedEntity {
        batch: usize,
        first: usize,
        second: usize,
        entity: Entity,
    },
    /// An entity's later interaction sits in a batch that is not after its
    /// earlier one.
    OrderBroken {
        entity: Entity,
        earlier: usize,
        later: usize,
    },
    Missing {
        seq_id: usize,
    },
    Duplicate {
        seq_id: usize,
    },
    OutOfRange {
        seq_id: usize,
    },
    EmptyBatch {
        batch: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum Entity {
    User(usize),
    Item(usize),
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerificationReport {
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a plan against the dataset it was built for, independently of how
/// it was built.
pub fn verify_plan(plan: &BatchPlan, ds: &Dataset) -> Result<VerificationReport> {
    if plan.range.end > ds.len() || plan.range.start > plan.range.end {
        return Err(Error::InvalidPlan(format!(
            "plan covers {:?} but dataset has {} interactions",
            plan.range,
            ds.len()
        )));
    }
    let mut violations = Vec::new();
    let base = plan.range.start;
    let mut batch_of: Vec<Option<usize>> = vec![None; plan.range.len()];

    let mut last_user: Vec<Option<(usize, usize)>> = vec![None; ds.num_users];
    let mut last_item: Vec<Option<(usize, usize)>> = vec![None; ds.num_items];
    for (b, batch) in plan.batches.iter().enumerate() {
        if batch.is_empty() {
            violations.push(Violation::EmptyBatch { batch: b });
        }
        for &s in batch {
            if !plan.range.contains(&s) {
                violations.push(Violation::OutOfRange { seq_id: s });
                continue;
            }
            let slot = &mut batch_of[s - base];
            if slot.is_some() {
                violations.push(Violation::Duplicate { seq_id: s });
                continue;
            }
            *slot = Some(b);
            // (a) uniqueness inside this batch
            let x = &ds.interactions[s];
            for (seen, entity) in [
                (&mut last_user[x.user], Entity::User(x.user)),
                (&mut last_item[x.item], Entity::Item(x.item)),
            ] {
                if let Some((pb, ps)) = *seen {
                    if pb == b {
                        violations.push(Violation::SharedEntity {
                            batch: b,
                            first: ps,
                            second: s,
                            entity,
                        });
                    }
                }
                *seen = Some((b, s));
            }
        }
    }

    // (c) coverage, then (b) per-entity monotone batch indices in time order
    let mut prev_user: Vec<Option<(usize, usize)>> = vec![None; ds.num_users];
    let mut prev_item: Vec<Option<(usize, usize)>> = vec![None; ds.num_items];
    for (k, slot) in batch_of.iter().enumerate() {
        let s = base + k;
        let Some(b) = *slot else {
            violations.push(Violation::Missing { seq_id: s });
            continue;
        };
        let x = &ds.interactions[s];
        for (prev, entity) in [
            (&mut prev_user[x.user], Entity::User(x.user)),
            (&mut prev_item[x.item], Entity::Item(x.item)),
        ] {
            if let Some((pb, ps)) = *prev {
                if pb > b {
                    violations.push(Violation::OrderBroken {
                        entity,
                        earlier: ps,
                        later: s,
                    });
                }
            }
            *prev = Some((b, s));
        }
    }
    Ok(VerificationReport { violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub num_interactions: usize,
    pub num_batches: usize,
    pub max_batch_size: usize,
    pub mean_batch_size: f64,
    pub parallelism_ratio: f64,
}

pub fn plan_stats(plan: &BatchPlan) -> PlanStats {
    let n = plan.num_interactions();
    let nb = plan.num_batches();
    let ratio = if nb == 0 { 0.0 } else { n as f64 / nb as f64 };
    PlanStats {
        num_interactions: n,
        num_batches: nb,
        max_batch_size: plan.batches.iter().map(Vec::len).max().unwrap_or(0),
        mean_batch_size: ratio,
        parallelism_ratio: ratio,
    }
}
