//! Seeded synthetic interaction streams for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::data::{Dataset, DatasetBuilder};

fn build(b: DatasetBuilder) -> Dataset {
    b.build().expect("generators emit at least one valid interaction")
}

/// Uniformly random users and items with exponential inter-event gaps.
pub fn random_stream(seed: u64, len: usize, users: usize, items: usize, feature_dim: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0).expect("positive rate");
    let mut b = DatasetBuilder::new(feature_dim, false);
    let mut t = 0.0;
    for _ in 0..len.max(1) {
        t += gap.sample(&mut rng);
        let u = rng.random_range(0..users);
        let i = rng.random_range(0..items);
        let f = (0..feature_dim).map(|_| rng.random::<f64>() - 0.5).collect();
        b.push(format!("u{u}"), format!("i{i}"), t, f, 0).expect("valid row");
    }
    build(b)
}

/// Each user cycles through three preferred items in a fixed order; with
/// probability `noise` the user picks a uniformly random item instead (the
/// cycle position does not advance).
pub fn planted_cycles(seed: u64, users: usize, items: usize, len: usize, noise: f64) -> Dataset {
    assert!(items >= 3, "need at least three items");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefs: Vec<[usize; 3]> = (0..users)
        .map(|_| {
            let a = rng.random_range(0..items);
            let mut b = rng.random_range(0..items);
            while b == a {
                b = rng.random_range(0..items);
            }
            let mut c = rng.random_range(0..items);
            while c == a || c == b {
                c = rng.random_range(0..items);
            }
            [a, b, c]
        })
        .collect();
    let mut pos = vec![0usize; users];
    let gap = Exp::new(1.0).expect("positive rate");
    let mut bld = DatasetBuilder::new(1, false);
    let mut t = 0.0;
    for _ in 0..len.max(1) {
        t += gap.sample(&mut rng);
        let u = rng.random_range(0..users);
        let i = if rng.random::<f64>() < noise {
            rng.random_range(0..items)
        } else {
            let i = prefs[u][pos[u]];
            pos[u] = (pos[u] + 1) % 3;
            i
        };
        bld.push(format!("u{u}"), format!("i{i}"), t, vec![0.0], 0)
            .expect("valid row");
    }
    build(bld)
}

/// Parameters of [`dropout_stream`].
#[derive(Debug, Clone)]
pub struct DropoutSpec {
    pub users: usize,
    pub items: usize,
    pub len: usize,
    /// Users that leave; each one's final interaction is labeled 1.
    pub leavers: usize,
    /// Number of interactions before leaving over which feature 0 drifts.
    pub drift_len: usize,
    /// Size of the drift at the final interaction.
    pub drift: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            users: 300,
            items: 50,
            len: 10_000,
            leavers: 100,
            drift_len: 5,
            drift: 2.0,
        }
    }
}

/// Users whose first feature drifts upward over their last few interactions
/// before a final, label-1 interaction after which they never return.
/// Everyone else has zero-mean noise features and label 0.
pub fn dropout_stream(seed: u64, spec: &DropoutSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid sigma");
    // leaving step for the first `leavers` users, spread over the stream
    let mut leave_at: Vec<Option<usize>> = (0..spec.users)
        .map(|u| (u < spec.leavers).then(|| rng.random_range(spec.len / 20..spec.len)))
        .collect();
    let mut remaining: Vec<Option<usize>> = vec![None; spec.users];
    let mut active: Vec<usize> = (0..spec.users).collect();
    let mut b = DatasetBuilder::new(2, true);
    let gap = Exp::new(1.0).expect("positive rate");
    let mut t = 0.0;
    for step in 0..spec.len {
        if active.is_empty() {
            break;
        }
        for u in 0..spec.users {
            if leave_at[u].is_some_and(|s| s <= step) && remaining[u].is_none() {
                remaining[u] = Some(spec.drift_len.max(1));
                leave_at[u] = None;
            }
        }
        t += gap.sample(&mut rng);
        let u = active[rng.random_range(0..active.len())];
        let i = rng.random_range(0..spec.items);
        let mut f0 = noise.sample(&mut rng);
        let mut label = 0;
        if let Some(left) = remaining[u] {
            let progress = (spec.drift_len.max(1) + 1 - left) as f64 / spec.drift_len.max(1) as f64;
            f0 += spec.drift * progress;
            if left == 1 {
                label = 1;
                active.retain(|&a| a != u);
            }
            remaining[u] = Some(left - 1);
        }
        let f1 = noise.sample(&mut rng);
        b.push(format!("u{u}"), format!("i{i}"), t, vec![f0, f1], label)
            .expect("valid row");
    }
    build(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(random_stream(3, 50, 5, 5, 1), random_stream(3, 50, 5, 5, 1));
        assert_eq!(planted_cycles(3, 5, 6, 50, 0.1), planted_cycles(3, 5, 6, 50, 0.1));
    }

    #[test]
    fn dropout_labels_are_final_interactions() {
        let ds = dropout_stream(1, &DropoutSpec::default());
        let pos: Vec<_> = ds.interactions.iter().filter(|x| x.state_label == 1).collect();
        assert!(!pos.is_empty());
        let rate = pos.len() as f64 / ds.len() as f64;
        assert!(rate > 0.004 && rate < 0.02, "{rate}");
        for x in pos {
            assert!(!ds.interactions[x.seq_id + 1..].iter().any(|y| y.user == x.user));
        }
    }
}
