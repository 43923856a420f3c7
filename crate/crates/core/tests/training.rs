use traj::data::chronological_split;
use traj::synth;
use traj::train::{run_training, TrainConfig};

#[test]
fn loss_mostly_decreases_over_ten_epochs() {
    let ds = synth::planted_cycles(21, 20, 12, 2000, 0.1);
    let split = chronological_split(ds.len(), 80.0, 10.0).unwrap();
    let cfg = TrainConfig {
        epochs: 11,
        embedding_dim: 16,
        seed: 21,
        ..TrainConfig::default()
    };
    let out = run_training(&ds, &split, &cfg, |_| {}).unwrap();
    let losses: Vec<f64> = out.reports.iter().map(|r| r.loss.total).collect();
    let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(down >= 8, "{losses:?}");
}

#[test]
fn best_epoch_matches_its_report() {
    let ds = synth::planted_cycles(22, 10, 8, 800, 0.0);
    let split = chronological_split(ds.len(), 80.0, 10.0).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        embedding_dim: 8,
        ..TrainConfig::default()
    };
    let out = run_training(&ds, &split, &cfg, |_| {}).unwrap();
    let best = &out.reports[out.best.epoch - 1];
    assert_eq!(best.epoch, out.best.epoch);
    assert_eq!(best.validation_metric, Some(out.best.validation_metric));
}
