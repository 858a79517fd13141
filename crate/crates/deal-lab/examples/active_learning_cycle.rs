//! One complete active-learning experiment on synthetic data: CAM labels,
//! pseudo-label promotion before the first cycle, then three cycles of
//! ground-truth acquisition with full retraining.
//!
//!     cargo run --release --example active_learning_cycle

use deal_lab::alloop::{run_experiment, AlConfig, Strategy};
use deal_lab::cam::{generate_cams, CamConfig};
use deal_lab::segmodel::TrainSchedule;
use deal_lab::synthgen::{generate_dataset, split_folds};

fn main() -> deal_lab::Result<()> {
    let samples = generate_dataset(64, [80, 80, 80], 21)?;
    let labels: Vec<_> = samples.iter().map(|s| s.class_label).collect();
    let fold_of = split_folds(&labels, 3, 21)?;
    let train: Vec<_> = samples.iter().filter(|s| fold_of[s.id] != 0).cloned().collect();
    let test: Vec<_> = samples.iter().filter(|s| fold_of[s.id] == 0).cloned().collect();

    let cam_cfg = CamConfig {
        epochs: 24,
        ..CamConfig::default()
    };
    let artifacts = generate_cams(&train, &cam_cfg, 21)?;
    println!("classifier accuracy: {:.3}", artifacts.train_accuracy);

    let cfg = AlConfig {
        strategy: Strategy::Deal,
        schedule: TrainSchedule {
            e1: 14,
            e2: 2,
            ..TrainSchedule::default()
        },
        ..AlConfig::default()
    };
    let res = run_experiment(&train, &test, &artifacts.triples, &cfg, 0, 21)?;
    println!("initial (CAM-only) test Dice: {:.4}", res.initial_dice);
    for c in &res.cycles {
        println!(
            "cycle {}: dice {:.4}  labels cam/pseudo/gt = {}/{}/{}  (k_p = {})",
            c.cycle, c.dice, c.n_cam, c.n_pseudo, c.n_gt, c.k_p
        );
    }
    Ok(())
}
