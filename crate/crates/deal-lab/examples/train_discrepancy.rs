//! Train the discrepancy decoder model on a synthetic dataset and watch
//! the three-step dynamics: supervised warm-up, discrepancy growth between
//! the coarse/fine decoders, then re-convergence toward the standard one.
//!
//!     cargo run --release --example train_discrepancy

use std::time::Instant;

use deal_lab::campus::{dice_coefficient, PRED_THRESHOLD};
use deal_lab::img::Mask;
use deal_lab::segmodel::{mean_cf_discrepancy, train_full, DiscrepancyModel, SegSample, TrainSchedule};
use deal_lab::synthgen::generate_dataset;

fn morph(m: &Mask, dilate: bool) -> Mask {
    let mut out = Mask::empty(m.h, m.w);
    for y in 0..m.h {
        for x in 0..m.w {
            let mut hit = !dilate;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    let v = ny >= 0
                        && nx >= 0
                        && (ny as usize) < m.h
                        && (nx as usize) < m.w
                        && m.data[ny as usize * m.w + nx as usize];
                    if dilate {
                        hit |= v;
                    } else {
                        hit &= v;
                    }
                }
            }
            out.data[y * m.w + x] = hit;
        }
    }
    out
}

fn main() -> deal_lab::Result<()> {
    let records = generate_dataset(64, [40, 40, 40], 42)?;
    // the dataset is block-ordered by class, so split by id modulo to keep
    // all three classes in both halves
    let train: Vec<_> = records.iter().filter(|s| s.id % 6 != 0).cloned().collect();
    let test: Vec<_> = records.iter().filter(|s| s.id % 6 == 0).cloned().collect();
    // Build CAM-style triples: the coarse label over-segments (dilated mask)
    // and the fine label under-segments (eroded mask), so the decoders have
    // genuinely different supervision to disagree about.
    let samples: Vec<SegSample> = train
        .iter()
        .map(|s| SegSample {
            id: s.id,
            image: s.image.clone(),
            y_s: s.oracle_mask.clone(),
            y_c: morph(&s.oracle_mask, true),
            y_f: morph(&s.oracle_mask, false),
        })
        .collect();

    let schedule = TrainSchedule {
        e1: 20,
        e2: 3,
        ..TrainSchedule::default()
    };
    let mut model = DiscrepancyModel::init(42);
    let t0 = Instant::now();
    let curve = train_full(&mut model, &samples, &schedule, 42)?;
    println!("trained {} epochs in {:.1?}", curve.len(), t0.elapsed());
    for p in &curve {
        println!("  epoch {:>2} step {}  loss {:.4}", p.epoch, p.step, p.loss);
    }

    println!(
        "coarse/fine discrepancy after training: {:.4}",
        mean_cf_discrepancy(&model, &samples)?
    );

    let mut dice_sum = 0.0;
    for s in &test {
        let p = model.predict_standard(&s.image)?;
        let pred = Mask::from_prob(&p, s.image.h, s.image.w, PRED_THRESHOLD);
        dice_sum += dice_coefficient(&pred, &s.oracle_mask)?;
    }
    println!("test Dice (D_s, {} samples): {:.4}", test.len(), dice_sum / test.len() as f64);
    Ok(())
}
