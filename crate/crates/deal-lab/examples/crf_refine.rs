//! Dense-CRF mean-field refinement on a constructed salt-and-pepper
//! corruption: the appearance and smoothness kernels pull the noisy
//! probability map back toward the clean shape.
//!
//!     cargo run --release --example crf_refine

use deal_lab::cam::crf::{crf_refine_trace, CrfParams};
use deal_lab::img::Image;
use deal_lab::Rng;

fn main() -> deal_lab::Result<()> {
    let (h, w) = (48, 48);
    // image: dark red disc on a pale background
    let mut image = Image::new(h, w);
    let clean = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 - 24.0, x as f64 - 24.0);
        dy * dy + dx * dx < 140.0
    };
    for y in 0..h {
        for x in 0..w {
            let rgb = if clean(y, x) {
                [0.45, 0.10, 0.10]
            } else {
                [0.85, 0.60, 0.55]
            };
            for (c, v) in rgb.into_iter().enumerate() {
                image.set(y, x, c, v);
            }
        }
    }

    // probability map: the clean disc with 15% of pixels flipped
    let mut rng = Rng::new(3);
    let mut prob = vec![0.0; h * w];
    let mut flipped = 0;
    for y in 0..h {
        for x in 0..w {
            let mut p = if clean(y, x) { 0.95 } else { 0.05 };
            if rng.next_f64() < 0.15 {
                p = 1.0 - p;
                flipped += 1;
            }
            prob[y * w + x] = p;
        }
    }

    let disagree = |p: &[f64]| {
        (0..h * w)
            .filter(|&i| (p[i] > 0.5) != clean(i / w, i % w))
            .count()
    };
    println!("flipped {} pixels; initial disagreement {}", flipped, disagree(&prob));

    let trace = crf_refine_trace(&image, &prob, &CrfParams::default())?;
    for (it, p) in trace.iter().enumerate() {
        println!("iteration {}: disagreement {}", it + 1, disagree(p));
    }
    let final_dis = disagree(trace.last().unwrap());
    assert!(final_dis < disagree(&prob));
    println!("refinement reduced disagreement to {}", final_dis);
    Ok(())
}
