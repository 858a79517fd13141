//! Score a CAM-labeled pool with the CAMPUS criterion and run the
//! knee-based pseudo selection plus top-K ground-truth selection.
//!
//!     cargo run --release --example campus_scores

use deal_lab::campus::{
    knee_locate, score_sample, select_ground_truth, select_pseudo, EntropyMode, Knee,
    PredictionTriple,
};
use deal_lab::img::Mask;
use deal_lab::Rng;

fn main() -> deal_lab::Result<()> {
    // knee detection on a convex curve: y = x^2 has its knee at x = 0.5
    let curve: Vec<f64> = (0..=100).map(|i| (i as f64 / 100.0).powi(2)).collect();
    match knee_locate(&curve, 1.0) {
        Knee::At(i) => println!("knee of x^2 at index {} (x = {:.2})", i, i as f64 / 100.0),
        Knee::None => println!("no knee found"),
    }

    // synthetic score pool: most samples agree with their CAM, a few have
    // confident predictions that contradict it (pseudo candidates), a few
    // are self-inconsistent (ground-truth candidates)
    let (h, w) = (8, 8);
    let mut rng = Rng::new(7);
    let mut records = Vec::new();
    for id in 0..60 {
        let kind = id % 6;
        let mut p_s = vec![0.02; h * w];
        let mut p_c = vec![0.02; h * w];
        let mut p_f = vec![0.02; h * w];
        let mut cam = Mask::empty(h, w);
        for i in 0..h * w {
            match kind {
                // agreement: prediction = CAM
                0..=3 => {
                    let fg = i % 7 == 0;
                    if fg {
                        p_s[i] = 0.98;
                        p_c[i] = 0.98;
                        p_f[i] = 0.98;
                        cam.data[i] = true;
                    }
                }
                // pseudo candidate: decoders agree with each other, not the CAM
                4 => {
                    if i % 5 == 0 {
                        p_s[i] = 0.97;
                        p_c[i] = 0.97;
                        p_f[i] = 0.97;
                    }
                    cam.data[i] = i % 11 == 0;
                }
                // GT candidate: decoders disagree among themselves
                _ => {
                    p_s[i] = 0.5 + 0.4 * (rng.next_f64() - 0.5);
                    p_c[i] = if i % 2 == 0 { 0.9 } else { 0.1 };
                    p_f[i] = if i % 3 == 0 { 0.9 } else { 0.1 };
                    cam.data[i] = i % 4 == 0;
                }
            }
        }
        let triple = PredictionTriple {
            sample_id: id,
            h,
            w,
            p_s,
            p_c,
            p_f,
        };
        records.push(score_sample(&triple, &cam, EntropyMode::ForegroundTerm)?);
    }

    let pseudo = select_pseudo(&records, 1.0);
    let gt = select_ground_truth(&records, 6, &pseudo);
    println!("pseudo picks ({}): {:?}", pseudo.len(), pseudo);
    println!("ground-truth picks ({}): {:?}", gt.len(), gt);
    for r in records.iter().take(8) {
        println!(
            "  id {:>2}  S_e {:.3}  S_md {:.3}  S_cd {:.3}  S_p {:.3}  S_g {:.3}",
            r.sample_id, r.s_e, r.s_md, r.s_cd, r.s_p, r.s_g
        );
    }
    Ok(())
}
