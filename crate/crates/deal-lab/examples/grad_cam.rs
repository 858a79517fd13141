//! Train the weak classifier, pull a Grad-CAM heatmap for a vascular
//! image, refine it with the dense CRF, and cut the three-threshold CAM
//! triple.
//!
//!     cargo run --release --example grad_cam

use deal_lab::cam::classifier::train_classifier;
use deal_lab::cam::crf::{crf_refine, CrfParams};
use deal_lab::cam::gradcam::grad_cam;
use deal_lab::cam::{threshold_cams, CamThresholds};
use deal_lab::synthgen::{generate_dataset, ClassLabel};

fn main() -> deal_lab::Result<()> {
    let samples = generate_dataset(64, [60, 60, 60], 11)?;
    let classifier = train_classifier(&samples, 25, 0.003, 0.1, 16, 11)?;
    println!("classifier accuracy: {:.3}", classifier.accuracy(&samples)?);

    let sample = samples
        .iter()
        .find(|s| s.class_label == ClassLabel::Vascular)
        .unwrap();
    let cam = grad_cam(&classifier, &sample.image, ClassLabel::Vascular)?;
    println!(
        "heatmap {}x{} (raw {}x{}), max raw value {:.4}",
        sample.image.h, sample.image.w, cam.raw_h, cam.raw_w, cam.max_value
    );

    let refined = crf_refine(&sample.image, &cam.heatmap, &CrfParams::default())?;
    let triple = threshold_cams(
        sample.id,
        &refined,
        sample.image.h,
        sample.image.w,
        &CamThresholds::default(),
        ClassLabel::Vascular,
    )?;
    println!(
        "CAM triple: coarse {} px >= standard {} px >= fine {} px (nested: {})",
        triple.coarse.count(),
        triple.standard.count(),
        triple.fine.count(),
        triple.is_nested()
    );
    let overlap = triple
        .standard
        .data
        .iter()
        .zip(&sample.oracle_mask.data)
        .filter(|(a, b)| **a && **b)
        .count();
    println!(
        "standard CAM covers {}/{} oracle foreground pixels",
        overlap,
        sample.oracle_mask.count()
    );
    Ok(())
}
