//! CAM generation: classifier training, Grad-CAM heatmaps, dense-CRF
//! refinement, and multi-threshold standard/coarse/fine mask triples.

pub mod classifier;
pub mod crf;
pub mod gradcam;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{self, Mask};
use crate::synthgen::{ClassLabel, SampleRecord};
use crate::tensor::checkpoint;

pub use classifier::{train_classifier, Classifier};
pub use crf::{crf_refine, crf_refine_trace, CrfParams};
pub use gradcam::{grad_cam, GradCam};

/// Binarization thresholds for the heatmap triple. The coarse cut sits
/// below the standard one (over-segmenting) and the fine cut above it
/// (under-segmenting).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamThresholds {
    pub t_standard: f64,
    pub t_coarse: f64,
    pub t_fine: f64,
}

impl Default for CamThresholds {
    fn default() -> Self {
        CamThresholds {
            t_standard: 0.8,
            t_coarse: 0.75,
            t_fine: 0.85,
        }
    }
}

impl CamThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_coarse < self.t_standard
            && self.t_standard < self.t_fine
            && self.t_coarse > 0.0
            && self.t_fine < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "CAM thresholds must satisfy 0 < coarse < standard < fine < 1, got {} / {} / {}",
                self.t_coarse, self.t_standard, self.t_fine
            )));
        }
        Ok(())
    }
}

/// Standard/coarse/fine masks for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CamTriple {
    pub sample_id: usize,
    pub standard: Mask,
    pub coarse: Mask,
    pub fine: Mask,
}

impl CamTriple {
    pub fn empty(sample_id: usize, h: usize, w: usize) -> Self {
        CamTriple {
            sample_id,
            standard: Mask::empty(h, w),
            coarse: Mask::empty(h, w),
            fine: Mask::empty(h, w),
        }
    }

    /// Nesting invariant: fine within standard within coarse.
    pub fn is_nested(&self) -> bool {
        self.fine.subset_of(&self.standard) && self.standard.subset_of(&self.coarse)
    }
}

/// Cut one refined heatmap at the three thresholds. For images classified
/// non-vascular the triple is all-empty: there is no bleeding CAM.
pub fn threshold_cams(
    sample_id: usize,
    refined: &[f64],
    h: usize,
    w: usize,
    thresholds: &CamThresholds,
    predicted: ClassLabel,
) -> Result<CamTriple> {
    thresholds.validate()?;
    if refined.len() != h * w {
        return Err(Error::Dimension(format!(
            "threshold_cams: {} values for {}x{} map",
            refined.len(),
            h,
            w
        )));
    }
    if predicted != ClassLabel::Vascular {
        return Ok(CamTriple::empty(sample_id, h, w));
    }
    Ok(CamTriple {
        sample_id,
        standard: Mask::from_prob_inclusive(refined, h, w, thresholds.t_standard),
        coarse: Mask::from_prob_inclusive(refined, h, w, thresholds.t_coarse),
        fine: Mask::from_prob_inclusive(refined, h, w, thresholds.t_fine),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CamConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub thresholds: CamThresholds,
    pub crf: CrfParams,
}

impl Default for CamConfig {
    fn default() -> Self {
        CamConfig {
            epochs: 30,
            lr: 0.003,
            dropout: 0.1,
            batch_size: 16,
            thresholds: CamThresholds::default(),
            crf: CrfParams::default(),
        }
    }
}

/// Index entry persisted alongside the CAM masks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CamIndexEntry {
    pub sample_id: usize,
    pub predicted_class: ClassLabel,
    pub heatmap_max: f64,
    pub standard_path: PathBuf,
    pub coarse_path: PathBuf,
    pub fine_path: PathBuf,
}

pub struct CamArtifacts {
    pub classifier: Classifier,
    pub train_accuracy: f64,
    pub triples: Vec<CamTriple>,
    pub index: Vec<CamIndexEntry>,
}

/// Full CAM pipeline: train the classifier, then per sample extract the
/// Grad-CAM heatmap, refine it with the CRF, and cut the triple. Heatmap
/// extraction and refinement are per-sample pure functions, so they run in
/// parallel with order-preserving collection.
pub fn generate_cams(samples: &[SampleRecord], config: &CamConfig, seed: u64) -> Result<CamArtifacts> {
    config.thresholds.validate()?;
    config.crf.validate()?;
    let classifier = train_classifier(
        samples,
        config.epochs,
        config.lr,
        config.dropout,
        config.batch_size,
        seed,
    )?;
    let train_accuracy = classifier.accuracy(samples)?;

    let results: Vec<(CamTriple, ClassLabel, f64)> = samples
        .par_iter()
        .map(|s| {
            let (predicted, _) = classifier.predict(&s.image)?;
            if predicted != ClassLabel::Vascular {
                return Ok((
                    CamTriple::empty(s.id, s.image.h, s.image.w),
                    predicted,
                    0.0,
                ));
            }
            let cam = grad_cam(&classifier, &s.image, ClassLabel::Vascular)?;
            let refined = crf_refine(&s.image, &cam.heatmap, &config.crf)?;
            let triple = threshold_cams(
                s.id,
                &refined,
                s.image.h,
                s.image.w,
                &config.thresholds,
                predicted,
            )?;
            Ok((triple, predicted, cam.max_value))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut triples = Vec::with_capacity(results.len());
    let mut index = Vec::with_capacity(results.len());
    for (triple, predicted, heatmap_max) in results {
        index.push(CamIndexEntry {
            sample_id: triple.sample_id,
            predicted_class: predicted,
            heatmap_max,
            standard_path: PathBuf::from(format!("standard/{:05}.pgm", triple.sample_id)),
            coarse_path: PathBuf::from(format!("coarse/{:05}.pgm", triple.sample_id)),
            fine_path: PathBuf::from(format!("fine/{:05}.pgm", triple.sample_id)),
        });
        triples.push(triple);
    }
    Ok(CamArtifacts {
        classifier,
        train_accuracy,
        triples,
        index,
    })
}

pub fn save_cams(dir: &Path, artifacts: &CamArtifacts) -> Result<()> {
    for sub in ["standard", "coarse", "fine"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir, e))?;
    }
    let names = Classifier::parameter_names();
    let entries: Vec<(String, crate::tensor::Tensor)> = names
        .into_iter()
        .zip(artifacts.classifier.parameters())
        .collect();
    checkpoint::save(&dir.join("classifier.ckpt"), &entries)?;
    for (triple, entry) in artifacts.triples.iter().zip(&artifacts.index) {
        img::write_pgm(&dir.join(&entry.standard_path), &triple.standard)?;
        img::write_pgm(&dir.join(&entry.coarse_path), &triple.coarse)?;
        img::write_pgm(&dir.join(&entry.fine_path), &triple.fine)?;
    }
    let json = serde_json::to_string_pretty(&artifacts.index)
        .map_err(|e| Error::Schema(format!("cam index: {}", e)))?;
    fs::write(dir.join("index.json"), json).map_err(|e| Error::io(dir, e))
}

pub fn load_cam_index(dir: &Path) -> Result<Vec<CamIndexEntry>> {
    let path = dir.join("index.json");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `deal-lab gen-cams` first".into(),
        });
    }
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&json).map_err(|e| Error::Schema(format!("cam index: {}", e)))
}

pub fn load_cams(dir: &Path) -> Result<(Vec<CamIndexEntry>, Vec<CamTriple>)> {
    let index = load_cam_index(dir)?;
    let mut triples = Vec::with_capacity(index.len());
    for e in &index {
        triples.push(CamTriple {
            sample_id: e.sample_id,
            standard: img::read_pgm(&dir.join(&e.standard_path))?,
            coarse: img::read_pgm(&dir.join(&e.coarse_path))?,
            fine: img::read_pgm(&dir.join(&e.fine_path))?,
        });
    }
    Ok((index, triples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn uniform_high_heatmap_fills_all_masks() {
        let refined = vec![0.9; 16];
        let t = threshold_cams(0, &refined, 4, 4, &CamThresholds::default(), ClassLabel::Vascular)
            .unwrap();
        assert_eq!(t.standard.count(), 16);
        assert_eq!(t.coarse.count(), 16);
        assert_eq!(t.fine.count(), 16);
    }

    #[test]
    fn between_coarse_and_standard() {
        let refined = vec![0.77; 16];
        let t = threshold_cams(0, &refined, 4, 4, &CamThresholds::default(), ClassLabel::Vascular)
            .unwrap();
        assert_eq!(t.coarse.count(), 16);
        assert_eq!(t.standard.count(), 0);
        assert_eq!(t.fine.count(), 0);
    }

    #[test]
    fn nesting_on_random_heatmaps() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let refined: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
            let t = threshold_cams(0, &refined, 8, 8, &CamThresholds::default(), ClassLabel::Vascular)
                .unwrap();
            assert!(t.is_nested());
            assert!(t.fine.count() <= t.standard.count());
            assert!(t.standard.count() <= t.coarse.count());
        }
    }

    #[test]
    fn non_vascular_triple_is_empty() {
        let refined = vec![0.99; 16];
        let t = threshold_cams(0, &refined, 4, 4, &CamThresholds::default(), ClassLabel::Normal)
            .unwrap();
        assert!(t.standard.is_empty() && t.coarse.is_empty() && t.fine.is_empty());
    }

    #[test]
    fn bad_threshold_order_rejected() {
        let bad = CamThresholds {
            t_standard: 0.7,
            t_coarse: 0.8,
            t_fine: 0.9,
        };
        assert!(matches!(
            threshold_cams(0, &[0.5; 4], 2, 2, &bad, ClassLabel::Vascular),
            Err(Error::Config(_))
        ));
    }
}
