//! Deterministic generator of capsule-endoscopy-like synthetic images.
//!
//! Three classes: NORMAL is a smooth reddish mucosa texture, VASCULAR adds
//! 1-3 dark-red soft-edged elliptical bleeding blobs (their union is the
//! oracle mask), INFLAMMATORY adds pale high-frequency patches and keeps an
//! empty mask. Every pixel is a pure function of (seed, id), so samples can
//! be regenerated bit-exactly from the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{self, Image, Mask};
use crate::rng::Rng;

pub const GENERATOR_VERSION: &str = "synthgen-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassLabel {
    Normal,
    Vascular,
    Inflammatory,
}

impl ClassLabel {
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Normal => 0,
            ClassLabel::Vascular => 1,
            ClassLabel::Inflammatory => 2,
        }
    }

    pub fn from_index(i: usize) -> ClassLabel {
        match i {
            0 => ClassLabel::Normal,
            1 => ClassLabel::Vascular,
            _ => ClassLabel::Inflammatory,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub id: usize,
    pub image: Image,
    pub class_label: ClassLabel,
    pub oracle_mask: Mask,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub image_size: usize,
    /// (normal, vascular, inflammatory)
    pub counts: [usize; 3],
    pub k_folds: usize,
    /// fold index per sample id
    pub fold_of: Vec<usize>,
    pub generator_version: String,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn class_of(&self, id: usize) -> ClassLabel {
        if id < self.counts[0] {
            ClassLabel::Normal
        } else if id < self.counts[0] + self.counts[1] {
            ClassLabel::Vascular
        } else {
            ClassLabel::Inflammatory
        }
    }
}

/// Bilinear value noise in [0,1] with the given cell size.
fn value_noise(rng: &mut Rng, size: usize, cell: usize) -> Vec<f64> {
    let gw = size / cell + 2;
    let grid: Vec<f64> = (0..gw * gw).map(|_| rng.next_f64()).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let fy = y as f64 / cell as f64;
        let y0 = fy.floor() as usize;
        let wy = fy - y0 as f64;
        for x in 0..size {
            let fx = x as f64 / cell as f64;
            let x0 = fx.floor() as usize;
            let wx = fx - x0 as f64;
            let v = grid[y0 * gw + x0] * (1.0 - wy) * (1.0 - wx)
                + grid[y0 * gw + x0 + 1] * (1.0 - wy) * wx
                + grid[(y0 + 1) * gw + x0] * wy * (1.0 - wx)
                + grid[(y0 + 1) * gw + x0 + 1] * wy * wx;
            out[y * size + x] = v;
        }
    }
    out
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Approximate signed distance (negative inside), in pixels.
    fn signed_distance(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let q = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        (q - 1.0) * self.a.min(self.b)
    }
}

fn random_ellipse(rng: &mut Rng, size: f64) -> Ellipse {
    Ellipse {
        cy: rng.uniform(0.2 * size, 0.8 * size),
        cx: rng.uniform(0.2 * size, 0.8 * size),
        a: rng.uniform(0.08 * size, 0.25 * size),
        b: rng.uniform(0.08 * size, 0.25 * size),
        theta: rng.uniform(0.0, std::f64::consts::PI),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft blob field: per-pixel max of per-ellipse alphas. The sigmoid edge
/// falls off over roughly 2 px so that nearby thresholds cut nested masks.
fn blob_alpha(ellipses: &[Ellipse], size: usize) -> Vec<f64> {
    let mut alpha = vec![0.0; size * size];
    for e in ellipses {
        for y in 0..size {
            for x in 0..size {
                let sd = e.signed_distance(y as f64, x as f64);
                let a = sigmoid(-sd / 1.0);
                let slot = &mut alpha[y * size + x];
                if a > *slot {
                    *slot = a;
                }
            }
        }
    }
    alpha
}

/// Generate one sample; a pure function of (seed, id, class, size).
pub fn generate_sample(seed: u64, id: usize, class: ClassLabel, size: usize) -> SampleRecord {
    let mut rng = Rng::new(seed).substream(id as u64);

    // reddish mucosa base texture
    let low = value_noise(&mut rng, size, 16.max(size / 4));
    let mid = value_noise(&mut rng, size, 6);
    let mut image = Image::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let t = 0.7 * low[y * size + x] + 0.3 * mid[y * size + x];
            image.set(y, x, 0, (0.55 + 0.25 * t).clamp(0.0, 1.0));
            image.set(y, x, 1, (0.24 + 0.14 * t).clamp(0.0, 1.0));
            image.set(y, x, 2, (0.20 + 0.12 * t).clamp(0.0, 1.0));
        }
    }

    let mut oracle_mask = Mask::empty(size, size);
    match class {
        ClassLabel::Normal => {}
        ClassLabel::Vascular => {
            let area = (size * size) as f64;
            // rejection loop: union area must land in [1%, 40%] of the image
            let mut accepted = None;
            for _ in 0..200 {
                let n = 1 + rng.below(3);
                let ellipses: Vec<Ellipse> =
                    (0..n).map(|_| random_ellipse(&mut rng, size as f64)).collect();
                let alpha = blob_alpha(&ellipses, size);
                let count = alpha.iter().filter(|&&a| a > 0.5).count();
                let frac = count as f64 / area;
                if (0.01..=0.40).contains(&frac) {
                    accepted = Some(alpha);
                    break;
                }
            }
            let alpha = accepted.expect("blob rejection loop exhausted");
            let dark = [0.32, 0.05, 0.06];
            for y in 0..size {
                for x in 0..size {
                    let a = 0.85 * alpha[y * size + x];
                    for c in 0..3 {
                        let v = image.get(y, x, c);
                        image.set(y, x, c, v * (1.0 - a) + dark[c] * a);
                    }
                    oracle_mask.data[y * size + x] = alpha[y * size + x] > 0.5;
                }
            }
        }
        ClassLabel::Inflammatory => {
            let n = 1 + rng.below(2);
            let ellipses: Vec<Ellipse> =
                (0..n).map(|_| random_ellipse(&mut rng, size as f64)).collect();
            let alpha = blob_alpha(&ellipses, size);
            let hf = value_noise(&mut rng, size, 2);
            let pale = [0.88, 0.82, 0.74];
            for y in 0..size {
                for x in 0..size {
                    let a = 0.7 * alpha[y * size + x];
                    let m = 0.8 + 0.3 * hf[y * size + x];
                    for c in 0..3 {
                        let v = image.get(y, x, c);
                        image.set(y, x, c, (v * (1.0 - a) + pale[c] * m * a).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }

    SampleRecord {
        id,
        image,
        class_label: class,
        oracle_mask,
    }
}

/// Generate the whole dataset. Ids are assigned contiguously per class:
/// normals first, then vasculars, then inflammatories.
pub fn generate_dataset(image_size: usize, counts: [usize; 3], seed: u64) -> Result<Vec<SampleRecord>> {
    if image_size < 32 {
        return Err(Error::Config(format!(
            "image_size must be >= 32, got {}",
            image_size
        )));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("dataset must contain at least one sample".into()));
    }
    let mut samples = Vec::with_capacity(total);
    let mut id = 0;
    for (ci, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            samples.push(generate_sample(seed, id, ClassLabel::from_index(ci), image_size));
            id += 1;
        }
    }
    Ok(samples)
}

/// Stratified k-fold assignment. Per class, shuffled ids are dealt greedily
/// to the fold with the fewest samples of that class (ties broken by total
/// fold size, then fold index), which keeps per-class counts and total fold
/// sizes within one of each other.
pub fn split_folds(class_labels: &[ClassLabel], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold requires k >= 2, got {}", k)));
    }
    if k > class_labels.len() {
        return Err(Error::Config(format!(
            "k = {} exceeds dataset size {}",
            k,
            class_labels.len()
        )));
    }
    let rng = Rng::new(seed);
    let mut fold_of = vec![0usize; class_labels.len()];
    let mut total_size = vec![0usize; k];
    let mut class_size = vec![[0usize; 3]; k];
    for ci in 0..3 {
        let mut ids: Vec<usize> = (0..class_labels.len())
            .filter(|&i| class_labels[i].index() == ci)
            .collect();
        let mut r = rng.substream(1000 + ci as u64);
        r.shuffle(&mut ids);
        for id in ids {
            let f = (0..k)
                .min_by_key(|&f| (class_size[f][ci], total_size[f], f))
                .unwrap();
            fold_of[id] = f;
            total_size[f] += 1;
            class_size[f][ci] += 1;
        }
    }
    Ok(fold_of)
}

pub fn image_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join("images").join(format!("{:05}.ppm", id))
}

pub fn mask_path(dir: &Path, id: usize) -> std::path::PathBuf {
    dir.join("masks").join(format!("{:05}.pgm", id))
}

/// Persist a dataset directory: manifest.json + PPM images + PGM masks.
pub fn save_dataset(dir: &Path, samples: &[SampleRecord], manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Schema(format!("manifest serialization: {}", e)))?;
    fs::write(dir.join("manifest.json"), json).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        img::write_ppm(&image_path(dir, s.id), &s.image)?;
        img::write_pgm(&mask_path(dir, s.id), &s.oracle_mask)?;
    }
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `deal-lab gen-data` first".into(),
        });
    }
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&json).map_err(|e| Error::Schema(format!("manifest: {}", e)))
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let manifest = load_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.total());
    for id in 0..manifest.total() {
        let image = img::read_ppm(&image_path(dir, id))?;
        let oracle_mask = img::read_pgm(&mask_path(dir, id))?;
        samples.push(SampleRecord {
            id,
            image,
            class_label: manifest.class_of(id),
            oracle_mask,
        });
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_counts_and_mask_cardinality() {
        let samples = generate_dataset(64, [600, 605, 607], 7).unwrap();
        assert_eq!(samples.len(), 1812);
        let non_empty = samples.iter().filter(|s| !s.oracle_mask.is_empty()).count();
        assert_eq!(non_empty, 605);
        for s in &samples {
            assert_eq!(
                !s.oracle_mask.is_empty(),
                s.class_label == ClassLabel::Vascular
            );
            assert!(s.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn single_normal_sample_has_empty_mask() {
        let samples = generate_dataset(64, [1, 0, 0], 3).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(samples[0].oracle_mask.is_empty());
    }

    #[test]
    fn per_sample_determinism() {
        let a = generate_sample(42, 17, ClassLabel::Vascular, 64);
        let b = generate_sample(42, 17, ClassLabel::Vascular, 64);
        assert_eq!(a.image, b.image);
        assert_eq!(a.oracle_mask, b.oracle_mask);
    }

    #[test]
    fn blob_area_within_bounds() {
        for id in 0..30 {
            let s = generate_sample(5, id, ClassLabel::Vascular, 64);
            let frac = s.oracle_mask.count() as f64 / (64.0 * 64.0);
            assert!((0.01..=0.40).contains(&frac), "area fraction {}", frac);
        }
    }

    #[test]
    fn fold_sizes_paper_scale() {
        let labels: Vec<ClassLabel> = (0..600)
            .map(|_| ClassLabel::Normal)
            .chain((0..605).map(|_| ClassLabel::Vascular))
            .chain((0..607).map(|_| ClassLabel::Inflammatory))
            .collect();
        let folds = split_folds(&labels, 5, 9).unwrap();
        let mut sizes = [0usize; 5];
        for &f in &folds {
            sizes[f] += 1;
        }
        let mut sorted = sizes.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![362, 362, 362, 363, 363]);
        // per-fold class counts within 1 of each other
        for ci in 0..3 {
            let per: Vec<usize> = (0..5)
                .map(|f| {
                    folds
                        .iter()
                        .enumerate()
                        .filter(|(i, &ff)| ff == f && labels[*i].index() == ci)
                        .count()
                })
                .collect();
            let mn = per.iter().min().unwrap();
            let mx = per.iter().max().unwrap();
            assert!(mx - mn <= 1, "class {} counts {:?}", ci, per);
        }
    }

    #[test]
    fn leave_one_out() {
        let labels = vec![ClassLabel::Normal; 6];
        let folds = split_folds(&labels, 6, 1).unwrap();
        let mut sorted = folds.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn k_exceeding_size_is_config_error() {
        let labels = vec![ClassLabel::Normal; 3];
        assert!(matches!(
            split_folds(&labels, 4, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dataset_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_dataset(32, [2, 2, 1], 11).unwrap();
        let labels: Vec<ClassLabel> = samples.iter().map(|s| s.class_label).collect();
        let manifest = DatasetManifest {
            seed: 11,
            image_size: 32,
            counts: [2, 2, 1],
            k_folds: 2,
            fold_of: split_folds(&labels, 2, 11).unwrap(),
            generator_version: GENERATOR_VERSION.to_string(),
        };
        save_dataset(dir.path(), &samples, &manifest).unwrap();
        let (m2, s2) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(s2.len(), samples.len());
        // masks survive exactly; images survive to 8-bit precision
        for (a, b) in samples.iter().zip(&s2) {
            assert_eq!(a.oracle_mask, b.oracle_mask);
            assert_eq!(a.class_label, b.class_label);
            for (x, y) in a.image.data.iter().zip(&b.image.data) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
