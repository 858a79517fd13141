//! Fully connected binary CRF with naive O(N^2) mean-field inference.
//!
//! Appearance (position + color) and smoothness (position only) Gaussian
//! kernels, Potts compatibility. The pairwise kernel matrix is materialized
//! once per image in f32 and reused across iterations; fine at 64x64.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrfParams {
    /// appearance kernel weight
    pub w1: f64,
    /// appearance spatial bandwidth, px
    pub theta_alpha: f64,
    /// appearance color bandwidth, color units in [0,1]
    pub theta_beta: f64,
    /// smoothness kernel weight
    pub w2: f64,
    /// smoothness spatial bandwidth, px
    pub theta_gamma: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w1: 5.0,
            theta_alpha: 20.0,
            theta_beta: 0.1,
            w2: 3.0,
            theta_gamma: 3.0,
            iterations: 5,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta_alpha <= 0.0 || self.theta_beta <= 0.0 || self.theta_gamma <= 0.0 {
            return Err(Error::Config("CRF bandwidths must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("CRF iteration count must be >= 1".into()));
        }
        Ok(())
    }
}

const PROB_CLAMP: f64 = 1e-6;

/// Mean-field refinement, returning the per-pixel foreground distribution
/// after every iteration (index 0 = after the first iteration).
pub fn crf_refine_trace(image: &Image, prob: &[f64], params: &CrfParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let (h, w) = (image.h, image.w);
    let n = h * w;
    if prob.len() != n {
        return Err(Error::Dimension(format!(
            "crf_refine: prob map has {} pixels, image {}x{}",
            prob.len(),
            h,
            w
        )));
    }

    // unaries
    let mut u_fg = vec![0.0; n];
    let mut u_bg = vec![0.0; n];
    for i in 0..n {
        let p = prob[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        u_fg[i] = -p.ln();
        u_bg[i] = -(1.0 - p).ln();
    }

    // pairwise kernel matrix (symmetric, zero diagonal)
    let inv2a = 1.0 / (2.0 * params.theta_alpha * params.theta_alpha);
    let inv2b = 1.0 / (2.0 * params.theta_beta * params.theta_beta);
    let inv2g = 1.0 / (2.0 * params.theta_gamma * params.theta_gamma);
    let mut kernel = vec![0.0f32; n * n];
    for i in 0..n {
        let (yi, xi) = ((i / w) as f64, (i % w) as f64);
        let ci = &image.data[i * 3..i * 3 + 3];
        for j in i + 1..n {
            let (yj, xj) = ((j / w) as f64, (j % w) as f64);
            let d2 = (yi - yj) * (yi - yj) + (xi - xj) * (xi - xj);
            let cj = &image.data[j * 3..j * 3 + 3];
            let col2 = (ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2);
            let k = params.w1 * (-d2 * inv2a - col2 * inv2b).exp()
                + params.w2 * (-d2 * inv2g).exp();
            kernel[i * n + j] = k as f32;
            kernel[j * n + i] = k as f32;
        }
    }

    // init from the clamped unary distribution
    let mut q_fg: Vec<f64> = (0..n)
        .map(|i| prob[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        .collect();
    let mut trace = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            let mut m_fg = 0.0f64;
            for (kv, &q) in row.iter().zip(q_fg.iter()) {
                m_fg += *kv as f64 * q;
            }
            let m_total: f64 = row.iter().map(|&kv| kv as f64).sum();
            let m_bg = m_total - m_fg;
            // Potts: each label is penalized by the mass of the other label
            let e_fg = -u_fg[i] - m_bg;
            let e_bg = -u_bg[i] - m_fg;
            let mx = e_fg.max(e_bg);
            let z_fg = (e_fg - mx).exp();
            let z_bg = (e_bg - mx).exp();
            next[i] = z_fg / (z_fg + z_bg);
        }
        q_fg = next;
        trace.push(q_fg.clone());
    }
    Ok(trace)
}

/// Mean-field refinement returning the final foreground probability map.
pub fn crf_refine(image: &Image, prob: &[f64], params: &CrfParams) -> Result<Vec<f64>> {
    Ok(crf_refine_trace(image, prob, params)?
        .pop()
        .expect("iterations >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::Mask;
    use crate::rng::Rng;

    fn constant_image(h: usize, w: usize, rgb: [f64; 3]) -> Image {
        let mut img = Image::new(h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img.set(y, x, c, rgb[c]);
                }
            }
        }
        img
    }

    #[test]
    fn uniform_half_stays_half() {
        let img = constant_image(8, 8, [0.5, 0.3, 0.2]);
        let prob = vec![0.5; 64];
        let refined = crf_refine(&img, &prob, &CrfParams::default()).unwrap();
        for &v in &refined {
            assert!((v - 0.5).abs() < 1e-12, "drifted to {}", v);
        }
    }

    #[test]
    fn distributions_remain_normalized() {
        // q_bg = 1 - q_fg by construction; check q stays a probability
        let mut rng = Rng::new(2);
        let mut img = constant_image(8, 8, [0.5, 0.3, 0.2]);
        for v in img.data.iter_mut() {
            *v = rng.next_f64();
        }
        let prob: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
        let trace = crf_refine_trace(&img, &prob, &CrfParams::default()).unwrap();
        for q in &trace {
            for &v in q {
                assert!((0.0..=1.0).contains(&v));
                assert!(v.is_finite());
            }
        }
    }

    /// Salt-and-pepper noise on a clean blob map must strictly shrink the
    /// disagreement with the clean map.
    #[test]
    fn denoises_salt_and_pepper() {
        let (h, w) = (16, 16);
        let mut img = constant_image(h, w, [0.7, 0.35, 0.3]);
        let mut clean = Mask::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 - 8.0;
                let dx = x as f64 - 8.0;
                if (dy * dy + dx * dx).sqrt() < 5.0 {
                    clean.data[y * w + x] = true;
                    for (c, v) in [0.3, 0.05, 0.05].into_iter().enumerate() {
                        img.set(y, x, c, v);
                    }
                }
            }
        }
        let mut corrupted: Vec<f64> = clean
            .data
            .iter()
            .map(|&b| if b { 0.95 } else { 0.05 })
            .collect();
        let mut rng = Rng::new(13);
        let mut flipped = 0;
        for i in 0..h * w {
            if rng.next_f64() < 0.08 {
                corrupted[i] = 1.0 - corrupted[i];
                flipped += 1;
            }
        }
        assert!(flipped > 0);
        let corrupted_mask = Mask::from_prob(&corrupted, h, w, 0.5);
        let disagree_before: usize = corrupted_mask
            .data
            .iter()
            .zip(&clean.data)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(disagree_before, flipped);

        let refined = crf_refine(&img, &corrupted, &CrfParams::default()).unwrap();
        let refined_mask = Mask::from_prob(&refined, h, w, 0.5);
        let disagree_after: usize = refined_mask
            .data
            .iter()
            .zip(&clean.data)
            .filter(|(a, b)| a != b)
            .count();
        assert!(
            disagree_after < disagree_before,
            "disagreement {} -> {}",
            disagree_before,
            disagree_after
        );
    }

    #[test]
    fn size_mismatch_is_dimension_error() {
        let img = constant_image(4, 4, [0.5; 3]);
        let prob = vec![0.5; 10];
        assert!(matches!(
            crf_refine(&img, &prob, &CrfParams::default()),
            Err(Error::Dimension(_))
        ));
    }
}
