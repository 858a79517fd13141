//! Grad-CAM heatmap extraction.
//!
//! Channel weights are the spatial mean of the class-score gradient on the
//! final feature map; the heatmap is the ReLU of the weighted channel sum,
//! bilinearly upsampled to image size and max-normalized to [0,1].

use crate::error::{Error, Result};
use crate::img::Image;
use crate::synthgen::ClassLabel;
use crate::tensor::{conv, Tensor};

use super::classifier::{Classifier, NUM_CLASSES};

#[derive(Clone, Debug)]
pub struct GradCam {
    /// per-channel weights (spatial mean of dS_c/dA^i)
    pub weights: Vec<f64>,
    /// feature-map-resolution heatmap, before upsampling/normalization
    pub raw: Vec<f64>,
    pub raw_h: usize,
    pub raw_w: usize,
    /// image-resolution heatmap in [0,1]
    pub heatmap: Vec<f64>,
    /// maximum of the upsampled heatmap before normalization
    pub max_value: f64,
}

/// Gradient of the class score w.r.t. the final feature map. The feature
/// value is re-inserted as a gradient-enabled leaf so the sweep only runs
/// through the classifier head.
pub fn feature_gradient(
    classifier: &Classifier,
    features: &Tensor,
    target_class: usize,
) -> Result<Tensor> {
    let mut g = crate::tensor::Graph::new();
    let f = g.param(features.clone());
    let w = g.constant(classifier.head_w.clone());
    let b = g.constant(classifier.head_b.clone());
    let pooled = g.global_avg_pool(f)?;
    let logits = g.linear(pooled, w, b)?;
    let mut onehot = Tensor::zeros(&[1, NUM_CLASSES]);
    onehot.data_mut()[target_class] = 1.0;
    let sel = g.constant(onehot);
    let picked = g.mul(logits, sel)?;
    let score = g.sum(picked);
    let grads = g.backward(score)?;
    Ok(grads.expect(f)?.clone())
}

pub fn grad_cam(classifier: &Classifier, image: &Image, target_class: ClassLabel) -> Result<GradCam> {
    if classifier
        .parameters()
        .iter()
        .any(|p| !p.is_finite())
    {
        return Err(Error::Numeric("classifier parameters are not finite".into()));
    }
    let pass = classifier.forward(image.to_tensor(), None)?;
    let features = pass.graph.value(pass.features).clone();
    let grad = feature_gradient(classifier, &features, target_class.index())?;

    let shape = features.shape();
    let (c, fh, fw) = (shape[1], shape[2], shape[3]);
    let hw = fh * fw;
    let mut weights = vec![0.0; c];
    for i in 0..c {
        weights[i] = grad.data()[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64;
    }

    let mut raw = vec![0.0; hw];
    for i in 0..c {
        let ch = &features.data()[i * hw..(i + 1) * hw];
        for (r, &a) in raw.iter_mut().zip(ch) {
            *r += weights[i] * a;
        }
    }
    for r in raw.iter_mut() {
        *r = r.max(0.0);
    }

    let up = conv::upsample_bilinear(&raw, fh, fw, image.h, image.w);
    let mx = up.iter().cloned().fold(0.0, f64::max);
    let heatmap = if mx > 0.0 {
        up.iter().map(|v| v / mx).collect()
    } else {
        vec![0.0; up.len()]
    };
    Ok(GradCam {
        weights,
        raw,
        raw_h: fh,
        raw_w: fw,
        heatmap,
        max_value: mx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    fn toy_image() -> Image {
        let mut img = Image::new(32, 32);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f64 / 100.0;
        }
        img
    }

    #[test]
    fn zero_head_weight_gives_zero_heatmap() {
        let mut cls = Classifier::init(3);
        // zero out head weights for class 1 only
        let cout = cls.head_w.shape()[1];
        for i in 0..cout {
            cls.head_w.data_mut()[cout + i] = 0.0;
        }
        let cam = grad_cam(&cls, &toy_image(), ClassLabel::Vascular).unwrap();
        assert!(cam.weights.iter().all(|&w| w == 0.0));
        assert!(cam.heatmap.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_match_finite_differences_through_head() {
        let cls = Classifier::init(7);
        let pass = cls.forward(toy_image().to_tensor(), None).unwrap();
        let features = pass.graph.value(pass.features).clone();
        let grad = feature_gradient(&cls, &features, 1).unwrap();
        let numeric = gradcheck::numeric_gradient(
            |inputs| cls.head_scores(&inputs[0]).unwrap()[1],
            &[features.clone()],
            0,
            1e-3,
        );
        assert!(gradcheck::max_rel_error(&grad, &numeric) < 1e-3);
    }

    #[test]
    fn heatmap_is_normalized_and_non_negative() {
        let cls = Classifier::init(11);
        let cam = grad_cam(&cls, &toy_image(), ClassLabel::Vascular).unwrap();
        assert!(cam.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(cam.raw.iter().all(|&v| v >= 0.0));
    }
}
