//! Small dilated CNN image classifier.
//!
//! Four conv blocks (conv-relu-pool, the final block dilated with no spatial
//! stride so the 64x64 input keeps an 8x8 feature map), global average pool,
//! linear head to three class scores. Channel dropout on the final feature
//! map and horizontal/vertical flip augmentation during training.

use crate::error::{Error, Result};
use crate::img::{self, Image};
use crate::rng::Rng;
use crate::synthgen::{ClassLabel, SampleRecord};
use crate::tensor::adam::{AdamParams, AdamState};
use crate::tensor::{Graph, NodeId, Tensor};

pub const NUM_CLASSES: usize = 3;
const CHANNELS: [usize; 4] = [8, 16, 24, 32];

#[derive(Clone, Debug)]
pub struct Classifier {
    /// conv kernels for the four blocks
    pub kernels: Vec<Tensor>,
    /// linear head weight [3, C4] and bias [3]
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// Node handles for one classifier forward pass.
pub struct ClassifierPass {
    pub graph: Graph,
    /// final feature map (post-relu), [n, C4, h/8, w/8]
    pub features: NodeId,
    pub logits: NodeId,
    pub param_ids: Vec<NodeId>,
}

impl Classifier {
    pub fn init(seed: u64) -> Self {
        let mut rng = Rng::new(seed).substream(0xC1A5);
        let kernels = vec![
            Tensor::kaiming_uniform(&[CHANNELS[0], 3, 3, 3], &mut rng),
            Tensor::kaiming_uniform(&[CHANNELS[1], CHANNELS[0], 3, 3], &mut rng),
            Tensor::kaiming_uniform(&[CHANNELS[2], CHANNELS[1], 3, 3], &mut rng),
            Tensor::kaiming_uniform(&[CHANNELS[3], CHANNELS[2], 3, 3], &mut rng),
        ];
        Classifier {
            kernels,
            head_w: Tensor::kaiming_uniform(&[NUM_CLASSES, CHANNELS[3]], &mut rng),
            head_b: Tensor::zeros(&[NUM_CLASSES]),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.kernels.clone();
        p.push(self.head_w.clone());
        p.push(self.head_b.clone());
        p
    }

    pub fn set_parameters(&mut self, params: &[Tensor]) {
        self.kernels = params[..4].to_vec();
        self.head_w = params[4].clone();
        self.head_b = params[5].clone();
    }

    pub fn parameter_names() -> Vec<String> {
        vec![
            "cls.conv1".into(),
            "cls.conv2".into(),
            "cls.conv3".into(),
            "cls.conv4".into(),
            "cls.head_w".into(),
            "cls.head_b".into(),
        ]
    }

    /// Forward pass over a batch. `dropout` optionally carries an inverted
    /// channel-dropout mask applied to the final feature map (training only).
    pub fn forward(&self, batch: Tensor, dropout: Option<Tensor>) -> Result<ClassifierPass> {
        let mut g = Graph::new();
        let param_ids: Vec<NodeId> = self.parameters().into_iter().map(|t| g.param(t)).collect();
        let x = g.constant(batch);

        let c1 = g.conv2d(x, param_ids[0], 1, 1, 1)?;
        let r1 = g.relu(c1);
        let p1 = g.max_pool2d(r1)?;
        let c2 = g.conv2d(p1, param_ids[1], 1, 1, 1)?;
        let r2 = g.relu(c2);
        let p2 = g.max_pool2d(r2)?;
        let c3 = g.conv2d(p2, param_ids[2], 1, 1, 1)?;
        let r3 = g.relu(c3);
        let p3 = g.max_pool2d(r3)?;
        // dilated block: no spatial stride, resolution preserved
        let c4 = g.conv2d(p3, param_ids[3], 1, 2, 2)?;
        let mut features = g.relu(c4);
        if let Some(mask) = dropout {
            let m = g.constant(mask);
            features = g.mul(features, m)?;
        }
        let pooled = g.global_avg_pool(features)?;
        let logits = g.linear(pooled, param_ids[4], param_ids[5])?;
        Ok(ClassifierPass {
            graph: g,
            features,
            logits,
            param_ids,
        })
    }

    /// Head-only forward from a given feature map value; the path Grad-CAM
    /// differentiates, kept separate so tests can probe it with finite
    /// differences.
    pub fn head_scores(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let f = g.constant(features.clone());
        let w = g.constant(self.head_w.clone());
        let b = g.constant(self.head_b.clone());
        let pooled = g.global_avg_pool(f)?;
        let logits = g.linear(pooled, w, b)?;
        Ok(g.value(logits).data().to_vec())
    }

    pub fn predict(&self, image: &Image) -> Result<(ClassLabel, Vec<f64>)> {
        let pass = self.forward(image.to_tensor(), None)?;
        let scores = pass.graph.value(pass.logits).data().to_vec();
        let best = (0..NUM_CLASSES)
            .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
            .unwrap();
        Ok((ClassLabel::from_index(best), scores))
    }

    pub fn accuracy(&self, samples: &[SampleRecord]) -> Result<f64> {
        let mut correct = 0usize;
        for s in samples {
            let (pred, _) = self.predict(&s.image)?;
            if pred == s.class_label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

fn dropout_mask(shape: &[usize], rate: f64, rng: &mut Rng) -> Tensor {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut t = Tensor::zeros(shape);
    let keep = 1.0 - rate;
    for b in 0..n {
        for ch in 0..c {
            let v = if rng.next_f64() < keep { 1.0 / keep } else { 0.0 };
            let base = (b * c + ch) * h * w;
            for p in 0..h * w {
                t.data_mut()[base + p] = v;
            }
        }
    }
    t
}

/// Cross-entropy training with flip augmentation and channel dropout.
pub fn train_classifier(
    samples: &[SampleRecord],
    epochs: usize,
    lr: f64,
    dropout: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Classifier> {
    let mut present = [false; 3];
    for s in samples {
        present[s.class_label.index()] = true;
    }
    if present.iter().any(|&p| !p) {
        return Err(Error::Config(
            "classifier training requires samples from all three classes".into(),
        ));
    }

    let mut model = Classifier::init(seed);
    let mut params = model.parameters();
    let mut adam = AdamState::new(&params, AdamParams::with_lr(lr));
    let root = Rng::new(seed).substream(0xC15F);
    let mut shuffle_rng = root.substream(1);
    let mut aug_rng = root.substream(2);
    let mut drop_rng = root.substream(3);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _epoch in 0..epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            let mut images: Vec<Image> = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let mut img = samples[i].image.clone();
                if aug_rng.next_f64() < 0.5 {
                    img = img.flipped_horizontal();
                }
                if aug_rng.next_f64() < 0.5 {
                    img = img.flipped_vertical();
                }
                images.push(img);
                targets.push(samples[i].class_label.index());
            }
            let refs: Vec<&Image> = images.iter().collect();
            let batch = img::batch_tensor(&refs);
            let (h, w) = (images[0].h / 8, images[0].w / 8);
            let mask = dropout_mask(&[chunk.len(), CHANNELS[3], h, w], dropout, &mut drop_rng);
            model.set_parameters(&params);
            let mut pass = model.forward(batch, Some(mask))?;
            let loss = pass.graph.cross_entropy_logits(pass.logits, &targets)?;
            let loss_v = pass.graph.value(loss).item()?;
            if !loss_v.is_finite() {
                return Err(Error::Numeric(format!(
                    "classifier loss is not finite: {}",
                    loss_v
                )));
            }
            let grads = pass.graph.backward(loss)?;
            let grad_tensors: Vec<Tensor> = pass
                .param_ids
                .iter()
                .zip(&params)
                .map(|(&id, p)| {
                    grads
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(p.shape()))
                })
                .collect();
            adam.step(&mut params, &grad_tensors)?;
        }
    }
    model.set_parameters(&params);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_dataset;

    #[test]
    fn untrained_accuracy_near_chance() {
        let samples = generate_dataset(32, [20, 20, 20], 5).unwrap();
        let model = train_classifier(&samples, 0, 0.003, 0.1, 8, 5).unwrap();
        let acc = model.accuracy(&samples).unwrap();
        assert!(acc < 0.7, "untrained accuracy {}", acc);
    }

    #[test]
    fn training_is_deterministic() {
        let samples = generate_dataset(32, [4, 4, 4], 5).unwrap();
        let a = train_classifier(&samples, 1, 0.003, 0.1, 4, 9).unwrap();
        let b = train_classifier(&samples, 1, 0.003, 0.1, 4, 9).unwrap();
        assert_eq!(a.parameters(), b.parameters());
    }

    #[test]
    fn single_class_dataset_rejected() {
        let samples = generate_dataset(32, [5, 0, 0], 5).unwrap();
        assert!(matches!(
            train_classifier(&samples, 1, 0.003, 0.1, 4, 9),
            Err(Error::Config(_))
        ));
    }
}
