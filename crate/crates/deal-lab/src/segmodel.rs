//! The discrepancy decoder model: a shared dilated encoder feeding three
//! structurally identical decoders (standard, coarse, fine), trained with
//! the three-step scheme — supervised warm-up of E and D_s, discrepancy
//! maximization of D_c/D_f against their labels, then discrepancy
//! minimization back toward D_s.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::campus::PredictionTriple;
use crate::error::{Error, Result};
use crate::img::{batch_tensor, Image, Mask};
use crate::rng::Rng;
use crate::tensor::adam::{AdamParams, AdamState};
use crate::tensor::{checkpoint, Gradients, Graph, NodeId, Tensor};

/// Encoder channel widths for the three blocks (last block dilated).
pub const ENC_CHANNELS: [usize; 3] = [4, 12, 16];
/// Decoder channel widths for the three conv blocks.
pub const DEC_CHANNELS: [usize; 3] = [12, 8, 8];

/// One decoder: three conv blocks plus a 1x1 sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub convs: [Tensor; 3],
    pub head: Tensor,
}

impl DecoderParams {
    fn init(rng: &mut Rng) -> Self {
        let [c1, c2, c3] = ENC_CHANNELS;
        let [d1, d2, d3] = DEC_CHANNELS;
        DecoderParams {
            convs: [
                Tensor::kaiming_uniform(&[d1, c3, 3, 3], rng),
                Tensor::kaiming_uniform(&[d2, d1 + c2, 3, 3], rng),
                Tensor::kaiming_uniform(&[d3, d2 + c1, 3, 3], rng),
            ],
            // zero head: untrained sigmoid output is exactly 0.5
            head: Tensor::zeros(&[1, d3, 1, 1]),
        }
    }

    fn tensors(&self) -> Vec<Tensor> {
        vec![
            self.convs[0].clone(),
            self.convs[1].clone(),
            self.convs[2].clone(),
            self.head.clone(),
        ]
    }

    fn set(&mut self, t: &[Tensor]) {
        self.convs = [t[0].clone(), t[1].clone(), t[2].clone()];
        self.head = t[3].clone();
    }
}

/// Where the model is in the three-step training scheme. Steps 2 and 3
/// check this so they cannot run out of order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStage {
    Fresh,
    Step1Done,
    Duplicated,
    Step2Done,
}

#[derive(Clone, Debug)]
pub struct DiscrepancyModel {
    pub enc: [Tensor; 3],
    pub dec_s: DecoderParams,
    pub dec_c: DecoderParams,
    pub dec_f: DecoderParams,
    pub stage: TrainStage,
}

/// Which decoders a forward pass materializes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DecoderSet {
    All,
    StandardOnly,
    CoarseFine,
}

/// Node handles for one forward pass. Decoders not requested are None.
pub struct SegPass {
    pub graph: Graph,
    pub p_s: Option<NodeId>,
    pub p_c: Option<NodeId>,
    pub p_f: Option<NodeId>,
    /// encoder parameter leaves (3 kernels)
    pub enc_ids: Vec<NodeId>,
    /// decoder parameter leaves in s, c, f order; empty when skipped
    pub dec_s_ids: Vec<NodeId>,
    pub dec_c_ids: Vec<NodeId>,
    pub dec_f_ids: Vec<NodeId>,
}

/// One labeled training sample. For pseudo- and fully-labeled samples the
/// three masks are identical; CAM-labeled samples carry the triple.
#[derive(Clone, Debug)]
pub struct SegSample {
    pub id: usize,
    pub image: Image,
    pub y_s: Mask,
    pub y_c: Mask,
    pub y_f: Mask,
}

impl SegSample {
    pub fn uniform(id: usize, image: Image, y: Mask) -> Self {
        SegSample {
            id,
            image,
            y_s: y.clone(),
            y_c: y.clone(),
            y_f: y,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// step-1 warm-up epochs
    pub e1: usize,
    /// step-2/step-3 alternation rounds (one epoch each per round)
    pub e2: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda_dis: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            e1: 50,
            e2: 10,
            lr: 0.003,
            batch_size: 8,
            lambda_dis: 1.0,
        }
    }
}

/// One row of the training curve CSV.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// 1, 2, or 3
    pub step: u8,
    pub loss: f64,
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("epoch,step,loss\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.epoch, p.step, p.loss));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn mask_target(masks: &[&Mask]) -> Tensor {
    let (h, w) = (masks[0].h, masks[0].w);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    }
    Tensor::new(vec![masks.len(), 1, h, w], data).unwrap()
}

/// Binary cross-entropy (probabilities squashed into [1e-6, 1-1e-6]) plus
/// soft-Dice loss with additive smoothing 1.0, equally weighted.
pub fn loss_ce_dice(g: &mut Graph, p: NodeId, y: NodeId) -> Result<NodeId> {
    // Affine squash into [1e-6, 1-1e-6] rather than a hard clamp: a clamp
    // zeroes the gradient on saturated pixels, which permanently traps the
    // model in an all-background collapse on class-imbalanced masks.
    let pc = g.mul_scalar(p, 1.0 - 2e-6);
    let pc = g.add_scalar(pc, 1e-6);
    let ln_p = g.ln(pc);
    let fg = g.mul(y, ln_p)?;
    let neg_p = g.mul_scalar(pc, -1.0);
    let one_m_p = g.add_scalar(neg_p, 1.0);
    let ln_q = g.ln(one_m_p);
    let neg_y = g.mul_scalar(y, -1.0);
    let one_m_y = g.add_scalar(neg_y, 1.0);
    let bg = g.mul(one_m_y, ln_q)?;
    let ll = g.add(fg, bg)?;
    let ll_mean = g.mean(ll);
    let bce = g.mul_scalar(ll_mean, -1.0);

    // per-sample soft Dice (averaged over the batch): pooling reduces the
    // spatial axes only, so each image keeps its own overlap statistics and
    // a lone sparse-foreground sample is not drowned by its batch
    let hw = {
        let s = g.value(p).shape();
        (s[2] * s[3]) as f64
    };
    let inter = g.mul(pc, y)?;
    let inter_mean = g.global_avg_pool(inter)?;
    let num = g.mul_scalar(inter_mean, 2.0 * hw);
    let num = g.add_scalar(num, 1.0);
    let p_mean = g.global_avg_pool(pc)?;
    let y_mean = g.global_avg_pool(y)?;
    let den = g.add(p_mean, y_mean)?;
    let den = g.mul_scalar(den, hw);
    let den = g.add_scalar(den, 1.0);
    let dice = g.div(num, den)?;
    let dice_mean = g.mean(dice);
    let neg_dice = g.mul_scalar(dice_mean, -1.0);
    let dice_loss = g.add_scalar(neg_dice, 1.0);
    g.add(bce, dice_loss)
}

/// Mean absolute difference between two probability maps.
pub fn loss_l1_dis(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = g.sub(a, b)?;
    let ad = g.abs(d);
    Ok(g.mean(ad))
}

impl DiscrepancyModel {
    pub fn init(seed: u64) -> Self {
        let mut rng = Rng::new(seed).substream(0x5E61);
        let [c1, c2, c3] = ENC_CHANNELS;
        let enc = [
            Tensor::kaiming_uniform(&[c1, 3, 3, 3], &mut rng),
            Tensor::kaiming_uniform(&[c2, c1, 3, 3], &mut rng),
            Tensor::kaiming_uniform(&[c3, c2, 3, 3], &mut rng),
        ];
        DiscrepancyModel {
            enc,
            dec_s: DecoderParams::init(&mut rng),
            dec_c: DecoderParams::init(&mut rng),
            dec_f: DecoderParams::init(&mut rng),
            stage: TrainStage::Fresh,
        }
    }

    fn forward_internal(&self, batch: Tensor, which: DecoderSet) -> Result<SegPass> {
        let mut g = Graph::new();
        let enc_ids: Vec<NodeId> = self.enc.iter().map(|t| g.param(t.clone())).collect();
        let x = g.constant(batch);

        // encoder: two strided stages then a dilated block at 1/4 resolution
        let c1 = g.conv2d(x, enc_ids[0], 1, 1, 1)?;
        let s1 = g.relu(c1);
        let p1 = g.max_pool2d(s1)?;
        let c2 = g.conv2d(p1, enc_ids[1], 1, 1, 1)?;
        let s2 = g.relu(c2);
        let p2 = g.max_pool2d(s2)?;
        let c3 = g.conv2d(p2, enc_ids[2], 1, 2, 2)?;
        let bott = g.relu(c3);

        let decode = |g: &mut Graph, dec: &DecoderParams| -> Result<(NodeId, Vec<NodeId>)> {
            let ids: Vec<NodeId> = dec.tensors().into_iter().map(|t| g.param(t)).collect();
            let a = g.conv2d(bott, ids[0], 1, 1, 1)?;
            let a = g.relu(a);
            let u1 = g.upsample_nearest(a, 2)?;
            let cat1 = g.concat_channel(u1, s2)?;
            let b = g.conv2d(cat1, ids[1], 1, 1, 1)?;
            let b = g.relu(b);
            let u2 = g.upsample_nearest(b, 2)?;
            let cat2 = g.concat_channel(u2, s1)?;
            // the 1x1 head reads the signed pre-activation: a ReLU here
            // has a dead zone at exactly logit 0 (= probability 0.5) that
            // sparse-foreground training falls into and cannot leave
            let c = g.conv2d(cat2, ids[2], 1, 1, 1)?;
            let logit = g.conv2d(c, ids[3], 1, 0, 1)?;
            Ok((g.sigmoid(logit), ids))
        };

        let (mut p_s, mut p_c, mut p_f) = (None, None, None);
        let (mut ds, mut dc, mut df) = (Vec::new(), Vec::new(), Vec::new());
        if which != DecoderSet::CoarseFine {
            let (p, ids) = decode(&mut g, &self.dec_s)?;
            p_s = Some(p);
            ds = ids;
        }
        if which != DecoderSet::StandardOnly {
            let (p, ids) = decode(&mut g, &self.dec_c)?;
            p_c = Some(p);
            dc = ids;
            let (p, ids) = decode(&mut g, &self.dec_f)?;
            p_f = Some(p);
            df = ids;
        }
        Ok(SegPass {
            graph: g,
            p_s,
            p_c,
            p_f,
            enc_ids,
            dec_s_ids: ds,
            dec_c_ids: dc,
            dec_f_ids: df,
        })
    }

    pub fn forward(&self, batch: Tensor) -> Result<SegPass> {
        self.forward_internal(batch, DecoderSet::All)
    }

    /// All three decoder probability maps for one image.
    pub fn predict_triple(&self, id: usize, image: &Image) -> Result<PredictionTriple> {
        let pass = self.forward(image.to_tensor())?;
        let take = |n: Option<NodeId>| pass.graph.value(n.unwrap()).data().to_vec();
        Ok(PredictionTriple {
            sample_id: id,
            h: image.h,
            w: image.w,
            p_s: take(pass.p_s),
            p_c: take(pass.p_c),
            p_f: take(pass.p_f),
        })
    }

    /// Global-average-pooled bottleneck features (one value per encoder
    /// channel), used as the embedding space for core-set selection.
    pub fn encode_gap(&self, image: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let enc_ids: Vec<NodeId> = self.enc.iter().map(|t| g.constant(t.clone())).collect();
        let x = g.constant(image.to_tensor());
        let c1 = g.conv2d(x, enc_ids[0], 1, 1, 1)?;
        let s1 = g.relu(c1);
        let p1 = g.max_pool2d(s1)?;
        let c2 = g.conv2d(p1, enc_ids[1], 1, 1, 1)?;
        let s2 = g.relu(c2);
        let p2 = g.max_pool2d(s2)?;
        let c3 = g.conv2d(p2, enc_ids[2], 1, 2, 2)?;
        let bott = g.relu(c3);
        let gap = g.global_avg_pool(bott)?;
        Ok(g.value(gap).data().to_vec())
    }

    /// Standard-decoder probability map, used for evaluation.
    pub fn predict_standard(&self, image: &Image) -> Result<Vec<f64>> {
        let pass = self.forward_internal(image.to_tensor(), DecoderSet::StandardOnly)?;
        Ok(pass.graph.value(pass.p_s.unwrap()).data().to_vec())
    }

    pub fn duplicate_decoders(&mut self) {
        self.dec_c = self.dec_s.clone();
        self.dec_f = self.dec_s.clone();
        if self.stage == TrainStage::Step1Done {
            self.stage = TrainStage::Duplicated;
        }
    }

    pub fn parameter_names() -> Vec<String> {
        let mut names = vec!["enc.conv1".into(), "enc.conv2".into(), "enc.conv3".into()];
        for d in ["dec_s", "dec_c", "dec_f"] {
            for i in 1..=3 {
                names.push(format!("{}.conv{}", d, i));
            }
            names.push(format!("{}.head", d));
        }
        names
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.enc.to_vec();
        p.extend(self.dec_s.tensors());
        p.extend(self.dec_c.tensors());
        p.extend(self.dec_f.tensors());
        p
    }

    pub fn set_parameters(&mut self, t: &[Tensor]) {
        self.enc = [t[0].clone(), t[1].clone(), t[2].clone()];
        self.dec_s.set(&t[3..7]);
        self.dec_c.set(&t[7..11]);
        self.dec_f.set(&t[11..15]);
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, Tensor)> = Self::parameter_names()
            .into_iter()
            .zip(self.parameters())
            .collect();
        checkpoint::save(path, &entries)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let entries = checkpoint::load(path)?;
        let names = Self::parameter_names();
        let mut tensors = Vec::with_capacity(names.len());
        for name in &names {
            let t = entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Schema(format!("checkpoint missing tensor {}", name)))?;
            tensors.push(t);
        }
        let mut model = DiscrepancyModel::init(0);
        model.set_parameters(&tensors);
        model.stage = TrainStage::Step2Done;
        Ok(model)
    }
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

fn check_finite(loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss diverged: {}", loss)));
    }
    Ok(loss)
}

fn collect_grads(grads: &Gradients, ids: &[NodeId]) -> Result<Vec<Tensor>> {
    ids.iter().map(|&id| grads.expect(id).cloned()).collect()
}

/// One epoch of step 1: supervised training of E and D_s on Y_s.
/// Returns the mean batch loss.
pub fn step1_epoch(
    model: &mut DiscrepancyModel,
    samples: &[SegSample],
    adam: &mut AdamState,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("step 1 requires a non-empty label set".into()));
    }
    let mut total = 0.0;
    let batches = shuffled_batches(samples.len(), batch_size, rng);
    let n_batches = batches.len();
    for idx in batches {
        let imgs: Vec<&Image> = idx.iter().map(|&i| &samples[i].image).collect();
        let ys: Vec<&Mask> = idx.iter().map(|&i| &samples[i].y_s).collect();
        let mut pass = model.forward_internal(batch_tensor(&imgs), DecoderSet::StandardOnly)?;
        let y = pass.graph.constant(mask_target(&ys));
        let loss = loss_ce_dice(&mut pass.graph, pass.p_s.unwrap(), y)?;
        total += check_finite(pass.graph.value(loss).item()?)?;
        let grads = pass.graph.backward(loss)?;

        let ids: Vec<NodeId> = pass.enc_ids.iter().chain(&pass.dec_s_ids).cloned().collect();
        let g = collect_grads(&grads, &ids)?;
        let mut params: Vec<Tensor> = model.enc.to_vec();
        params.extend(model.dec_s.tensors());
        adam.step(&mut params, &g)?;
        model.enc = [params[0].clone(), params[1].clone(), params[2].clone()];
        model.dec_s.set(&params[3..7]);
    }
    model.stage = TrainStage::Step1Done;
    Ok(total / n_batches as f64)
}

/// One epoch of step 2: supervised + discrepancy-maximizing training of
/// D_c and D_f with the encoder and D_s frozen. The frozen parameters are
/// never touched (they enter the graph as shared leaves and only decoder
/// gradients are applied).
pub fn step2_epoch(
    model: &mut DiscrepancyModel,
    samples: &[SegSample],
    adam: &mut AdamState,
    batch_size: usize,
    lambda_dis: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if model.stage == TrainStage::Fresh || model.stage == TrainStage::Step1Done {
        return Err(Error::Contract(
            "step 2 requires duplicated decoders (run step 1 and duplicate_decoders first)".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Contract("step 2 requires a non-empty label set".into()));
    }
    let mut total = 0.0;
    let batches = shuffled_batches(samples.len(), batch_size, rng);
    let n_batches = batches.len();
    for idx in batches {
        let imgs: Vec<&Image> = idx.iter().map(|&i| &samples[i].image).collect();
        let yc: Vec<&Mask> = idx.iter().map(|&i| &samples[i].y_c).collect();
        let yf: Vec<&Mask> = idx.iter().map(|&i| &samples[i].y_f).collect();
        let mut pass = model.forward_internal(batch_tensor(&imgs), DecoderSet::CoarseFine)?;
        let g = &mut pass.graph;
        let yc_t = g.constant(mask_target(&yc));
        let yf_t = g.constant(mask_target(&yf));
        let (p_c, p_f) = (pass.p_c.unwrap(), pass.p_f.unwrap());
        let ce_c = loss_ce_dice(g, p_c, yc_t)?;
        let ce_f = loss_ce_dice(g, p_f, yf_t)?;
        let dis = loss_l1_dis(g, p_c, p_f)?;
        let sup = g.add(ce_c, ce_f)?;
        let neg_dis = g.mul_scalar(dis, -lambda_dis);
        let loss = g.add(sup, neg_dis)?;
        total += check_finite(g.value(loss).item()?)?;
        let grads = g.backward(loss)?;

        let ids: Vec<NodeId> = pass.dec_c_ids.iter().chain(&pass.dec_f_ids).cloned().collect();
        let gr = collect_grads(&grads, &ids)?;
        let mut params = model.dec_c.tensors();
        params.extend(model.dec_f.tensors());
        adam.step(&mut params, &gr)?;
        model.dec_c.set(&params[..4]);
        model.dec_f.set(&params[4..]);
    }
    model.stage = TrainStage::Step2Done;
    Ok(total / n_batches as f64)
}

/// One epoch of step 3: pull D_c and D_f back toward D_s by minimizing
/// the pairwise L1 discrepancies. E and D_s stay frozen.
pub fn step3_epoch(
    model: &mut DiscrepancyModel,
    samples: &[SegSample],
    adam: &mut AdamState,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if model.stage != TrainStage::Step2Done {
        return Err(Error::Contract("step 3 requires step 2 to have run".into()));
    }
    if samples.is_empty() {
        return Err(Error::Contract("step 3 requires a non-empty label set".into()));
    }
    let mut total = 0.0;
    let batches = shuffled_batches(samples.len(), batch_size, rng);
    let n_batches = batches.len();
    for idx in batches {
        let imgs: Vec<&Image> = idx.iter().map(|&i| &samples[i].image).collect();
        let mut pass = model.forward_internal(batch_tensor(&imgs), DecoderSet::All)?;
        let g = &mut pass.graph;
        let (p_s, p_c, p_f) = (pass.p_s.unwrap(), pass.p_c.unwrap(), pass.p_f.unwrap());
        let d_c = loss_l1_dis(g, p_c, p_s)?;
        let d_f = loss_l1_dis(g, p_f, p_s)?;
        let loss = g.add(d_c, d_f)?;
        total += check_finite(g.value(loss).item()?)?;
        let grads = g.backward(loss)?;

        let ids: Vec<NodeId> = pass.dec_c_ids.iter().chain(&pass.dec_f_ids).cloned().collect();
        let gr = collect_grads(&grads, &ids)?;
        let mut params = model.dec_c.tensors();
        params.extend(model.dec_f.tensors());
        adam.step(&mut params, &gr)?;
        model.dec_c.set(&params[..4]);
        model.dec_f.set(&params[4..]);
    }
    Ok(total / n_batches as f64)
}

/// Full three-step schedule: E1 epochs of step 1, decoder duplication,
/// then E2 rounds of one step-2 epoch followed by one step-3 epoch.
/// Separate Adam state per step id; moments persist across rounds.
pub fn train_full(
    model: &mut DiscrepancyModel,
    samples: &[SegSample],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if samples.is_empty() {
        return Err(Error::Contract("training requires a non-empty label set".into()));
    }
    let mut rng = Rng::new(seed).substream(0x7214);
    let mut curve = Vec::new();
    let hp = AdamParams::with_lr(schedule.lr);

    let mut p1: Vec<Tensor> = model.enc.to_vec();
    p1.extend(model.dec_s.tensors());
    let mut adam1 = AdamState::new(&p1, hp);
    for epoch in 0..schedule.e1 {
        let loss = step1_epoch(model, samples, &mut adam1, schedule.batch_size, &mut rng)?;
        curve.push(CurvePoint { epoch, step: 1, loss });
    }

    model.duplicate_decoders();

    let mut pd = model.dec_c.tensors();
    pd.extend(model.dec_f.tensors());
    let mut adam2 = AdamState::new(&pd, hp);
    let mut adam3 = AdamState::new(&pd, hp);
    for round in 0..schedule.e2 {
        let epoch = schedule.e1 + round;
        let l2 = step2_epoch(
            model,
            samples,
            &mut adam2,
            schedule.batch_size,
            schedule.lambda_dis,
            &mut rng,
        )?;
        curve.push(CurvePoint { epoch, step: 2, loss: l2 });
        let l3 = step3_epoch(model, samples, &mut adam3, schedule.batch_size, &mut rng)?;
        curve.push(CurvePoint { epoch, step: 3, loss: l3 });
    }
    Ok(curve)
}

/// Mean discrepancy between the coarse and fine predictions over a set of
/// samples (diagnostic for the step-2/step-3 dynamics).
pub fn mean_cf_discrepancy(model: &DiscrepancyModel, samples: &[SegSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let t = model.predict_triple(s.id, &s.image)?;
        let n = t.p_c.len() as f64;
        total += t
            .p_c
            .iter()
            .zip(&t.p_f)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_dataset;
    use crate::tensor::gradcheck::{max_rel_error, numeric_gradient};

    fn tiny_samples(n_per_class: usize, seed: u64, size: usize) -> Vec<SegSample> {
        generate_dataset(size, [n_per_class, n_per_class, n_per_class], seed)
            .unwrap()
            .into_iter()
            .map(|s| SegSample::uniform(s.id, s.image, s.oracle_mask))
            .collect()
    }

    #[test]
    fn zero_input_zero_head_gives_half() {
        let model = DiscrepancyModel::init(3);
        let zero = Tensor::zeros(&[1, 3, 16, 16]);
        let pass = model.forward(zero).unwrap();
        for p in [pass.p_s, pass.p_c, pass.p_f] {
            for &v in pass.graph.value(p.unwrap()).data() {
                assert_eq!(v, 0.5);
            }
        }
    }

    #[test]
    fn outputs_in_unit_interval() {
        for seed in 0..20 {
            let mut model = DiscrepancyModel::init(seed);
            // non-zero heads so the check is not vacuous
            let mut rng = Rng::new(seed).substream(1);
            for d in [&mut model.dec_s, &mut model.dec_c, &mut model.dec_f] {
                d.head = Tensor::kaiming_uniform(&[1, DEC_CHANNELS[2], 1, 1], &mut rng);
            }
            let img_data: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.next_f64()).collect();
            let x = Tensor::new(vec![1, 3, 16, 16], img_data).unwrap();
            let pass = model.forward(x).unwrap();
            for p in [pass.p_s, pass.p_c, pass.p_f] {
                for &v in pass.graph.value(p.unwrap()).data() {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn duplication_makes_predictions_identical() {
        let mut model = DiscrepancyModel::init(7);
        model.duplicate_decoders();
        let samples = tiny_samples(1, 7, 32);
        let t = model.predict_triple(0, &samples[0].image).unwrap();
        assert_eq!(t.p_s, t.p_c);
        assert_eq!(t.p_s, t.p_f);
    }

    #[test]
    fn duplication_is_a_deep_copy() {
        let mut model = DiscrepancyModel::init(7);
        model.duplicate_decoders();
        model.dec_c.convs[0].data_mut()[0] += 1.0;
        assert_ne!(model.dec_c.convs[0], model.dec_s.convs[0]);
    }

    #[test]
    fn ce_dice_perfect_prediction_near_zero() {
        let mut g = Graph::new();
        let y_t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = g.constant(y_t.clone());
        let y = g.constant(y_t);
        let loss = loss_ce_dice(&mut g, p, y).unwrap();
        // smoothing keeps soft dice slightly below 1 even at P = Y
        assert!(g.value(loss).item().unwrap() < 1e-1);
        // the BCE part alone is clamp-epsilon small
        let mut g2 = Graph::new();
        let ones = g2.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y2 = g2.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let pc = g2.clamp(ones, 1e-6, 1.0 - 1e-6);
        let lp = g2.ln(pc);
        let term = g2.mul(y2, lp).unwrap();
        let m = g2.mean(term);
        let bce = g2.mul_scalar(m, -1.0);
        assert!(g2.value(bce).item().unwrap() < 1e-4);
    }

    #[test]
    fn ce_dice_uniform_half_bce_is_ln2() {
        let n = 16;
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[1, 1, 4, 4], 0.5));
        let mut y_data = vec![0.0; n];
        for v in y_data.iter_mut().take(n / 2) {
            *v = 1.0;
        }
        let y = g.constant(Tensor::new(vec![1, 1, 4, 4], y_data).unwrap());
        let loss = loss_ce_dice(&mut g, p, y).unwrap();
        // subtract the analytic dice part: 1 - (2*4+1)/(8+8+1)
        let dice_part = 1.0 - 9.0 / 17.0;
        let bce = g.value(loss).item().unwrap() - dice_part;
        assert!((bce - 2f64.ln()).abs() < 1e-9, "bce = {}", bce);
    }

    #[test]
    fn ce_dice_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let p_data: Vec<f64> = (0..16).map(|_| 0.05 + 0.9 * rng.next_f64()).collect();
        let y_data: Vec<f64> = (0..16).map(|_| (rng.next_f64() > 0.5) as u8 as f64).collect();
        let p_t = Tensor::new(vec![1, 1, 4, 4], p_data).unwrap();
        let y_t = Tensor::new(vec![1, 1, 4, 4], y_data).unwrap();

        let mut g = Graph::new();
        let p = g.param(p_t.clone());
        let y = g.constant(y_t.clone());
        let loss = loss_ce_dice(&mut g, p, y).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.expect(p).unwrap();

        let y_c = y_t.clone();
        let numeric = numeric_gradient(
            &move |inputs: &[Tensor]| {
                let mut g = Graph::new();
                let p = g.constant(inputs[0].clone());
                let y = g.constant(y_c.clone());
                let loss = loss_ce_dice(&mut g, p, y).unwrap();
                g.value(loss).item().unwrap()
            },
            &[p_t],
            0,
            1e-6,
        );
        assert!(max_rel_error(analytic, &numeric) < 1e-3);
    }

    #[test]
    fn l1_dis_basics() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[1, 1, 2, 2], 0.2));
        let b = g.constant(Tensor::full(&[1, 1, 2, 2], 0.7));
        let same = loss_l1_dis(&mut g, a, a).unwrap();
        assert_eq!(g.value(same).item().unwrap(), 0.0);
        let ab = loss_l1_dis(&mut g, a, b).unwrap();
        let ba = loss_l1_dis(&mut g, b, a).unwrap();
        assert!((g.value(ab).item().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(
            g.value(ab).item().unwrap(),
            g.value(ba).item().unwrap()
        );
        // symmetric on random maps too
        let mut rng = Rng::new(3);
        let ta = Tensor::new(vec![1, 1, 3, 3], (0..9).map(|_| rng.next_f64()).collect()).unwrap();
        let tb = Tensor::new(vec![1, 1, 3, 3], (0..9).map(|_| rng.next_f64()).collect()).unwrap();
        let na = g.constant(ta);
        let nb = g.constant(tb);
        let l1 = loss_l1_dis(&mut g, na, nb).unwrap();
        let l2 = loss_l1_dis(&mut g, nb, na).unwrap();
        assert_eq!(g.value(l1).item().unwrap(), g.value(l2).item().unwrap());
    }

    #[test]
    fn step1_reduces_loss_and_isolates_dc() {
        let samples = tiny_samples(3, 13, 32);
        let mut model = DiscrepancyModel::init(13);
        let dc_before = model.dec_c.clone();
        let hp = AdamParams::with_lr(0.003);
        let mut p: Vec<Tensor> = model.enc.to_vec();
        p.extend(model.dec_s.tensors());
        let mut adam = AdamState::new(&p, hp);
        let mut rng = Rng::new(13);
        let first = step1_epoch(&mut model, &samples, &mut adam, 4, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..11 {
            last = step1_epoch(&mut model, &samples, &mut adam, 4, &mut rng).unwrap();
        }
        assert!(last < first, "loss {} -> {}", first, last);
        assert_eq!(model.dec_c, dc_before);
    }

    #[test]
    fn step1_is_deterministic() {
        let samples = tiny_samples(2, 17, 32);
        let run = || {
            let mut model = DiscrepancyModel::init(17);
            let sched = TrainSchedule {
                e1: 2,
                e2: 0,
                lr: 0.003,
                batch_size: 4,
                lambda_dis: 1.0,
            };
            train_full(&mut model, &samples, &sched, 17).unwrap();
            model.dec_s.tensors()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step2_grows_discrepancy_and_freezes_encoder() {
        // coarse and fine labels must differ for the discrepancy to form:
        // with Y_c = Y_f and duplicated decoders the updates stay exactly
        // symmetric (|x| has zero gradient at 0). Mimic the CAM triple by
        // giving the coarse decoder a looser mask than the fine one.
        let samples: Vec<SegSample> = tiny_samples(3, 19, 32)
            .into_iter()
            .map(|mut s| {
                s.y_c = s.y_s.clone();
                s.y_f = Mask::empty(s.y_s.h, s.y_s.w);
                s
            })
            .collect();
        let mut model = DiscrepancyModel::init(19);
        let sched = TrainSchedule {
            e1: 3,
            e2: 0,
            lr: 0.003,
            batch_size: 4,
            lambda_dis: 1.0,
        };
        train_full(&mut model, &samples, &sched, 19).unwrap();
        model.duplicate_decoders();
        assert_eq!(mean_cf_discrepancy(&model, &samples).unwrap(), 0.0);

        let enc_before = model.enc.clone();
        let ds_before = model.dec_s.clone();
        let mut pd = model.dec_c.tensors();
        pd.extend(model.dec_f.tensors());
        let mut adam = AdamState::new(&pd, AdamParams::with_lr(0.003));
        let mut rng = Rng::new(19);
        step2_epoch(&mut model, &samples, &mut adam, 4, 1.0, &mut rng).unwrap();
        assert!(mean_cf_discrepancy(&model, &samples).unwrap() > 0.0);
        assert_eq!(model.enc, enc_before);
        assert_eq!(model.dec_s, ds_before);
    }

    #[test]
    fn step2_before_duplication_is_a_contract_error() {
        let samples = tiny_samples(1, 3, 32);
        let mut model = DiscrepancyModel::init(3);
        let mut pd = model.dec_c.tensors();
        pd.extend(model.dec_f.tensors());
        let mut adam = AdamState::new(&pd, AdamParams::with_lr(0.003));
        let mut rng = Rng::new(3);
        assert!(matches!(
            step2_epoch(&mut model, &samples, &mut adam, 4, 1.0, &mut rng),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            step3_epoch(&mut model, &samples, &mut adam, 4, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn step3_objective_decreases() {
        let samples = tiny_samples(2, 23, 32);
        let mut model = DiscrepancyModel::init(23);
        let sched = TrainSchedule {
            e1: 2,
            e2: 0,
            lr: 0.003,
            batch_size: 4,
            lambda_dis: 1.0,
        };
        train_full(&mut model, &samples, &sched, 23).unwrap();
        model.duplicate_decoders();
        let mut pd = model.dec_c.tensors();
        pd.extend(model.dec_f.tensors());
        let mut adam2 = AdamState::new(&pd, AdamParams::with_lr(0.01));
        let mut rng = Rng::new(23);
        step2_epoch(&mut model, &samples, &mut adam2, 4, 1.0, &mut rng).unwrap();

        let before = {
            // step-3 objective: L1(P_c,P_s) + L1(P_f,P_s) over the set
            let mut acc = 0.0;
            for s in &samples {
                let t = model.predict_triple(s.id, &s.image).unwrap();
                let n = t.p_s.len() as f64;
                acc += t.p_c.iter().zip(&t.p_s).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
                acc += t.p_f.iter().zip(&t.p_s).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            }
            acc
        };
        let mut adam3 = AdamState::new(&pd, AdamParams::with_lr(1e-4));
        for _ in 0..3 {
            step3_epoch(&mut model, &samples, &mut adam3, 4, &mut rng).unwrap();
        }
        let after = {
            let mut acc = 0.0;
            for s in &samples {
                let t = model.predict_triple(s.id, &s.image).unwrap();
                let n = t.p_s.len() as f64;
                acc += t.p_c.iter().zip(&t.p_s).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
                acc += t.p_f.iter().zip(&t.p_s).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            }
            acc
        };
        assert!(after < before, "{} -> {}", before, after);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = DiscrepancyModel::init(29);
        model.duplicate_decoders();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save_checkpoint(&path).unwrap();
        let loaded = DiscrepancyModel::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.parameters(), model.parameters());
        assert_eq!(loaded.dec_c, loaded.dec_s);
    }
}
