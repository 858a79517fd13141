//! Active-learning orchestration: the label store lifecycle (CAM labels
//! promoted to pseudo labels or oracle ground truth), per-cycle retraining,
//! the selection strategies, and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cam::CamTriple;
use crate::campus::{
    self, dice_coefficient, dice_distance, prediction_entropy, select_ground_truth,
    select_pseudo, EntropyMode, ScoreRecord, PRED_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::img::Mask;
use crate::segmodel::{train_full, DiscrepancyModel, SegSample, TrainSchedule};
use crate::synthgen::SampleRecord;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Random,
    DiceNaive,
    Entropy,
    CoresetGreedy,
    Deal,
    DealNoPseudo,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Random,
        Strategy::DiceNaive,
        Strategy::Entropy,
        Strategy::CoresetGreedy,
        Strategy::Deal,
        Strategy::DealNoPseudo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::DiceNaive => "dice",
            Strategy::Entropy => "entropy",
            Strategy::CoresetGreedy => "coreset",
            Strategy::Deal => "deal",
            Strategy::DealNoPseudo => "deal-no-pseudo",
        }
    }

    pub fn uses_pseudo(&self) -> bool {
        matches!(self, Strategy::Deal)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy '{}' (expected one of: {})",
                    s,
                    Strategy::ALL.map(|s| s.name()).join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    Cam,
    Pseudo,
    Gt,
}

#[derive(Clone, Debug)]
pub struct LabelRecord {
    pub sample_id: usize,
    pub source: LabelSource,
    /// the CAM triple is retained even after promotion
    pub cam: CamTriple,
    /// promoted label (pseudo prediction or oracle mask); None for CAM source
    pub mask: Option<Mask>,
    pub cycle_assigned: usize,
}

/// Per-sample label state for the training fold. Transitions are one-way:
/// CAM -> PSEUDO, CAM -> GT, PSEUDO -> GT; GT is terminal.
#[derive(Clone, Debug, Default)]
pub struct LabelStore {
    records: BTreeMap<usize, LabelRecord>,
}

impl LabelStore {
    pub fn from_cams(cams: &[CamTriple]) -> Self {
        let records = cams
            .iter()
            .map(|c| {
                (
                    c.sample_id,
                    LabelRecord {
                        sample_id: c.sample_id,
                        source: LabelSource::Cam,
                        cam: c.clone(),
                        mask: None,
                        cycle_assigned: 0,
                    },
                )
            })
            .collect();
        LabelStore { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&LabelRecord> {
        self.records.get(&id)
    }

    pub fn count(&self, source: LabelSource) -> usize {
        self.records.values().filter(|r| r.source == source).count()
    }

    /// Sample ids still carrying their CAM label, ascending.
    pub fn cam_ids(&self) -> Vec<usize> {
        self.records
            .values()
            .filter(|r| r.source == LabelSource::Cam)
            .map(|r| r.sample_id)
            .collect()
    }

    pub fn gt_ids(&self) -> Vec<usize> {
        self.records
            .values()
            .filter(|r| r.source == LabelSource::Gt)
            .map(|r| r.sample_id)
            .collect()
    }

    pub fn promote_pseudo(&mut self, id: usize, mask: Mask, cycle: usize) -> Result<()> {
        let r = self
            .records
            .get_mut(&id)
            .ok_or_else(|| Error::Contract(format!("unknown sample id {}", id)))?;
        if r.source != LabelSource::Cam {
            return Err(Error::Contract(format!(
                "sample {} is {:?}; only CAM labels can become pseudo labels",
                id, r.source
            )));
        }
        r.source = LabelSource::Pseudo;
        r.mask = Some(mask);
        r.cycle_assigned = cycle;
        Ok(())
    }

    pub fn promote_gt(&mut self, id: usize, mask: Mask, cycle: usize) -> Result<()> {
        let r = self
            .records
            .get_mut(&id)
            .ok_or_else(|| Error::Contract(format!("unknown sample id {}", id)))?;
        if r.source == LabelSource::Gt {
            return Err(Error::Contract(format!(
                "sample {} already has a ground-truth label (GT is terminal)",
                id
            )));
        }
        r.source = LabelSource::Gt;
        r.mask = Some(mask);
        r.cycle_assigned = cycle;
        Ok(())
    }

    /// Materialize the training set under the current labels. CAM samples
    /// carry their triple; promoted samples use the single stored mask for
    /// all three decoders.
    pub fn seg_samples(&self, by_id: &BTreeMap<usize, &SampleRecord>) -> Result<Vec<SegSample>> {
        self.records
            .values()
            .map(|r| {
                let rec = by_id
                    .get(&r.sample_id)
                    .ok_or_else(|| Error::Contract(format!("sample {} not in fold", r.sample_id)))?;
                Ok(match (&r.source, &r.mask) {
                    (LabelSource::Cam, _) => SegSample {
                        id: r.sample_id,
                        image: rec.image.clone(),
                        y_s: r.cam.standard.clone(),
                        y_c: r.cam.coarse.clone(),
                        y_f: r.cam.fine.clone(),
                    },
                    (_, Some(mask)) => SegSample::uniform(r.sample_id, rec.image.clone(), mask.clone()),
                    (_, None) => {
                        return Err(Error::Contract(format!(
                            "promoted sample {} has no stored mask",
                            r.sample_id
                        )))
                    }
                })
            })
            .collect()
    }
}

/// Oracle annotation: ground-truth masks straight from the generator.
pub fn oracle_annotate<'a>(
    ids: &[usize],
    by_id: &BTreeMap<usize, &'a SampleRecord>,
) -> Result<Vec<&'a Mask>> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|r| &r.oracle_mask)
                .ok_or_else(|| Error::Contract(format!("oracle_annotate: unknown sample id {}", id)))
        })
        .collect()
}

/// Mean Dice of the standard decoder against oracle masks over a fold.
/// Both-empty masks count as Dice 1.
pub fn evaluate(model: &DiscrepancyModel, fold: &[SampleRecord]) -> Result<f64> {
    if fold.is_empty() {
        return Err(Error::Contract("evaluate: empty test fold".into()));
    }
    let mut total = 0.0;
    for s in fold {
        let p = model.predict_standard(&s.image)?;
        let pred = Mask::from_prob(&p, s.image.h, s.image.w, PRED_THRESHOLD);
        total += dice_coefficient(&pred, &s.oracle_mask)?;
    }
    Ok(total / fold.len() as f64)
}

/// Ablation toggles for the CAMPUS criterion (Table 2). All rows share the
/// same code path; disabled terms are replaced by constants in the scored
/// quantities only.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub entropy_mode: EntropyMode,
    /// false: ignore D_c/D_f entirely (S_cd from D(P_s, Y_s), S_md constant)
    pub use_discrepancy: bool,
    /// false: replace S_md with a constant in Eq. 8-9
    pub use_model_divergence: bool,
    /// false: replace S_cd with a constant
    pub use_cam_divergence: bool,
    pub knee_sensitivity: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            entropy_mode: EntropyMode::ForegroundTerm,
            use_discrepancy: true,
            use_model_divergence: true,
            use_cam_divergence: true,
            knee_sensitivity: 1.0,
        }
    }
}

/// Neutral stand-in for a disabled divergence term: the midpoint of the
/// S_md clamp range, keeping both Eq. 8 factors strictly positive.
const DISABLED_TERM: f64 = 1.5;

fn score_with_config(
    model: &DiscrepancyModel,
    rec: &SampleRecord,
    y_s: &Mask,
    cfg: &ScoreConfig,
) -> Result<(ScoreRecord, Vec<f64>)> {
    let triple = model.predict_triple(rec.id, &rec.image)?;
    let s_e = prediction_entropy(&triple.p_s, cfg.entropy_mode);
    let s_md = if cfg.use_discrepancy && cfg.use_model_divergence {
        campus::model_divergence(&triple, cfg.entropy_mode)?
    } else {
        DISABLED_TERM
    };
    let s_cd = if !cfg.use_cam_divergence {
        DISABLED_TERM
    } else if cfg.use_discrepancy {
        campus::cam_divergence(&triple, y_s)?
    } else {
        dice_distance(&triple.mask_s(), y_s)?
    };
    let p_s = triple.p_s;
    Ok((
        ScoreRecord {
            sample_id: rec.id,
            s_e,
            s_md,
            s_cd,
            s_p: campus::pseudo_score(s_md, s_cd),
            s_g: campus::gt_score(s_md, s_cd),
        },
        p_s,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    KeepCam,
    Pseudo,
    Gt,
}

/// One row of the per-cycle selection CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub cycle: usize,
    #[serde(flatten)]
    pub score: ScoreRecord,
    pub decision: Decision,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub n_cam: usize,
    pub n_pseudo: usize,
    pub n_gt: usize,
    /// pseudo labels found by the knee this cycle (0 when not selecting)
    pub k_p: usize,
    pub dice: f64,
    /// wall-clock seconds; excluded from determinism-checked outputs
    pub wall_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub strategy: Strategy,
    pub fold: usize,
    pub seed: u64,
    /// CAM-only model before any selection
    pub initial_dice: f64,
    pub cycles: Vec<CycleReport>,
    pub decisions: Vec<DecisionRecord>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AlConfig {
    pub strategy: Strategy,
    pub cycles: usize,
    /// GT budget per cycle as a fraction of the training fold
    pub gt_fraction: f64,
    /// select pseudo labels every cycle instead of only before the first
    pub pseudo_every_cycle: bool,
    pub schedule: TrainSchedule,
    pub score: ScoreConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            strategy: Strategy::Deal,
            cycles: 3,
            gt_fraction: 0.10,
            pseudo_every_cycle: false,
            schedule: TrainSchedule::default(),
            score: ScoreConfig::default(),
        }
    }
}

fn train_from_store(
    store: &LabelStore,
    by_id: &BTreeMap<usize, &SampleRecord>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<DiscrepancyModel> {
    let samples = store.seg_samples(by_id)?;
    let mut model = DiscrepancyModel::init(seed);
    train_full(&mut model, &samples, schedule, seed)?;
    Ok(model)
}

fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-center greedy: repeatedly pick the pool point farthest from its
/// nearest center. Exposed for the toy-geometry oracle test.
pub fn k_center_greedy(
    pool: &[(usize, Vec<f64>)],
    centers: &[Vec<f64>],
    k: usize,
) -> Vec<usize> {
    let mut centers: Vec<Vec<f64>> = centers.to_vec();
    let mut remaining: Vec<&(usize, Vec<f64>)> = pool.iter().collect();
    let mut picked = Vec::new();
    while picked.len() < k && !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                let da = if centers.is_empty() {
                    f64::INFINITY
                } else {
                    centers.iter().map(|c| squared_dist(&a.1, c)).fold(f64::INFINITY, f64::min)
                };
                let db = if centers.is_empty() {
                    f64::INFINITY
                } else {
                    centers.iter().map(|c| squared_dist(&b.1, c)).fold(f64::INFINITY, f64::min)
                };
                da.partial_cmp(&db)
                    .unwrap()
                    // farthest first; ties to the lower id
                    .then(b.0.cmp(&a.0))
            })
            .map(|(i, _)| i)
            .unwrap();
        let (id, feat) = remaining.remove(best).clone();
        centers.push(feat);
        picked.push(id);
    }
    picked
}

/// GT selection for the non-CAMPUS strategies. `cycle` is 1-based.
pub fn baseline_select(
    strategy: Strategy,
    model: &DiscrepancyModel,
    store: &LabelStore,
    by_id: &BTreeMap<usize, &SampleRecord>,
    k_g: usize,
    cycle: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let pool = store.cam_ids();
    let k = k_g.min(pool.len());
    match strategy {
        Strategy::Deal | Strategy::DealNoPseudo => Err(Error::Contract(
            "baseline_select does not handle the DEAL strategies".into(),
        )),
        Strategy::Random => {
            let mut ids = pool;
            rng.shuffle(&mut ids);
            let mut picked: Vec<usize> = ids.into_iter().take(k).collect();
            picked.sort_unstable();
            Ok(picked)
        }
        Strategy::DiceNaive | Strategy::Entropy => {
            let mut scored: Vec<(usize, f64)> = Vec::with_capacity(pool.len());
            for id in pool {
                let rec = by_id[&id];
                let p = model.predict_standard(&rec.image)?;
                let s = match strategy {
                    Strategy::DiceNaive => {
                        let pred = Mask::from_prob(&p, rec.image.h, rec.image.w, PRED_THRESHOLD);
                        dice_distance(&pred, &store.get(id).unwrap().cam.standard)?
                    }
                    _ => prediction_entropy(&p, EntropyMode::ForegroundTerm),
                };
                scored.push((id, s));
            }
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut picked: Vec<usize> = scored.into_iter().take(k).map(|(id, _)| id).collect();
            picked.sort_unstable();
            Ok(picked)
        }
        Strategy::CoresetGreedy => {
            let mut picked: Vec<usize> = Vec::new();
            let mut pool = pool;
            // first cycle has no informative centers yet: seed half the
            // budget randomly
            if cycle <= 1 {
                rng.shuffle(&mut pool);
                picked.extend(pool.drain(..(k / 2).min(pool.len())));
                pool.sort_unstable();
            }
            let centers: Vec<Vec<f64>> = store
                .gt_ids()
                .into_iter()
                .chain(picked.iter().cloned())
                .map(|id| model.encode_gap(&by_id[&id].image))
                .collect::<Result<_>>()?;
            let feats: Vec<(usize, Vec<f64>)> = pool
                .iter()
                .map(|&id| Ok((id, model.encode_gap(&by_id[&id].image)?)))
                .collect::<Result<_>>()?;
            picked.extend(k_center_greedy(&feats, &centers, k - picked.len()));
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// Score all CAM-labeled samples, run pseudo selection (strictly above the
/// knee) and promote the picks with their binarized standard predictions.
fn deal_pseudo_round(
    model: &DiscrepancyModel,
    store: &mut LabelStore,
    by_id: &BTreeMap<usize, &SampleRecord>,
    cfg: &ScoreConfig,
    cycle: usize,
) -> Result<(Vec<ScoreRecord>, Vec<usize>)> {
    let mut records = Vec::new();
    let mut preds: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for id in store.cam_ids() {
        let rec = by_id[&id];
        let y_s = &store.get(id).unwrap().cam.standard;
        let (score, p_s) = score_with_config(model, rec, y_s, cfg)?;
        records.push(score);
        preds.insert(id, p_s);
    }
    let picks = select_pseudo(&records, cfg.knee_sensitivity);
    for &id in &picks {
        let rec = by_id[&id];
        let mask = Mask::from_prob(&preds[&id], rec.image.h, rec.image.w, PRED_THRESHOLD);
        store.promote_pseudo(id, mask, cycle)?;
    }
    Ok((records, picks))
}

fn push_decisions(
    out: &mut Vec<DecisionRecord>,
    cycle: usize,
    records: &[ScoreRecord],
    pseudo: &[usize],
    gt: &[usize],
) {
    for r in records {
        let decision = if gt.contains(&r.sample_id) {
            Decision::Gt
        } else if pseudo.contains(&r.sample_id) {
            Decision::Pseudo
        } else {
            Decision::KeepCam
        };
        out.push(DecisionRecord {
            cycle,
            score: *r,
            decision,
        });
    }
}

/// One full active-learning experiment on a single train/test split.
pub fn run_experiment(
    train: &[SampleRecord],
    test: &[SampleRecord],
    cams: &[CamTriple],
    cfg: &AlConfig,
    fold: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    if cams.len() != train.len() {
        return Err(Error::MissingArtifact {
            path: "<cam triples>".into(),
            hint: format!(
                "expected one CAM triple per training sample ({} vs {}); run gen-cams first",
                cams.len(),
                train.len()
            ),
        });
    }
    let by_id: BTreeMap<usize, &SampleRecord> = train.iter().map(|s| (s.id, s)).collect();
    let mut store = LabelStore::from_cams(cams);
    let k_g = ((store.len() as f64) * cfg.gt_fraction).round() as usize;
    let exp_seed = Rng::new(seed).substream(fold as u64).next_u64();
    let mut rng = Rng::new(exp_seed);

    let mut decisions = Vec::new();
    let mut cycles = Vec::new();

    // cycle 0: CAM-only initial model
    let t0 = Instant::now();
    let mut model = train_from_store(&store, &by_id, &cfg.schedule, exp_seed)?;
    let initial_dice = evaluate(&model, test)?;
    let mut dice0 = initial_dice;
    let mut k_p0 = 0;

    // DEAL selects pseudo labels before the first cycle and retrains
    if cfg.strategy.uses_pseudo() {
        let (records, picks) = deal_pseudo_round(&model, &mut store, &by_id, &cfg.score, 0)?;
        push_decisions(&mut decisions, 0, &records, &picks, &[]);
        k_p0 = picks.len();
        if !picks.is_empty() {
            model = train_from_store(&store, &by_id, &cfg.schedule, exp_seed)?;
            dice0 = evaluate(&model, test)?;
        }
    }
    cycles.push(CycleReport {
        cycle: 0,
        n_cam: store.count(LabelSource::Cam),
        n_pseudo: store.count(LabelSource::Pseudo),
        n_gt: store.count(LabelSource::Gt),
        k_p: k_p0,
        dice: dice0,
        wall_s: t0.elapsed().as_secs_f64(),
    });

    for cycle in 1..=cfg.cycles {
        let t = Instant::now();
        let mut k_p = 0;
        let gt_picks = match cfg.strategy {
            Strategy::Deal | Strategy::DealNoPseudo => {
                let (records, pseudo_picks) = if cfg.strategy.uses_pseudo() && cfg.pseudo_every_cycle
                {
                    let (r, p) = deal_pseudo_round(&model, &mut store, &by_id, &cfg.score, cycle)?;
                    k_p = p.len();
                    (r, p)
                } else {
                    let mut records = Vec::new();
                    for id in store.cam_ids() {
                        let rec = by_id[&id];
                        let y_s = &store.get(id).unwrap().cam.standard;
                        let (score, _) = score_with_config(&model, rec, y_s, &cfg.score)?;
                        records.push(score);
                    }
                    (records, Vec::new())
                };
                let picks = select_ground_truth(&records, k_g, &pseudo_picks);
                push_decisions(&mut decisions, cycle, &records, &pseudo_picks, &picks);
                picks
            }
            _ => baseline_select(cfg.strategy, &model, &store, &by_id, k_g, cycle, &mut rng)?,
        };
        let masks = oracle_annotate(&gt_picks, &by_id)?;
        for (&id, mask) in gt_picks.iter().zip(masks) {
            store.promote_gt(id, mask.clone(), cycle)?;
        }
        model = train_from_store(&store, &by_id, &cfg.schedule, exp_seed)?;
        cycles.push(CycleReport {
            cycle,
            n_cam: store.count(LabelSource::Cam),
            n_pseudo: store.count(LabelSource::Pseudo),
            n_gt: store.count(LabelSource::Gt),
            k_p,
            dice: evaluate(&model, test)?,
            wall_s: t.elapsed().as_secs_f64(),
        });
    }

    Ok(ExperimentResult {
        strategy: cfg.strategy,
        fold,
        seed,
        initial_dice,
        cycles,
        decisions,
    })
}

/// Upper-reference run: every training sample gets its oracle mask.
pub fn run_full_supervision(
    train: &[SampleRecord],
    test: &[SampleRecord],
    schedule: &TrainSchedule,
    fold: usize,
    seed: u64,
) -> Result<f64> {
    let samples: Vec<SegSample> = train
        .iter()
        .map(|s| SegSample::uniform(s.id, s.image.clone(), s.oracle_mask.clone()))
        .collect();
    let exp_seed = Rng::new(seed).substream(fold as u64).next_u64();
    let mut model = DiscrepancyModel::init(exp_seed);
    train_full(&mut model, &samples, schedule, exp_seed)?;
    evaluate(&model, test)
}

/// Per-cycle mean and population standard deviation across folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KfoldSummary {
    pub strategy: Strategy,
    pub cycle: usize,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub per_fold: Vec<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize_kfold(strategy: Strategy, results: &[ExperimentResult]) -> Vec<KfoldSummary> {
    let cycles = results.iter().map(|r| r.cycles.len()).min().unwrap_or(0);
    (0..cycles)
        .map(|c| {
            let per_fold: Vec<f64> = results.iter().map(|r| r.cycles[c].dice).collect();
            let (mean_dice, std_dice) = mean_std(&per_fold);
            KfoldSummary {
                strategy,
                cycle: c,
                mean_dice,
                std_dice,
                per_fold,
            }
        })
        .collect()
}

/// One row of the Table 2 ablation: Dice deltas vs the CAM-only initial
/// model for the pseudo-only setting and for 20% GT (two cycles).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub score: ScoreConfig,
    pub pseudo_delta: f64,
    pub gt_delta: f64,
}

pub fn ablation_rows() -> Vec<(String, ScoreConfig)> {
    let full = ScoreConfig::default();
    vec![
        ("full".into(), full),
        (
            "no-discrepancy-model".into(),
            ScoreConfig {
                use_discrepancy: false,
                ..full
            },
        ),
        (
            "no-model-divergence".into(),
            ScoreConfig {
                use_model_divergence: false,
                ..full
            },
        ),
        (
            "no-cam-divergence".into(),
            ScoreConfig {
                use_cam_divergence: false,
                ..full
            },
        ),
    ]
}

/// Run the four Table 2 rows on one train/test split. Pseudo-label selection
/// and ground-truth selection are separate settings: the pseudo column
/// promotes pseudo labels once and retrains, the GT column acquires two 10%
/// oracle budgets with no pseudo promotion. Only the scored quantities
/// differ between rows.
pub fn run_ablation(
    train: &[SampleRecord],
    test: &[SampleRecord],
    cams: &[CamTriple],
    base: &AlConfig,
    fold: usize,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, score) in ablation_rows() {
        let pseudo_cfg = AlConfig {
            strategy: Strategy::Deal,
            cycles: 0,
            score,
            ..*base
        };
        let gt_cfg = AlConfig {
            strategy: Strategy::DealNoPseudo,
            cycles: 2,
            score,
            ..*base
        };
        let pseudo = run_experiment(train, test, cams, &pseudo_cfg, fold, seed)?;
        let gt = run_experiment(train, test, cams, &gt_cfg, fold, seed)?;
        rows.push(AblationRow {
            name,
            score,
            pseudo_delta: pseudo.cycles[0].dice - pseudo.initial_dice,
            gt_delta: gt.cycles[2].dice - gt.initial_dice,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cam::CamTriple;
    use crate::synthgen::generate_dataset;
    use proptest::prelude::{prop, prop_assert_eq, proptest, ProptestConfig};

    fn cam_triple(id: usize, h: usize, w: usize) -> CamTriple {
        CamTriple {
            sample_id: id,
            standard: Mask::empty(h, w),
            coarse: Mask::empty(h, w),
            fine: Mask::empty(h, w),
        }
    }

    #[test]
    fn store_transitions() {
        let cams: Vec<CamTriple> = (0..4).map(|i| cam_triple(i, 4, 4)).collect();
        let mut store = LabelStore::from_cams(&cams);
        assert_eq!(store.count(LabelSource::Cam), 4);

        store.promote_pseudo(0, Mask::empty(4, 4), 0).unwrap();
        store.promote_gt(1, Mask::full(4, 4), 1).unwrap();
        store.promote_gt(0, Mask::full(4, 4), 2).unwrap(); // PSEUDO -> GT ok
        assert!(store.promote_pseudo(1, Mask::empty(4, 4), 2).is_err()); // GT terminal
        assert!(store.promote_gt(1, Mask::full(4, 4), 2).is_err());
        assert!(store.promote_pseudo(0, Mask::empty(4, 4), 2).is_err()); // not CAM anymore
        assert_eq!(store.count(LabelSource::Gt), 2);
        assert_eq!(store.cam_ids(), vec![2, 3]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn store_state_machine_holds(ops in prop::collection::vec((0usize..8, prop::bool::ANY), 0..40)) {
            let cams: Vec<CamTriple> = (0..8).map(|i| cam_triple(i, 2, 2)).collect();
            let mut store = LabelStore::from_cams(&cams);
            let mut shadow: Vec<LabelSource> = vec![LabelSource::Cam; 8];
            for (i, (id, to_gt)) in ops.into_iter().enumerate() {
                let res = if to_gt {
                    store.promote_gt(id, Mask::full(2, 2), i)
                } else {
                    store.promote_pseudo(id, Mask::empty(2, 2), i)
                };
                let legal = match (shadow[id], to_gt) {
                    (LabelSource::Gt, _) => false,
                    (LabelSource::Pseudo, false) => false,
                    _ => true,
                };
                prop_assert_eq!(res.is_ok(), legal);
                if legal {
                    shadow[id] = if to_gt { LabelSource::Gt } else { LabelSource::Pseudo };
                }
                // promoting one sample never disturbs the others
                for j in 0..8 {
                    prop_assert_eq!(store.get(j).unwrap().source, shadow[j]);
                }
            }
            let total = store.count(LabelSource::Cam)
                + store.count(LabelSource::Pseudo)
                + store.count(LabelSource::Gt);
            prop_assert_eq!(total, 8);
        }
    }

    #[test]
    fn oracle_masks_come_from_the_generator() {
        let records = generate_dataset(32, [2, 2, 2], 3).unwrap();
        let by_id: BTreeMap<usize, &SampleRecord> = records.iter().map(|s| (s.id, s)).collect();
        let ids: Vec<usize> = records.iter().map(|s| s.id).collect();
        let masks = oracle_annotate(&ids, &by_id).unwrap();
        for (m, r) in masks.iter().zip(&records) {
            assert_eq!(m.data, r.oracle_mask.data);
        }
        // idempotent
        let again = oracle_annotate(&ids, &by_id).unwrap();
        for (a, b) in masks.iter().zip(again) {
            assert_eq!(a.data, b.data);
        }
        assert!(oracle_annotate(&[999], &by_id).is_err());
    }

    #[test]
    fn evaluate_matches_dice_distance_identity() {
        // Dice = 1 - dice_distance on every sample; checked on random masks
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let a = Mask {
                h: 4,
                w: 4,
                data: (0..16).map(|_| rng.next_f64() > 0.5).collect(),
            };
            let b = Mask {
                h: 4,
                w: 4,
                data: (0..16).map(|_| rng.next_f64() > 0.5).collect(),
            };
            let d = dice_coefficient(&a, &b).unwrap();
            let dist = dice_distance(&a, &b).unwrap();
            assert_eq!(d, 1.0 - dist);
        }
    }

    #[test]
    fn coreset_picks_the_far_point() {
        // centers {(0,0)}; pool {(1,0), (10,0)}; K=1 -> picks (10,0)
        let pool = vec![(1usize, vec![1.0, 0.0]), (2usize, vec![10.0, 0.0])];
        let centers = vec![vec![0.0, 0.0]];
        assert_eq!(k_center_greedy(&pool, &centers, 1), vec![2]);
        // brute-force max-min oracle agrees
        let best = pool
            .iter()
            .max_by(|a, b| {
                let da = squared_dist(&a.1, &centers[0]);
                let db = squared_dist(&b.1, &centers[0]);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(best, 2);
    }

    #[test]
    fn random_selection_is_reproducible() {
        let cams: Vec<CamTriple> = (0..20).map(|i| cam_triple(i, 4, 4)).collect();
        let store = LabelStore::from_cams(&cams);
        let by_id = BTreeMap::new();
        let model = DiscrepancyModel::init(1);
        let pick = |seed: u64| {
            let mut rng = Rng::new(seed);
            baseline_select(Strategy::Random, &model, &store, &by_id, 5, 1, &mut rng).unwrap()
        };
        assert_eq!(pick(9), pick(9));
        assert_eq!(pick(9).len(), 5);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (1.25f64).sqrt()).abs() < 1e-12);
    }
}
