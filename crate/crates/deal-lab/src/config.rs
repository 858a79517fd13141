//! Experiment configuration: a sectioned TOML file with hard errors on
//! unknown keys, plus validation of the cross-field invariants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alloop::{AlConfig, ScoreConfig, Strategy};
use crate::cam::{CamConfig, CamThresholds};
use crate::cam::crf::CrfParams;
use crate::campus::EntropyMode;
use crate::error::{Error, Result};
use crate::segmodel::TrainSchedule;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub normal: usize,
    pub vascular: usize,
    pub inflammatory: usize,
    pub seed: u64,
    pub k_folds: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 64,
            normal: 600,
            vascular: 605,
            inflammatory: 607,
            seed: 17,
            k_folds: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub threshold_standard: f64,
    pub threshold_coarse: f64,
    pub threshold_fine: f64,
    pub crf_w1: f64,
    pub crf_theta_alpha: f64,
    pub crf_theta_beta: f64,
    pub crf_w2: f64,
    pub crf_theta_gamma: f64,
    pub crf_iterations: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let cam = CamConfig::default();
        ClassifierConfig {
            epochs: cam.epochs,
            lr: cam.lr,
            dropout: cam.dropout,
            batch_size: cam.batch_size,
            threshold_standard: cam.thresholds.t_standard,
            threshold_coarse: cam.thresholds.t_coarse,
            threshold_fine: cam.thresholds.t_fine,
            crf_w1: cam.crf.w1,
            crf_theta_alpha: cam.crf.theta_alpha,
            crf_theta_beta: cam.crf.theta_beta,
            crf_w2: cam.crf.w2,
            crf_theta_gamma: cam.crf.theta_gamma,
            crf_iterations: cam.crf.iterations,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegConfig {
    pub e1: usize,
    pub e2: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda_dis: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        let s = TrainSchedule::default();
        SegConfig {
            e1: s.e1,
            e2: s.e2,
            lr: s.lr,
            batch_size: s.batch_size,
            lambda_dis: s.lambda_dis,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveLearningConfig {
    pub strategy: String,
    pub cycles: usize,
    pub gt_fraction: f64,
    pub pseudo_every_cycle: bool,
    /// "foreground" (paper-literal) or "full-binary"
    pub entropy_mode: String,
    pub knee_sensitivity: f64,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        ActiveLearningConfig {
            strategy: "deal".into(),
            cycles: 3,
            gt_fraction: 0.10,
            pseudo_every_cycle: false,
            entropy_mode: "foreground".into(),
            knee_sensitivity: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub classifier: ClassifierConfig,
    pub segmentation: SegConfig,
    pub active_learning: ActiveLearningConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            // toml errors carry line/column spans in their message
            Error::Config(format!("{}: {}", path.display(), e))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing config: {}", e)))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.cam_config()?.thresholds.validate()?;
        self.crf_params().validate()?;
        let f = self.active_learning.gt_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "active_learning.gt_fraction must be in (0, 1], got {}",
                f
            )));
        }
        if self.dataset.k_folds < 2 {
            return Err(Error::Config("dataset.k_folds must be >= 2".into()));
        }
        self.strategy()?;
        self.entropy_mode()?;
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy> {
        self.active_learning.strategy.parse()
    }

    pub fn entropy_mode(&self) -> Result<EntropyMode> {
        match self.active_learning.entropy_mode.as_str() {
            "foreground" => Ok(EntropyMode::ForegroundTerm),
            "full-binary" => Ok(EntropyMode::FullBinary),
            other => Err(Error::Config(format!(
                "unknown entropy_mode '{}' (expected 'foreground' or 'full-binary')",
                other
            ))),
        }
    }

    pub fn crf_params(&self) -> CrfParams {
        CrfParams {
            w1: self.classifier.crf_w1,
            theta_alpha: self.classifier.crf_theta_alpha,
            theta_beta: self.classifier.crf_theta_beta,
            w2: self.classifier.crf_w2,
            theta_gamma: self.classifier.crf_theta_gamma,
            iterations: self.classifier.crf_iterations,
        }
    }

    pub fn cam_config(&self) -> Result<CamConfig> {
        Ok(CamConfig {
            epochs: self.classifier.epochs,
            lr: self.classifier.lr,
            dropout: self.classifier.dropout,
            batch_size: self.classifier.batch_size,
            thresholds: CamThresholds {
                t_standard: self.classifier.threshold_standard,
                t_coarse: self.classifier.threshold_coarse,
                t_fine: self.classifier.threshold_fine,
            },
            crf: self.crf_params(),
        })
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            e1: self.segmentation.e1,
            e2: self.segmentation.e2,
            lr: self.segmentation.lr,
            batch_size: self.segmentation.batch_size,
            lambda_dis: self.segmentation.lambda_dis,
        }
    }

    pub fn al_config(&self) -> Result<AlConfig> {
        Ok(AlConfig {
            strategy: self.strategy()?,
            cycles: self.active_learning.cycles,
            gt_fraction: self.active_learning.gt_fraction,
            pseudo_every_cycle: self.active_learning.pseudo_every_cycle,
            schedule: self.schedule(),
            score: ScoreConfig {
                entropy_mode: self.entropy_mode()?,
                knee_sensitivity: self.active_learning.knee_sensitivity,
                ..ScoreConfig::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.dataset.vascular, 605);
        assert_eq!(back.active_learning.strategy, "deal");
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let text = "[dataset]\nimage_sise = 64\n";
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("image_sise"));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.classifier.threshold_coarse = 0.95; // must be < standard
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn bad_strategy_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.active_learning.strategy = "oracle".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn load_reports_path_and_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "[dataset]\nimage_size = \"big\"\n").unwrap();
        match ExperimentConfig::load(&p) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("bad.toml"));
                assert!(msg.contains("line"), "no position info in: {}", msg);
            }
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }
}
