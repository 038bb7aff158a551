//! Experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::LowRankConfig;
use crate::error::{Error, Result};
use crate::gnn::{DecodeRule, GnnConfig};
use crate::graphgen::GraphModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Umeyama,
    LowRank,
}

/// Everything a training or evaluation run needs. Round-trips losslessly
/// through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: GraphModel,
    pub n: usize,
    /// Evaluation noise grid.
    pub p_e_grid: Vec<f64>,
    pub train_size: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub gnn: GnnConfig,
    pub baselines: Vec<BaselineKind>,
    /// Evaluation instances per noise level.
    pub trials: usize,
    pub decode: DecodeRule,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Noise range for training samples; each sample draws p_e uniformly
    /// from it.
    pub train_pe: (f64, f64),
    /// Train from a dataset file instead of generated samples.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Draw fresh samples every epoch (streaming) instead of fixing a
    /// corpus of `train_size` samples and revisiting it.
    #[serde(default = "default_true")]
    pub resample: bool,
    #[serde(default)]
    pub lowrank: LowRankConfig,
}

fn default_true() -> bool {
    true
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: GraphModel::Er { p: 0.2 },
            n: 50,
            p_e_grid: vec![0.0, 0.02, 0.05, 0.1],
            train_size: 20_000,
            epochs: 10,
            batch: 32,
            lr: 1e-3,
            gnn: GnnConfig::default(),
            baselines: vec![BaselineKind::Umeyama, BaselineKind::LowRank],
            trials: 100,
            decode: DecodeRule::Argmax,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            train_pe: (0.0, 0.1),
            dataset: None,
            resample: true,
            lowrank: LowRankConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gnn.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.p_e_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("noise grid values must lie in [0,1]".into()));
        }
        let (lo, hi) = self.train_pe;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "bad training noise range ({lo}, {hi})"
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_losslessly() {
        let cfg = ExperimentConfig {
            seed: 42,
            lr: 0.0012345678901234567,
            ..Default::default()
        };
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg = ExperimentConfig {
            batch: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            p_e_grid: vec![0.0, 1.5],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            train_pe: (0.2, 0.1),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
