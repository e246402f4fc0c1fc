//! Run configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! per_kind = 60
//! size = 32
//!
//! [dataset.camera]
//! noise_sigma = 0.05
//!
//! [train]
//! epochs = 40
//! weights = { lambda_dep = 0.5, lambda_mat = 0.5 }
//!
//! [eval]
//! tau_reg = 20.0
//!
//! [ablate]
//! grid_dep = [0.0, 0.5]
//! grid_mat = [0.0, 0.5]
//! runs = 3
//! ```
//!
//! Every key is optional. The master seed, when given, seeds both the
//! dataset and training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captcha_check::DEFAULT_TAU_REG;
use crate::error::{Error, Result};
use crate::model::TrainConfig;

use super::dataset::DatasetConfig;

/// Environment variable that overrides the master seed of a config file.
pub const SEED_ENV: &str = "AG_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau_reg: f64,
    /// Evenly spaced ROC thresholds; `None` uses every distinct score.
    pub roc_resolution: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau_reg: DEFAULT_TAU_REG,
            roc_resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub grid_dep: Vec<f64>,
    pub grid_mat: Vec<f64>,
    /// Seeded runs per cell.
    pub runs: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            grid_dep: vec![0.0, 0.5],
            grid_mat: vec![0.0, 0.5],
            runs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` when given, else starts from the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?),
        }
    }

    /// Replaces the master seed and propagates it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.dataset.seed = seed;
        self.train.seed = seed;
    }

    /// Applies the master seed with precedence flag, then `env` (the value
    /// of `AG_SEED`), then the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        let from_env = env
            .map(|v| {
                v.trim().parse::<u64>().map_err(|_| {
                    Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                })
            })
            .transpose()?;
        if let Some(seed) = flag.or(from_env).or(self.seed) {
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.train.arch.input_size != self.dataset.size {
            return Err(Error::Config(format!(
                "network input {} differs from frame size {}",
                self.train.arch.input_size, self.dataset.size
            )));
        }
        if self.eval.tau_reg.is_nan() {
            return Err(Error::Config("tau_reg is NaN".into()));
        }
        if self.eval.roc_resolution.is_some_and(|r| r < 2) {
            return Err(Error::Config("roc_resolution must be at least 2".into()));
        }
        let a = &self.ablate;
        if a.runs == 0 || a.grid_dep.is_empty() || a.grid_mat.is_empty() {
            return Err(Error::Config(
                "ablation needs at least one run and one value per axis".into(),
            ));
        }
        if a.grid_dep
            .iter()
            .chain(&a.grid_mat)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config(
                "ablation weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}
