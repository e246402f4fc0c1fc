use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{train, ModelParams, TrainConfig, TrainingVideo};

use super::verify::LabeledVideo;

/// Validation EER over repeated runs for one loss-weight setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub lambda_dep: f64,
    pub lambda_mat: f64,
    /// Training seed of each run.
    pub seeds: Vec<u64>,
    pub val_eers: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single run.
    pub std: f64,
    #[serde(skip)]
    pub models: Vec<ModelParams>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains `runs` models per `(λ_dep, λ_mat)` cell, run `r` with seed
/// `base.seed + r`, and records the validation EER after the last epoch.
/// Cells are ordered with `λ_dep` varying slowest.
pub fn run_ablation(
    base: &TrainConfig,
    train_set: &[TrainingVideo],
    validation: &[LabeledVideo],
    grid_dep: &[f64],
    grid_mat: &[f64],
    runs: usize,
) -> Result<Vec<AblationCell>> {
    if runs == 0 || grid_dep.is_empty() || grid_mat.is_empty() {
        return Err(Error::validation(
            "ablation needs at least one run and one value per axis",
        ));
    }
    if validation.is_empty() {
        return Err(Error::validation("ablation needs a validation split"));
    }
    let mut cells = Vec::with_capacity(grid_dep.len() * grid_mat.len());
    for &lambda_dep in grid_dep {
        for &lambda_mat in grid_mat {
            let mut seeds = Vec::with_capacity(runs);
            let mut val_eers = Vec::with_capacity(runs);
            let mut models = Vec::with_capacity(runs);
            for r in 0..runs {
                let mut config = *base;
                config.seed = base.seed.wrapping_add(r as u64);
                config.weights.lambda_dep = lambda_dep;
                config.weights.lambda_mat = lambda_mat;
                let out = train(&config, train_set, validation)?;
                let eer = out
                    .log
                    .last()
                    .and_then(|e| e.val_eer)
                    .ok_or_else(|| Error::validation("training produced no validation EER"))?;
                seeds.push(config.seed);
                val_eers.push(eer);
                models.push(out.params);
            }
            let (mean, std) = mean_std(&val_eers);
            cells.push(AblationCell {
                lambda_dep,
                lambda_mat,
                seeds,
                val_eers,
                mean,
                std,
                models,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[0.25]), (0.25, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
