//! The four training objectives as standalone functions of plain values.
//! Training builds the same terms directly on its tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::photometry::{LightCaptcha, LightParams, LIGHT_TYPES};

use super::arch::RESIDUAL_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dep: f64,
    pub lambda_mat: f64,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dep: 0.5,
            lambda_mat: 0.5,
            lambda_cls: 1.0,
            lambda_reg: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_dep", self.lambda_dep),
            ("lambda_mat", self.lambda_mat),
            ("lambda_cls", self.lambda_cls),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!(
                    "{name} = {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Per-video loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec: f64,
    pub cls: f64,
    pub reg: f64,
}

/// `e_{α'} − e_α` followed by `β' − β`.
pub fn light_residual(from: LightParams, to: LightParams) -> [f64; RESIDUAL_DIM] {
    let mut r = [0.0; RESIDUAL_DIM];
    r[to.alpha as usize % LIGHT_TYPES] += 1.0;
    r[from.alpha as usize % LIGHT_TYPES] -= 1.0;
    r[LIGHT_TYPES] = to.beta - from.beta;
    r
}

/// Residual between every pair of consecutive lights.
pub fn residual_encoding(captcha: &LightCaptcha) -> Vec<[f64; RESIDUAL_DIM]> {
    captcha
        .sequence
        .windows(2)
        .map(|w| light_residual(w[0], w[1]))
        .collect()
}

fn check_labels(labels: &[u8], classes: usize, what: &str) -> Result<Vec<u8>> {
    labels
        .iter()
        .map(|&l| {
            if l == 0 || l as usize > classes {
                Err(Error::validation(format!(
                    "{what} label {l} outside 1..={classes}"
                )))
            } else {
                Ok(l - 1)
            }
        })
        .collect()
}

/// Mean over cues of `λ_dep · Σ_p CE_depth + λ_mat · Σ_p CE_material`, with
/// logits `[N, C, H, W]` and 1-based label maps laid out `[N, H, W]`.
pub fn loss_reconstruction(
    depth_logits: &Tensor<f64>,
    material_logits: &Tensor<f64>,
    depth_labels: &[u8],
    material_labels: &[u8],
    lambda_dep: f64,
    lambda_mat: f64,
) -> Result<f64> {
    let n = depth_logits.shape.first().copied().unwrap_or(0);
    if n == 0 || material_logits.shape.first() != Some(&n) {
        return Err(Error::validation(
            "reconstruction loss needs matching non-empty batches",
        ));
    }
    let dep = check_labels(depth_labels, depth_logits.shape[1], "depth")?;
    let mat = check_labels(material_labels, material_logits.shape[1], "material")?;
    let mut g = Graph::<f64>::new();
    let d = g.input(depth_logits.clone());
    let m = g.input(material_logits.clone());
    let ld = g.softmax_cross_entropy(d, &dep, &vec![lambda_dep / n as f64; n])?;
    let lm = g.softmax_cross_entropy(m, &mat, &vec![lambda_mat / n as f64; n])?;
    Ok(g.scalar(ld) + g.scalar(lm))
}

/// Mean binary cross-entropy of scores in `(0, 1)` against 0/1 labels.
pub fn loss_classification(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let eps = 1e-12;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &c)| {
            let s = s.clamp(eps, 1.0 - eps);
            -(c * s.ln() + (1.0 - c) * (1.0 - s).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Mean squared distance between predicted and issued light residuals.
pub fn loss_regression(predictions: &[[f64; RESIDUAL_DIM]], captcha: &LightCaptcha) -> Result<f64> {
    let truth = residual_encoding(captcha);
    if predictions.len() != truth.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} frame pairs",
            predictions.len(),
            truth.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(&truth)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok(total / truth.len() as f64)
}

/// `(1 / 2V) Σ_v (L_rec + λ_cls L_cls + λ_reg L_reg)`.
pub fn loss_total(components: &[LossComponents], weights: &LossWeights) -> f64 {
    if components.is_empty() {
        return 0.0;
    }
    let sum: f64 = components
        .iter()
        .map(|c| c.rec + weights.lambda_cls * c.cls + weights.lambda_reg * c.reg)
        .sum();
    sum / (2.0 * components.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::generate_captcha;

    fn uniform(n: usize, c: usize, hw: usize) -> Tensor<f64> {
        Tensor::zeros(vec![n, c, hw, 1])
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let d = uniform(1, 16, 1);
        let m = uniform(1, 4, 1);
        let only_depth = loss_reconstruction(&d, &m, &[3], &[2], 1.0, 0.0).unwrap();
        assert!((only_depth - 16f64.ln()).abs() < 1e-12);
        let only_mat = loss_reconstruction(&d, &m, &[3], &[2], 0.0, 1.0).unwrap();
        assert!((only_mat - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_zero() {
        let mut d = uniform(1, 16, 2);
        let mut m = uniform(1, 4, 2);
        d.data[5 * 2] = 60.0;
        d.data[2 + 1] = 60.0;
        m.data[2] = 60.0;
        m.data[3 * 2 + 1] = 60.0;
        let loss = loss_reconstruction(&d, &m, &[6, 2], &[2, 4], 0.5, 0.5).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn labels_out_of_range_fail() {
        let d = uniform(1, 16, 1);
        let m = uniform(1, 4, 1);
        assert!(loss_reconstruction(&d, &m, &[17], &[1], 1.0, 1.0).is_err());
        assert!(loss_reconstruction(&d, &m, &[1], &[0], 1.0, 1.0).is_err());
    }

    #[test]
    fn classification_edges() {
        assert!((loss_classification(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(loss_classification(&[1.0 - 1e-12, 1e-12], &[1.0, 0.0]).unwrap() < 1e-11);
    }

    #[test]
    fn regression_edges() {
        let captcha = generate_captcha(4, 9).unwrap();
        let truth = residual_encoding(&captcha);
        assert_eq!(loss_regression(&truth, &captcha).unwrap(), 0.0);
        let zero = vec![[0.0; 5]; 3];
        let expected: f64 = truth
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 3.0;
        assert!((loss_regression(&zero, &captcha).unwrap() - expected).abs() < 1e-15);
        assert!(loss_regression(&zero[..2], &captcha).is_err());
    }

    #[test]
    fn residual_of_a_type_change_has_unit_one_hot_difference() {
        let r = light_residual(
            LightParams {
                alpha: 0,
                beta: 0.6,
            },
            LightParams {
                alpha: 2,
                beta: 0.9,
            },
        );
        assert_eq!(&r[..4], &[-1.0, 0.0, 1.0, 0.0]);
        assert!((r[4] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn total_loss_formula() {
        assert_eq!(
            loss_total(&[LossComponents::default()], &LossWeights::default()),
            0.0
        );
        let c = LossComponents {
            rec: 1.0,
            cls: 2.0,
            reg: 3.0,
        };
        assert_eq!(loss_total(&[c], &LossWeights::default()), 3.0);
    }

    #[test]
    fn weights_validate() {
        let mut w = LossWeights::default();
        assert!(w.validate().is_ok());
        w.lambda_reg = -0.1;
        assert!(w.validate().is_err());
    }
}
