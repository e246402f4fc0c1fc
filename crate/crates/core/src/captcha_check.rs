//! Decoding the light challenge from regressor outputs and matching it
//! against the issued one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{residual_encoding, ModelParams, RESIDUAL_DIM};
use crate::photometry::{LightCaptcha, LightParams, ReflectionFrame, BETA_RANGE, LIGHT_TYPES};

pub const DEFAULT_TAU_REG: f64 = 20.0;
/// Value reported for an exact match.
pub const SNR_CAP_DB: f64 = 120.0;
/// Smallest error energy used in the ratio.
pub const SNR_ERROR_FLOOR: f64 = 1e-12;
/// Bound on a decoded intensity change; `β` lives in `[0.5, 1]`.
const MAX_BETA_STEP: f64 = BETA_RANGE.1 - BETA_RANGE.0;

/// Light residuals recovered from a video, and the light sequence they
/// imply.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedCaptcha {
    pub residuals: Vec<[f64; RESIDUAL_DIM]>,
    /// `m + 1` lights reconstructed from an anchor.
    pub sequence: Vec<LightParams>,
    /// Light pair assumed for each frame pair, used for cue extraction.
    pub pair_lights: Vec<(LightParams, LightParams)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub snr_db: f64,
    pub passed: bool,
    pub tau_reg: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The type transition `(from, to)`, `from ≠ to`, whose one-hot difference
/// is closest to `r[..4]`. Ties go to the lowest pair.
fn snap_transition(r: &[f64; RESIDUAL_DIM]) -> (u8, u8) {
    let mut best = (0u8, 1u8);
    let mut best_score = f64::NEG_INFINITY;
    for a in 0..LIGHT_TYPES {
        for b in 0..LIGHT_TYPES {
            if a != b && r[b] - r[a] > best_score {
                best_score = r[b] - r[a];
                best = (a as u8, b as u8);
            }
        }
    }
    best
}

fn step_beta(beta: f64, delta: f64) -> f64 {
    (beta + delta).clamp(BETA_RANGE.0, BETA_RANGE.1)
}

impl EstimatedCaptcha {
    /// Keeps the residuals as given. The light types are followed from the
    /// anchor by the largest entry of `e_α + r`.
    pub fn from_residuals(residuals: Vec<[f64; RESIDUAL_DIM]>, anchor: LightParams) -> Self {
        let mut sequence = vec![anchor];
        let mut pair_lights = Vec::with_capacity(residuals.len());
        for r in &residuals {
            let prev = *sequence.last().expect("non-empty");
            let mut onehot = [0.0; LIGHT_TYPES];
            onehot[prev.alpha as usize] = 1.0;
            for (o, d) in onehot.iter_mut().zip(r) {
                *o += d;
            }
            let next = LightParams {
                alpha: argmax(&onehot) as u8,
                beta: step_beta(prev.beta, r[LIGHT_TYPES]),
            };
            pair_lights.push((prev, next));
            sequence.push(next);
        }
        EstimatedCaptcha {
            residuals,
            sequence,
            pair_lights,
        }
    }

    /// Projects each raw regressor output onto the nearest valid residual:
    /// a one-hot difference between two distinct types and an intensity
    /// step within `±0.5`. Intensities are accumulated from `anchor.beta`;
    /// each frame pair takes its light types from its own residual.
    pub fn decode(raw: &[[f64; RESIDUAL_DIM]], anchor: LightParams) -> Self {
        let mut residuals = Vec::with_capacity(raw.len());
        let mut pair_lights = Vec::with_capacity(raw.len());
        let mut sequence = Vec::with_capacity(raw.len() + 1);
        let mut beta = anchor.beta;
        for (i, r) in raw.iter().enumerate() {
            let (a, b) = snap_transition(r);
            let step = r[LIGHT_TYPES].clamp(-MAX_BETA_STEP, MAX_BETA_STEP);
            let mut snapped = [0.0; RESIDUAL_DIM];
            snapped[a as usize] = -1.0;
            snapped[b as usize] = 1.0;
            snapped[LIGHT_TYPES] = step;
            residuals.push(snapped);
            let from = LightParams { alpha: a, beta };
            if i == 0 {
                sequence.push(from);
            }
            beta = step_beta(beta, step);
            let to = LightParams { alpha: b, beta };
            sequence.push(to);
            pair_lights.push((from, to));
        }
        EstimatedCaptcha {
            residuals,
            sequence,
            pair_lights,
        }
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }
}

/// `10 log10(Σ‖g‖² / max(Σ‖g − e‖², floor))`, capped at 120 dB.
pub fn snr_db(ground: &[[f64; RESIDUAL_DIM]], estimated: &[[f64; RESIDUAL_DIM]]) -> Result<f64> {
    if ground.len() != estimated.len() {
        return Err(Error::validation(format!(
            "{} issued residuals, {} estimated",
            ground.len(),
            estimated.len()
        )));
    }
    let signal: f64 = ground.iter().flatten().map(|v| v * v).sum();
    if signal <= 0.0 {
        return Err(Error::validation("issued residuals carry no energy"));
    }
    let noise: f64 = ground
        .iter()
        .flatten()
        .zip(estimated.iter().flatten())
        .map(|(g, e)| (g - e).powi(2))
        .sum();
    let db = 10.0 * (signal / noise.max(SNR_ERROR_FLOOR)).log10();
    Ok(db.min(SNR_CAP_DB))
}

pub fn calc_snr(
    ground: &LightCaptcha,
    estimated: &EstimatedCaptcha,
    tau_reg: f64,
) -> Result<MatchResult> {
    let snr = snr_db(&residual_encoding(ground), &estimated.residuals)?;
    Ok(MatchResult {
        snr_db: snr,
        passed: snr > tau_reg,
        tau_reg,
    })
}

/// Decodes the challenge visible in `frames` and matches it against the one
/// the session issued.
pub fn check_modality_attack(
    frames: &[ReflectionFrame],
    issued: &LightCaptcha,
    model: &ModelParams,
    tau_reg: f64,
) -> Result<MatchResult> {
    if frames.len() != issued.len() {
        return Err(Error::validation(format!(
            "{} frames for a challenge of {}",
            frames.len(),
            issued.len()
        )));
    }
    let raw = model.regress(frames)?;
    let estimated = EstimatedCaptcha::decode(&raw, issued.sequence[0]);
    calc_snr(issued, &estimated, tau_reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::generate_captcha;

    #[test]
    fn exact_estimate_hits_the_cap() {
        let c = generate_captcha(5, 1).unwrap();
        let est = EstimatedCaptcha::from_residuals(residual_encoding(&c), c.sequence[0]);
        let m = calc_snr(&c, &est, 120.0 - 1e-9).unwrap();
        assert_eq!(m.snr_db, SNR_CAP_DB);
        assert!(m.passed);
        assert_eq!(est.sequence.len(), 5);
        for (a, b) in est.sequence.iter().zip(&c.sequence) {
            assert_eq!(a.alpha, b.alpha);
            assert!((a.beta - b.beta).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_estimate_is_zero_db() {
        let g = vec![[0.6, 0.0, -0.8, 0.0, 0.0]];
        assert!(snr_db(&g, &[[0.0; 5]]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn planted_noise_ratio_gives_twenty_db() {
        let g: Vec<[f64; 5]> = (0..4)
            .map(|i| {
                let mut r = [0.0; 5];
                r[i] = -1.0;
                r[(i + 1) % 4] = 1.0;
                r[4] = 0.1 * i as f64;
                r
            })
            .collect();
        let signal: f64 = g.iter().flatten().map(|v| v * v).sum();
        // One unit direction scaled so the error energy is signal / 100.
        let amp = (signal / 100.0).sqrt();
        let mut e = g.clone();
        e[2][3] += amp;
        assert!((snr_db(&g, &e).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn snr_is_scale_consistent_and_monotone() {
        let g = vec![[1.0, -1.0, 0.0, 0.0, 0.2], [0.0, 1.0, -1.0, 0.0, -0.1]];
        let e = vec![[0.9, -1.1, 0.05, 0.0, 0.1], [0.0, 0.8, -1.0, 0.1, 0.0]];
        let base = snr_db(&g, &e).unwrap();
        let scale = |v: &Vec<[f64; 5]>, s: f64| -> Vec<[f64; 5]> {
            v.iter().map(|r| r.map(|x| x * s)).collect()
        };
        assert!((snr_db(&scale(&g, -3.0), &scale(&e, -3.0)).unwrap() - base).abs() < 1e-9);
        let mut worse = e.clone();
        worse[0][4] -= 0.05;
        assert!(snr_db(&g, &worse).unwrap() < base);
    }

    #[test]
    fn length_mismatch_and_silent_ground_fail() {
        assert!(snr_db(&[[1.0; 5]], &[]).is_err());
        assert!(snr_db(&[[0.0; 5]], &[[0.0; 5]]).is_err());
    }

    #[test]
    fn decode_snaps_to_valid_transitions() {
        let raw = [[-0.8, 0.1, 0.9, -0.1, 0.27], [0.2, 0.0, -0.7, 0.6, -0.9]];
        let anchor = LightParams {
            alpha: 0,
            beta: 0.6,
        };
        let d = EstimatedCaptcha::decode(&raw, anchor);
        assert_eq!(d.residuals[0], [-1.0, 0.0, 1.0, 0.0, 0.27]);
        assert_eq!(d.residuals[1], [0.0, 0.0, -1.0, 1.0, -0.5]);
        assert_eq!(
            d.sequence.iter().map(|l| l.alpha).collect::<Vec<_>>(),
            vec![0, 2, 3]
        );
        assert!((d.sequence[1].beta - 0.87).abs() < 1e-12);
        assert_eq!(d.sequence[2].beta, 0.5);
        assert_eq!(d.pair_lights[1].0.alpha, 2);
        assert_eq!(d.pair_lights[1].1.alpha, 3);
    }
}
