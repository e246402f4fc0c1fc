use serde::{Deserialize, Serialize};

use crate::captcha_check::{calc_snr, EstimatedCaptcha};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::normalcue::{align_frames, extract_normal_cue, NormalCue};
use crate::photometry::{LightCaptcha, ReflectionFrame};
use crate::scene::SubjectKind;

use super::metrics::{find_eer, ScoredSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub live: bool,
    pub cue_scores: Vec<f64>,
    pub consensus_count: usize,
    pub m: usize,
    pub snr_db: f64,
    pub tau_cls: f64,
    pub tau_reg: f64,
}

/// Live iff a strict majority of cues clear `τ_cls` and the challenge
/// matches: `cnt > m/2 ∧ SNR > τ_reg`.
pub fn decide(consensus_count: usize, m: usize, snr_db: f64, tau_reg: f64) -> bool {
    2 * consensus_count > m && snr_db > tau_reg
}

pub fn consensus_count(scores: &[f64], tau_cls: f64) -> usize {
    scores.iter().filter(|&&s| s > tau_cls).count()
}

/// The `(⌊m/2⌋ + 1)`-th largest cue score: the strict majority clears
/// `τ` exactly when this score exceeds `τ`.
pub fn effective_score(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .get(scores.len() / 2)
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Classifier scores and challenge match for one video, independent of the
/// thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub cue_scores: Vec<f64>,
    pub snr_db: f64,
}

impl VideoScore {
    pub fn effective(&self) -> f64 {
        effective_score(&self.cue_scores)
    }

    pub fn sample(&self, live: bool, tau_reg: f64) -> ScoredSample {
        ScoredSample {
            score: self.effective(),
            check_passed: self.snr_db > tau_reg,
            live,
        }
    }
}

/// Regresses the light residuals, decodes the challenge, extracts one cue
/// per frame pair under the decoded lights and classifies the cues.
pub fn score_video(
    frames: &[ReflectionFrame],
    issued: &LightCaptcha,
    model: &ModelParams,
) -> Result<VideoScore> {
    LightCaptcha::new(issued.sequence.clone(), issued.seed)?;
    if frames.len() != issued.len() {
        return Err(Error::validation(format!(
            "{} frames for a challenge of {}",
            frames.len(),
            issued.len()
        )));
    }
    if frames.len() < 3 {
        return Err(Error::validation("verification needs at least 3 frames"));
    }
    let raw = model.regress(frames)?;
    let estimated = EstimatedCaptcha::decode(&raw, issued.sequence[0]);
    let cues = frames
        .windows(2)
        .zip(&estimated.pair_lights)
        .enumerate()
        .map(|(i, (pair, &(la, lb)))| {
            let align = align_frames(&pair[0], &pair[1])?;
            let cue = extract_normal_cue(&pair[0], &pair[1], la, lb, &align)?;
            Ok(NormalCue { index: i, ..cue })
        })
        .collect::<Result<Vec<_>>>()?;
    let cue_scores = model.classify(&cues)?;
    let snr_db = calc_snr(issued, &estimated, f64::INFINITY)?.snr_db;
    Ok(VideoScore { cue_scores, snr_db })
}

pub fn verify_video(
    frames: &[ReflectionFrame],
    issued: &LightCaptcha,
    model: &ModelParams,
    tau_cls: f64,
    tau_reg: f64,
) -> Result<Verdict> {
    let score = score_video(frames, issued, model)?;
    let m = score.cue_scores.len();
    let cnt = consensus_count(&score.cue_scores, tau_cls);
    Ok(Verdict {
        live: decide(cnt, m, score.snr_db, tau_reg),
        consensus_count: cnt,
        m,
        snr_db: score.snr_db,
        cue_scores: score.cue_scores,
        tau_cls,
        tau_reg,
    })
}

/// A video with its issued challenge and ground truth.
#[derive(Debug, Clone)]
pub struct LabeledVideo {
    pub frames: Vec<ReflectionFrame>,
    pub captcha: LightCaptcha,
    pub kind: SubjectKind,
}

/// EER and its threshold over a labelled set, with the full decision rule.
pub fn validation_eer(
    model: &ModelParams,
    videos: &[LabeledVideo],
    tau_reg: f64,
) -> Result<(f64, f64)> {
    let samples = videos
        .iter()
        .map(|v| Ok(score_video(&v.frames, &v.captcha, model)?.sample(v.kind.is_live(), tau_reg)))
        .collect::<Result<Vec<_>>>()?;
    find_eer(&samples)
}
