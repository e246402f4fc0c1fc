use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scene::SubjectKind;

use super::metrics::{compute_hter, compute_rates, find_eer, roc_sweep, EvalReport, ScoredSample};
use super::verify::{score_video, LabeledVideo, VideoScore};

/// Outcome for one evaluated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub id: String,
    pub kind: SubjectKind,
    pub live: bool,
    pub effective_score: f64,
    pub cue_scores: Vec<f64>,
    pub snr_db: f64,
    pub accepted: bool,
    /// Decision of the classification branch alone.
    pub accepted_by_cls: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTriple {
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Full decision rule at `τ_cls` chosen on the validation EER.
    pub report: EvalReport,
    pub tau_reg: f64,
    /// Classifier consensus only, same `τ_cls`.
    pub cls_only: RateTriple,
    /// FAR for each attack kind present in the evaluated split.
    pub far_by_attack: BTreeMap<String, f64>,
    pub live_count: usize,
    pub spoof_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: EvalSummary,
    pub videos: Vec<VideoOutcome>,
}

fn score_all(model: &ModelParams, videos: &[LabeledVideo]) -> Result<Vec<VideoScore>> {
    videos
        .iter()
        .map(|v| score_video(&v.frames, &v.captcha, model))
        .collect()
}

/// Picks `τ_cls` at the validation EER, then applies it to `test`. `ids`
/// names the test videos in the per-video outcomes.
pub fn evaluate(
    model: &ModelParams,
    validation: &[LabeledVideo],
    test: &[LabeledVideo],
    ids: &[String],
    tau_reg: f64,
    roc_resolution: Option<usize>,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::validation("evaluation split is empty"));
    }
    if ids.len() != test.len() {
        return Err(Error::validation("one id per test video required"));
    }
    let val_samples: Vec<ScoredSample> = score_all(model, validation)?
        .iter()
        .zip(validation)
        .map(|(s, v)| s.sample(v.kind.is_live(), tau_reg))
        .collect();
    let (eer, tau_cls) = find_eer(&val_samples)?;

    let scores = score_all(model, test)?;
    let samples: Vec<ScoredSample> = scores
        .iter()
        .zip(test)
        .map(|(s, v)| s.sample(v.kind.is_live(), tau_reg))
        .collect();
    let cls_samples: Vec<ScoredSample> = samples
        .iter()
        .map(|s| ScoredSample {
            check_passed: true,
            ..*s
        })
        .collect();
    let (far, frr) = compute_rates(&samples, tau_cls)?;
    let (cls_far, cls_frr) = compute_rates(&cls_samples, tau_cls)?;

    let mut far_by_attack = BTreeMap::new();
    for kind in SubjectKind::ALL.into_iter().filter(|k| !k.is_live()) {
        let of_kind: Vec<&ScoredSample> = samples
            .iter()
            .zip(test)
            .filter(|(_, v)| v.kind == kind)
            .map(|(s, _)| s)
            .collect();
        if !of_kind.is_empty() {
            let accepted = of_kind.iter().filter(|s| s.accepted(tau_cls)).count();
            far_by_attack.insert(
                kind.name().to_string(),
                accepted as f64 / of_kind.len() as f64,
            );
        }
    }

    let videos = scores
        .iter()
        .zip(test)
        .zip(ids)
        .zip(samples.iter().zip(&cls_samples))
        .map(|(((s, v), id), (full, cls))| VideoOutcome {
            id: id.clone(),
            kind: v.kind,
            live: v.kind.is_live(),
            effective_score: s.effective(),
            cue_scores: s.cue_scores.clone(),
            snr_db: s.snr_db,
            accepted: full.accepted(tau_cls),
            accepted_by_cls: cls.accepted(tau_cls),
        })
        .collect();
    let live_count = samples.iter().filter(|s| s.live).count();
    Ok(Evaluation {
        summary: EvalSummary {
            report: EvalReport {
                far,
                frr,
                hter: compute_hter(far, frr),
                eer,
                tau_cls,
                roc: roc_sweep(&samples, roc_resolution)?,
            },
            tau_reg,
            cls_only: RateTriple {
                far: cls_far,
                frr: cls_frr,
                hter: compute_hter(cls_far, cls_frr),
            },
            far_by_attack,
            live_count,
            spoof_count: samples.len() - live_count,
        },
        videos,
    })
}
