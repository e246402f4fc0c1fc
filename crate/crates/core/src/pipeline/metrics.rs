use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored presentation. It is accepted at threshold `τ` when
/// `score > τ` and the challenge check passed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub check_passed: bool,
    pub live: bool,
}

impl ScoredSample {
    pub fn accepted(&self, tau: f64) -> bool {
        self.check_passed && self.score > tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    pub far: f64,
    /// `1 − FRR`.
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
    pub eer: f64,
    pub tau_cls: f64,
    pub roc: Vec<RocPoint>,
}

fn class_sizes(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    let live = samples.iter().filter(|s| s.live).count();
    let spoof = samples.len() - live;
    if live == 0 || spoof == 0 {
        return Err(Error::validation(format!(
            "need both classes, got {live} live and {spoof} spoof"
        )));
    }
    if samples.iter().any(|s| s.score.is_nan()) {
        return Err(Error::validation("NaN score"));
    }
    Ok((live, spoof))
}

/// `(FAR, FRR)` at threshold `tau`.
pub fn compute_rates(samples: &[ScoredSample], tau: f64) -> Result<(f64, f64)> {
    let (live, spoof) = class_sizes(samples)?;
    let accepted_spoof = samples
        .iter()
        .filter(|s| !s.live && s.accepted(tau))
        .count();
    let rejected_live = samples
        .iter()
        .filter(|s| s.live && !s.accepted(tau))
        .count();
    Ok((
        accepted_spoof as f64 / spoof as f64,
        rejected_live as f64 / live as f64,
    ))
}

pub fn compute_hter(far: f64, frr: f64) -> f64 {
    (far + frr) / 2.0
}

/// Ascending thresholds: one below every score, the midpoints between
/// consecutive distinct scores, one above every score.
pub fn candidate_thresholds(samples: &[ScoredSample]) -> Vec<f64> {
    let mut scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let (Some(&lo), Some(&hi)) = (scores.first(), scores.last()) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(scores.len() + 1);
    out.push(lo - 1.0);
    out.extend(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(hi + 1.0);
    out
}

/// Rates at every threshold in `taus`, counting with binary searches over
/// the sorted scores of each class.
fn sweep(samples: &[ScoredSample], taus: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let (live, spoof) = class_sizes(samples)?;
    let sorted = |want_live: bool| {
        let mut v: Vec<f64> = samples
            .iter()
            .filter(|s| s.live == want_live && s.check_passed)
            .map(|s| s.score)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (live_scores, spoof_scores) = (sorted(true), sorted(false));
    let above = |v: &[f64], tau: f64| v.len() - v.partition_point(|&s| s <= tau);
    Ok(taus
        .iter()
        .map(|&tau| {
            let far = above(&spoof_scores, tau) as f64 / spoof as f64;
            let frr = (live - above(&live_scores, tau)) as f64 / live as f64;
            (tau, far, frr)
        })
        .collect())
}

/// Threshold where FAR and FRR are closest, ties toward the smaller
/// threshold. Returns `(HTER at that threshold, threshold)`.
pub fn find_eer(samples: &[ScoredSample]) -> Result<(f64, f64)> {
    let taus = candidate_thresholds(samples);
    let mut best: Option<(f64, f64, f64)> = None;
    for (tau, far, frr) in sweep(samples, &taus)? {
        let gap = (far - frr).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, tau, compute_hter(far, frr)));
        }
    }
    let (_, tau, eer) = best.expect("at least two candidates");
    Ok((eer, tau))
}

/// ROC points ordered by decreasing threshold. With `resolution = None`
/// every candidate threshold is used, otherwise `resolution` evenly spaced
/// thresholds spanning the candidates.
pub fn roc_sweep(samples: &[ScoredSample], resolution: Option<usize>) -> Result<Vec<RocPoint>> {
    let mut taus = candidate_thresholds(samples);
    if let Some(r) = resolution {
        if r < 2 {
            return Err(Error::validation("ROC resolution must be at least 2"));
        }
        let (lo, hi) = (taus[0], *taus.last().expect("non-empty"));
        taus = (0..r)
            .map(|i| lo + (hi - lo) * i as f64 / (r - 1) as f64)
            .collect();
    }
    taus.reverse();
    Ok(sweep(samples, &taus)?
        .into_iter()
        .map(|(tau, far, frr)| RocPoint {
            tau,
            far,
            tpr: 1.0 - frr,
        })
        .collect())
}

/// Trapezoidal area under an ROC staircase ordered by increasing FAR.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}
