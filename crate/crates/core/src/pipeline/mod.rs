//! The video-wise decision procedure and biometric error metrics.

mod ablation;
mod eval;
mod metrics;
mod verify;

pub use ablation::{mean_std, run_ablation, AblationCell};
pub use eval::{evaluate, EvalSummary, Evaluation, RateTriple, VideoOutcome};
pub use metrics::{
    auc, candidate_thresholds, compute_hter, compute_rates, find_eer, roc_sweep, EvalReport,
    RocPoint, ScoredSample,
};
pub use verify::{
    consensus_count, decide, effective_score, score_video, validation_eer, verify_video,
    LabeledVideo, Verdict, VideoScore,
};
