//! Reflection-based face liveness verification on synthetic data.
//!
//! A screen casts a random sequence of colored lights on the subject. Each
//! pair of consecutive frames yields a normal cue `ρ cosθ` that is free of
//! ambient light. A small network reads depth and material from the cues
//! and scores liveness, while a regressor recovers the light sequence from
//! the raw frames so that replayed recordings can be told apart from a live
//! response.

pub mod autodiff;
pub mod captcha_check;
pub mod error;
pub mod geometry;
pub mod io;
pub mod model;
pub mod normalcue;
pub mod photometry;
pub mod pipeline;
pub mod rng;
pub mod scene;

pub use captcha_check::{
    calc_snr, check_modality_attack, EstimatedCaptcha, MatchResult, DEFAULT_TAU_REG,
};
pub use error::{Error, Result};
pub use model::{ArchConfig, LossWeights, ModelParams, TrainConfig};
pub use normalcue::{build_cue_sequence, extract_normal_cue, NormalCue};
pub use photometry::{
    generate_captcha, render_frame, render_modality_replay, render_video, CameraModel,
    LightCaptcha, LightParams, ReflectionFrame,
};
pub use pipeline::{verify_video, EvalReport, Verdict};
pub use scene::{generate_scene, MaterialClass, Scene, SubjectKind, SubjectSpec};
