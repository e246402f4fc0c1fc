//! Shared fixtures for the benchmarks.

use liveness_core::model::TrainingVideo;
use liveness_core::photometry::CameraModel;
use liveness_core::scene::{quantize_depth_labels, DEPTH_BINS};
use liveness_core::{
    generate_captcha, generate_scene, render_video, ArchConfig, LightCaptcha, ReflectionFrame,
    Scene, SubjectKind, SubjectSpec,
};

pub const SIZE: usize = 32;
pub const FRAMES: usize = 5;

pub struct Fixture {
    pub scene: Scene,
    pub captcha: LightCaptcha,
    pub camera: CameraModel,
    pub frames: Vec<ReflectionFrame>,
}

/// A noisy live video at the default resolution.
pub fn live_video(seed: u64) -> Fixture {
    let scene =
        generate_scene(&SubjectSpec::new(SubjectKind::Live, seed, SIZE, SIZE)).expect("valid spec");
    let captcha = generate_captcha(FRAMES, seed).expect("valid length");
    let camera = CameraModel::with_noise(0.05);
    let frames = render_video(&scene, &captcha, &camera, seed).expect("renders");
    Fixture {
        scene,
        captcha,
        camera,
        frames,
    }
}

pub fn training_video(f: &Fixture, arch: &ArchConfig) -> TrainingVideo {
    TrainingVideo::prepare(
        &f.frames,
        &f.captcha,
        &quantize_depth_labels(&f.scene, DEPTH_BINS).expect("labels"),
        &f.scene.material_labels(),
        true,
        arch,
    )
    .expect("consistent fixture")
}
