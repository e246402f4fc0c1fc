use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use liveness_bench::{live_video, training_video};
use liveness_core::model::train;
use liveness_core::{
    build_cue_sequence, render_video, verify_video, ArchConfig, ModelParams, TrainConfig,
};

fn benches(c: &mut Criterion) {
    let f = live_video(1);
    let model = ModelParams::init(ArchConfig::default(), 0).unwrap();

    c.bench_function("render_video 32x32 n=5", |b| {
        b.iter(|| render_video(black_box(&f.scene), &f.captcha, &f.camera, 7).unwrap())
    });
    c.bench_function("cue_sequence n=5", |b| {
        b.iter(|| build_cue_sequence(black_box(&f.frames), &f.captcha).unwrap())
    });
    let cues = build_cue_sequence(&f.frames, &f.captcha).unwrap();
    c.bench_function("forward one cue", |b| {
        b.iter(|| model.forward(black_box(&cues[0])).unwrap())
    });
    c.bench_function("regress n=5", |b| {
        b.iter(|| model.regress(black_box(&f.frames)).unwrap())
    });

    let video = training_video(&f, &ArchConfig::default());
    let one_step = TrainConfig {
        epochs: 1,
        batch_size: 1,
        ..TrainConfig::default()
    };
    c.bench_function("train step, one video", |b| {
        b.iter(|| train(&one_step, std::slice::from_ref(black_box(&video)), &[]).unwrap())
    });
    c.bench_function("verify_video 32x32 n=5", |b| {
        b.iter(|| verify_video(black_box(&f.frames), &f.captcha, &model, 0.5, 20.0).unwrap())
    });
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(20);
    targets = benches
}
criterion_main!(pipeline);
