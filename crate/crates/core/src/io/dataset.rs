//! Synthetic dataset generation and loading.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, TrainingVideo};
use crate::photometry::{generate_captcha, render_video, CameraModel, LightCaptcha, LightParams};
use crate::pipeline::LabeledVideo;
use crate::rng::derive_seed;
use crate::scene::{generate_scene, quantize_depth_labels, SubjectKind, SubjectSpec, DEPTH_BINS};

use super::manifest::{DatasetManifest, Split, VideoRecord, MANIFEST_FILE};
use super::video_file::{load_video, save_video, VideoFile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Videos of each subject kind.
    pub per_kind: usize,
    /// Of `per_kind`, how many go to validation and to test.
    pub val_per_kind: usize,
    pub test_per_kind: usize,
    pub size: usize,
    /// Frames per video, `n`.
    pub frames: usize,
    pub pose_jitter: f64,
    pub texture_jitter: f64,
    pub camera: CameraModel,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            per_kind: 60,
            val_per_kind: 10,
            test_per_kind: 10,
            size: 32,
            frames: 5,
            pose_jitter: 15.0,
            texture_jitter: 0.05,
            camera: CameraModel::with_noise(0.05),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_kind == 0 {
            return Err(Error::Config("per_kind must be at least 1".into()));
        }
        if self.val_per_kind + self.test_per_kind > self.per_kind {
            return Err(Error::Config(format!(
                "{} validation + {} test videos exceed {} per kind",
                self.val_per_kind, self.test_per_kind, self.per_kind
            )));
        }
        if self.frames < 3 {
            return Err(Error::Config(format!(
                "{} frames per video, need at least 3",
                self.frames
            )));
        }
        let spec = SubjectSpec {
            pose_jitter: self.pose_jitter,
            texture_jitter: self.texture_jitter,
            ..SubjectSpec::new(SubjectKind::Live, 0, self.size, self.size)
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.camera
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn split_of(&self, index: usize) -> Split {
        let train = self.per_kind - self.val_per_kind - self.test_per_kind;
        if index < train {
            Split::Train
        } else if index < train + self.val_per_kind {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Records for every video, grouped by kind, each kind split
    /// train/val/test in order.
    pub fn records(&self) -> Vec<VideoRecord> {
        let mut out = Vec::with_capacity(4 * self.per_kind);
        for (k, kind) in SubjectKind::ALL.into_iter().enumerate() {
            for i in 0..self.per_kind {
                let base = derive_seed(self.seed, ((k as u64) << 32) | i as u64);
                let replay = kind == SubjectKind::ModalityReplay;
                out.push(VideoRecord {
                    path: format!("{}_{:04}.agvd", kind.name(), i),
                    kind,
                    scene_seed: derive_seed(base, 1),
                    captcha_seed: derive_seed(base, 2),
                    source_captcha_seed: replay.then(|| derive_seed(base, 4)),
                    render_seed: derive_seed(base, 3),
                    camera: self.camera,
                    live: kind.is_live(),
                    split: self.split_of(i),
                });
            }
        }
        out
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::new(self.seed, self.size, self.frames, self.records())
    }
}

/// Challenge with intensities narrowed to `f32`, so that what is stored on
/// disk is exactly what was rendered.
fn storable_captcha(n: usize, seed: u64) -> Result<LightCaptcha> {
    let c = generate_captcha(n, seed)?;
    let sequence = c
        .sequence
        .iter()
        .map(|lp| LightParams {
            alpha: lp.alpha,
            beta: lp.beta as f32 as f64,
        })
        .collect();
    LightCaptcha::new(sequence, seed)
}

/// Renders one record. Pixels are narrowed to `f32` and fiducials dropped,
/// so the result equals what `load_video` returns for the written file.
pub fn render_record(
    config: &DatasetConfig,
    record: &VideoRecord,
) -> Result<(VideoFile, LightCaptcha)> {
    let spec = SubjectSpec {
        pose_jitter: config.pose_jitter,
        texture_jitter: config.texture_jitter,
        ..SubjectSpec::new(record.kind, record.scene_seed, config.size, config.size)
    };
    let scene = generate_scene(&spec)?;
    let issued = storable_captcha(config.frames, record.captcha_seed)?;
    let recorded = match record.source_captcha_seed {
        Some(seed) => storable_captcha(config.frames, seed)?,
        None => issued.clone(),
    };
    let mut frames = render_video(&scene, &recorded, &record.camera, record.render_seed)?;
    for (f, &lp) in frames.iter_mut().zip(&issued.sequence) {
        f.light = lp;
        f.fiducials.clear();
        for p in &mut f.pixels {
            *p = *p as f32 as f64;
        }
    }
    let video = VideoFile {
        height: config.size,
        width: config.size,
        frames,
        challenge: issued.sequence.clone(),
        depth_labels: quantize_depth_labels(&scene, DEPTH_BINS)?,
        material_labels: scene.material_labels(),
        live: record.live,
    };
    Ok((video, issued))
}

/// A dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoFile>,
    pub captchas: Vec<LightCaptcha>,
}

impl Dataset {
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        let manifest = config.manifest();
        let mut videos = Vec::with_capacity(manifest.records.len());
        let mut captchas = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let (v, c) = render_record(config, r)?;
            videos.push(v);
            captchas.push(c);
        }
        Ok(Dataset {
            manifest,
            videos,
            captchas,
        })
    }

    /// Writes every video and then the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (r, v) in self.manifest.records.iter().zip(&self.videos) {
            save_video(&dir.join(&r.path), v)?;
        }
        std::fs::write(dir.join(MANIFEST_FILE), self.manifest.to_json()?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let mut videos = Vec::with_capacity(manifest.records.len());
        let mut captchas = Vec::with_capacity(manifest.records.len());
        for r in &manifest.records {
            let v = load_video(&dir.join(&r.path))?;
            if (v.height, v.width, v.frames.len())
                != (manifest.size, manifest.size, manifest.frames)
            {
                return Err(Error::Format(format!(
                    "{}: shape disagrees with manifest",
                    r.path
                )));
            }
            if v.live != r.live {
                return Err(Error::Format(format!(
                    "{}: liveness disagrees with manifest",
                    r.path
                )));
            }
            captchas.push(v.captcha(r.captcha_seed)?);
            videos.push(v);
        }
        Ok(Dataset {
            manifest,
            videos,
            captchas,
        })
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len())
            .filter(|&i| self.manifest.records[i].split == split)
            .collect()
    }

    pub fn labeled(&self, split: Split) -> Vec<LabeledVideo> {
        self.indices(split)
            .into_iter()
            .map(|i| LabeledVideo {
                frames: self.videos[i].frames.clone(),
                captcha: self.captchas[i].clone(),
                kind: self.manifest.records[i].kind,
            })
            .collect()
    }

    /// Training tensors for `split`. Replayed recordings are skipped: their
    /// pixels follow a challenge other than the one they are tagged with,
    /// so neither the cues nor the residual targets are consistent.
    pub fn training_videos(&self, split: Split, arch: &ArchConfig) -> Result<Vec<TrainingVideo>> {
        self.indices(split)
            .into_iter()
            .filter(|&i| self.manifest.records[i].kind != SubjectKind::ModalityReplay)
            .map(|i| {
                let v = &self.videos[i];
                TrainingVideo::prepare(
                    &v.frames,
                    &self.captchas[i],
                    &v.depth_labels,
                    &v.material_labels,
                    v.live,
                    arch,
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            per_kind: 2,
            val_per_kind: 0,
            test_per_kind: 1,
            frames: 3,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn records_are_balanced_and_split_per_kind() {
        let c = DatasetConfig::default();
        let m = c.manifest();
        assert_eq!(m.records.len(), 240);
        for kind in SubjectKind::ALL {
            let of_kind = |s: Split| m.split(s).filter(|r| r.kind == kind).count();
            assert_eq!(
                (
                    of_kind(Split::Train),
                    of_kind(Split::Val),
                    of_kind(Split::Test)
                ),
                (40, 10, 10)
            );
        }
        assert_eq!((m.live_count, m.spoof_count), (60, 180));
        m.validate().unwrap();
    }

    #[test]
    fn two_per_kind_labels() {
        let m = DatasetConfig {
            per_kind: 2,
            val_per_kind: 0,
            test_per_kind: 0,
            ..DatasetConfig::default()
        }
        .manifest();
        assert_eq!(m.records.len(), 8);
        assert_eq!((m.live_count, m.spoof_count), (2, 6));
    }

    #[test]
    fn saved_dataset_loads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::generate(&small()).unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, d.manifest);
        assert_eq!(back.videos, d.videos);
        assert_eq!(back.captchas, d.captchas);
    }

    #[test]
    fn generation_is_deterministic_and_seed_dependent() {
        let a = Dataset::generate(&small()).unwrap();
        let b = Dataset::generate(&small()).unwrap();
        assert_eq!(a.videos, b.videos);
        let c = Dataset::generate(&DatasetConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.videos[0], c.videos[0]);
    }

    #[test]
    fn replays_carry_the_issued_challenge_but_other_pixels() {
        let c = small();
        let m = c.manifest();
        let r = m
            .records
            .iter()
            .find(|r| r.kind == SubjectKind::ModalityReplay)
            .unwrap();
        let (v, issued) = render_record(&c, r).unwrap();
        assert_eq!(v.challenge, issued.sequence);
        let honest = VideoRecord {
            source_captcha_seed: None,
            ..r.clone()
        };
        let (h, _) = render_record(&c, &honest).unwrap();
        assert_ne!(h.frames[0].pixels, v.frames[0].pixels);
    }

    #[test]
    fn training_set_skips_replays() {
        let d = Dataset::generate(&small()).unwrap();
        let t = d
            .training_videos(Split::Train, &ArchConfig::default())
            .unwrap();
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn invalid_configs_fail() {
        assert!(DatasetConfig {
            frames: 2,
            ..small()
        }
        .validate()
        .is_err());
        assert!(DatasetConfig {
            test_per_kind: 3,
            ..small()
        }
        .validate()
        .is_err());
    }
}
