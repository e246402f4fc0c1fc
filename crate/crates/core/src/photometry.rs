//! Lambertian image formation under a random light challenge.
//!
//! A frame captured while the screen casts light `(α, β)` has intensity
//! `F(p) = ρ_p (k_a + k_r · max(l·n_p, 0))` per color channel, with
//! `k_r = β · color(α)`. The ambient weight `k_a` and light direction `l`
//! belong to the scene and stay fixed for a whole video.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_bilinear, Affine2};
use crate::rng::{derive_seed, rng_from};
use crate::scene::Scene;

pub const LIGHT_TYPES: usize = 4;
pub const CHANNELS: usize = 3;

/// Smallest per-channel diffuse-weight difference that a frame pair may be
/// divided by.
pub const MIN_WEIGHT_DELTA: f64 = 1e-3;

/// RGB tint of each light type. Channel values lie in [0.1, 0.5], so that
/// `ρ (k_a + k_r)` never exceeds 1 for `k_a ≤ 0.5`. The chroma of the four
/// tints point in four orthogonal directions, which keeps them easy to tell
/// apart from a captured frame.
pub const LIGHT_COLORS: [[f64; 3]; LIGHT_TYPES] = [
    [0.5, 0.1, 0.1], // red
    [0.1, 0.5, 0.5], // cyan
    [0.3, 0.5, 0.1], // chartreuse
    [0.3, 0.1, 0.5], // violet
];

pub const BETA_RANGE: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightParams {
    /// Light type (hue), `0..4`.
    pub alpha: u8,
    /// Intensity in `(0, 1]`.
    pub beta: f64,
}

impl LightParams {
    pub fn new(alpha: u8, beta: f64) -> Result<Self> {
        let lp = LightParams { alpha, beta };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha as usize >= LIGHT_TYPES {
            return Err(Error::validation(format!(
                "light type {} out of range",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::validation(format!(
                "intensity {} outside (0, 1]",
                self.beta
            )));
        }
        Ok(())
    }
}

pub fn light_color(alpha: u8) -> [f64; 3] {
    LIGHT_COLORS[alpha as usize % LIGHT_TYPES]
}

/// Per-channel diffuse weight `k_r = β · color(α)`.
pub fn diffuse_weight(lp: LightParams) -> [f64; 3] {
    let c = light_color(lp.alpha);
    [lp.beta * c[0], lp.beta * c[1], lp.beta * c[2]]
}

/// Largest per-channel difference between two lights' diffuse weights.
pub fn weight_delta(a: LightParams, b: LightParams) -> f64 {
    let (ka, kb) = (diffuse_weight(a), diffuse_weight(b));
    (0..CHANNELS)
        .map(|c| (ka[c] - kb[c]).abs())
        .fold(0.0, f64::max)
}

/// A light challenge: one light per captured frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightCaptcha {
    pub sequence: Vec<LightParams>,
    pub seed: u64,
}

impl LightCaptcha {
    pub fn new(sequence: Vec<LightParams>, seed: u64) -> Result<Self> {
        if sequence.len() < 2 {
            return Err(Error::validation(
                "a light challenge needs at least 2 frames",
            ));
        }
        for lp in &sequence {
            lp.validate()?;
        }
        for (i, pair) in sequence.windows(2).enumerate() {
            let delta = weight_delta(pair[0], pair[1]);
            if delta <= MIN_WEIGHT_DELTA {
                return Err(Error::DegeneratePair {
                    index: i,
                    max_delta: delta,
                });
            }
        }
        Ok(LightCaptcha { sequence, seed })
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn alphas(&self) -> Vec<u8> {
        self.sequence.iter().map(|lp| lp.alpha).collect()
    }
}

/// Random challenge of `n` lights: the first type is uniform, each following
/// type is uniform over the three others, intensities uniform in [0.5, 1].
pub fn generate_captcha(n: usize, seed: u64) -> Result<LightCaptcha> {
    if n < 2 {
        return Err(Error::validation(format!("challenge length {n} < 2")));
    }
    let mut rng = rng_from(derive_seed(seed, 0xca9));
    let mut sequence = Vec::with_capacity(n);
    let mut prev: Option<u8> = None;
    for _ in 0..n {
        let alpha = match prev {
            None => rng.random_range(0..LIGHT_TYPES as u8),
            Some(p) => {
                let step = rng.random_range(1..LIGHT_TYPES as u8);
                (p + step) % LIGHT_TYPES as u8
            }
        };
        let beta = rng.random_range(BETA_RANGE.0..=BETA_RANGE.1);
        sequence.push(LightParams { alpha, beta });
        prev = Some(alpha);
    }
    LightCaptcha::new(sequence, seed)
}

/// Rigid camera shake about the image center.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misalignment {
    pub dx: f64,
    pub dy: f64,
    pub degrees: f64,
}

impl Misalignment {
    pub const MAX_SHIFT: f64 = 2.0;
    pub const MAX_DEGREES: f64 = 2.0;

    pub fn is_zero(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.degrees == 0.0
    }

    pub fn matrix(&self, height: usize, width: usize) -> Affine2 {
        if self.is_zero() {
            return Affine2::identity();
        }
        let center = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
        Affine2::rigid(center, self.degrees, self.dx, self.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Additive Gaussian noise σ, intensity units.
    pub noise_sigma: f64,
    /// 0 keeps full precision, 8 rounds to 8-bit levels.
    pub quantize_bits: u8,
    /// Fixed misalignment applied to every frame.
    pub misalignment: Misalignment,
    /// Amplitude of an additional per-frame random misalignment drawn by
    /// `render_video`.
    pub shake: Misalignment,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl CameraModel {
    /// Noiseless, full precision, perfectly registered.
    pub fn ideal() -> Self {
        CameraModel {
            noise_sigma: 0.0,
            quantize_bits: 0,
            misalignment: Misalignment::default(),
            shake: Misalignment::default(),
        }
    }

    pub fn with_noise(noise_sigma: f64) -> Self {
        CameraModel {
            noise_sigma,
            ..Self::ideal()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.05).contains(&self.noise_sigma) {
            return Err(Error::validation(format!(
                "noise sigma {} outside [0, 0.05]",
                self.noise_sigma
            )));
        }
        if self.quantize_bits != 0 && self.quantize_bits != 8 {
            return Err(Error::validation("quantize_bits must be 0 or 8"));
        }
        let (m, s) = (self.misalignment, self.shake);
        let shift = (m.dx.abs() + s.dx.abs()).max(m.dy.abs() + s.dy.abs());
        if shift > Misalignment::MAX_SHIFT {
            return Err(Error::validation(format!(
                "misalignment shift {shift} px exceeds 2"
            )));
        }
        if m.degrees.abs() + s.degrees.abs() > Misalignment::MAX_DEGREES {
            return Err(Error::validation("misalignment rotation exceeds 2 degrees"));
        }
        Ok(())
    }
}

/// One captured frame, interleaved RGB in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionFrame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub light: LightParams,
    /// Scene landmarks as seen in this frame. Empty when the frame did not
    /// come from the renderer (e.g. loaded from disk).
    pub fiducials: Vec<[f64; 2]>,
}

impl ReflectionFrame {
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }
}

/// Renders the scene under one light. `frame_seed` drives the sensor noise.
pub fn render_frame(
    scene: &Scene,
    lp: LightParams,
    cam: &CameraModel,
    frame_seed: u64,
) -> Result<ReflectionFrame> {
    lp.validate()?;
    cam.validate()?;
    render_with_misalignment(scene, lp, cam, cam.misalignment, frame_seed)
}

fn render_with_misalignment(
    scene: &Scene,
    lp: LightParams,
    cam: &CameraModel,
    misalignment: Misalignment,
    frame_seed: u64,
) -> Result<ReflectionFrame> {
    let (h, w) = (scene.height, scene.width);
    let kr = diffuse_weight(lp);
    let ka = scene.ambient_weight;
    let mut pixels = Vec::with_capacity(h * w * CHANNELS);
    for p in 0..scene.len() {
        let rho = scene.albedo[p];
        let cos = scene.cos_theta(p);
        for k in kr {
            pixels.push(rho * (ka + k * cos));
        }
    }

    let warp = misalignment.matrix(h, w);
    let fiducials = scene.fiducials.iter().map(|&f| warp.apply(f)).collect();
    if !warp.is_identity() {
        let inverse = warp
            .inverse()
            .ok_or_else(|| Error::validation("singular misalignment"))?;
        pixels = warp_bilinear(&pixels, h, w, CHANNELS, &inverse);
    }

    if cam.noise_sigma > 0.0 {
        let mut rng = rng_from(derive_seed(frame_seed, 0x501));
        let normal = Normal::new(0.0, cam.noise_sigma).expect("finite sigma");
        for v in &mut pixels {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut pixels {
        *v = v.clamp(0.0, 1.0);
        if cam.quantize_bits == 8 {
            *v = (*v * 255.0).round() / 255.0;
        }
    }
    Ok(ReflectionFrame {
        height: h,
        width: w,
        pixels,
        light: lp,
        fiducials,
    })
}

/// One frame per challenge entry, in order.
pub fn render_video(
    scene: &Scene,
    captcha: &LightCaptcha,
    cam: &CameraModel,
    seed: u64,
) -> Result<Vec<ReflectionFrame>> {
    cam.validate()?;
    let shaky = !cam.shake.is_zero();
    captcha
        .sequence
        .iter()
        .enumerate()
        .map(|(i, &lp)| {
            let frame_seed = derive_seed(seed, i as u64);
            let mut misalignment = cam.misalignment;
            if shaky {
                let mut rng = rng_from(derive_seed(frame_seed, 0x5a4));
                let mut draw = |amp: f64| rng.random_range(-1.0..=1.0) * amp;
                misalignment.dx += draw(cam.shake.dx);
                misalignment.dy += draw(cam.shake.dy);
                misalignment.degrees += draw(cam.shake.degrees);
            }
            lp.validate()?;
            render_with_misalignment(scene, lp, cam, misalignment, frame_seed)
        })
        .collect()
}

/// A leaked recording made under `original` replayed during a session that
/// issued `fresh`. The light cast during the attack does not reach the
/// replayed reflection, so pixel content depends on `original` only; frames
/// are tagged with the issued lights.
pub fn render_modality_replay(
    original: &LightCaptcha,
    scene: &Scene,
    fresh: &LightCaptcha,
    cam: &CameraModel,
    seed: u64,
) -> Result<Vec<ReflectionFrame>> {
    LightCaptcha::new(original.sequence.clone(), original.seed)?;
    LightCaptcha::new(fresh.sequence.clone(), fresh.seed)?;
    if original.len() != fresh.len() {
        return Err(Error::validation(format!(
            "recording has {} frames but the session issued {}",
            original.len(),
            fresh.len()
        )));
    }
    let mut frames = render_video(scene, original, cam, seed)?;
    for (frame, &lp) in frames.iter_mut().zip(&fresh.sequence) {
        frame.light = lp;
    }
    Ok(frames)
}
