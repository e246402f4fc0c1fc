//! Synthetic subjects with ground-truth geometry and material.
//!
//! A scene is a height field `Z(p)` (pixel units, increasing toward the
//! camera), a per-pixel material label, an albedo map and the unit normals
//! derived from `Z`. Four subject kinds are generated:
//!
//! - `Live`: a face-like height field (ellipsoid plus nose, brow, socket and
//!   lip bumps) with skin albedo and eye patches.
//! - `PlanarSpoof`: a flat print or screen whose albedo carries a faint
//!   imprint of the live subject's shading.
//! - `Mask3D`: the live geometry covered in paper or screen material. Depth
//!   cannot tell it apart from a live face; material can.
//! - `ModalityReplay`: the live scene itself. What makes it an attack is how
//!   it is rendered (see `photometry::render_modality_replay`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Number of depth classes supervised by the depth decoder.
pub const DEPTH_BINS: usize = 16;
/// Number of material classes supervised by the material decoder.
pub const MATERIAL_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialClass {
    Environment,
    RealFace,
    Paper,
    EyeScreen,
}

impl MaterialClass {
    pub const ALL: [MaterialClass; 4] = [
        MaterialClass::Environment,
        MaterialClass::RealFace,
        MaterialClass::Paper,
        MaterialClass::EyeScreen,
    ];

    /// Canonical albedo. Classes are ordered by reflectivity.
    pub fn albedo(self) -> f64 {
        match self {
            MaterialClass::Environment => 0.15,
            MaterialClass::RealFace => 0.55,
            MaterialClass::Paper => 0.80,
            MaterialClass::EyeScreen => 0.95,
        }
    }

    /// Gray level used when visualizing a material map: low albedo maps to
    /// dark, high albedo to bright.
    pub fn brightness(self) -> u8 {
        match self {
            MaterialClass::Environment => 24,
            MaterialClass::RealFace => 96,
            MaterialClass::Paper => 176,
            MaterialClass::EyeScreen => 240,
        }
    }

    /// Zero-based class index, as used for decoder channels.
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based label, as stored in video files.
    pub fn label(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_label(label: u8) -> Option<Self> {
        Self::ALL.get((label as usize).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Live,
    PlanarSpoof,
    Mask3D,
    ModalityReplay,
}

impl SubjectKind {
    pub const ALL: [SubjectKind; 4] = [
        SubjectKind::Live,
        SubjectKind::PlanarSpoof,
        SubjectKind::Mask3D,
        SubjectKind::ModalityReplay,
    ];

    pub fn is_live(self) -> bool {
        self == SubjectKind::Live
    }

    pub fn name(self) -> &'static str {
        match self {
            SubjectKind::Live => "live",
            SubjectKind::PlanarSpoof => "planar_spoof",
            SubjectKind::Mask3D => "mask3d",
            SubjectKind::ModalityReplay => "modality_replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub kind: SubjectKind,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Maximum head rotation in degrees (roll, yaw and pitch each).
    pub pose_jitter: f64,
    /// Albedo texture amplitude.
    pub texture_jitter: f64,
}

impl SubjectSpec {
    pub const MAX_POSE_JITTER: f64 = 15.0;
    pub const MAX_TEXTURE_JITTER: f64 = 0.05;

    pub fn new(kind: SubjectKind, seed: u64, height: usize, width: usize) -> Self {
        SubjectSpec {
            kind,
            seed,
            height,
            width,
            pose_jitter: 8.0,
            texture_jitter: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::validation(format!(
                "resolution {}x{} below 16x16",
                self.height, self.width
            )));
        }
        if !(0.0..=Self::MAX_POSE_JITTER).contains(&self.pose_jitter) {
            return Err(Error::validation(format!(
                "pose_jitter {} outside [0, 15]",
                self.pose_jitter
            )));
        }
        if !(0.0..=Self::MAX_TEXTURE_JITTER).contains(&self.texture_jitter) {
            return Err(Error::validation(format!(
                "texture_jitter {} outside [0, 0.05]",
                self.texture_jitter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    /// Height field, row-major.
    pub depth: Vec<f64>,
    pub material: Vec<MaterialClass>,
    pub albedo: Vec<f64>,
    pub normals: Vec<[f64; 3]>,
    pub ambient_weight: f64,
    pub light_direction: [f64; 3],
    pub kind: SubjectKind,
    /// Landmark positions (x, y) in pixel coordinates: eyes, nose tip,
    /// mouth corners. Used to register frames.
    pub fiducials: Vec<[f64; 2]>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_face(&self, p: usize) -> bool {
        self.material[p] != MaterialClass::Environment
    }

    /// `l · n_p` clamped at zero (back-facing points receive no light).
    pub fn cos_theta(&self, p: usize) -> f64 {
        dot(&self.light_direction, &self.normals[p]).max(0.0)
    }

    /// Ground-truth normal cue `ρ_p · cosθ_p`.
    pub fn normal_cue_truth(&self) -> Vec<f64> {
        (0..self.len())
            .map(|p| self.albedo[p] * self.cos_theta(p))
            .collect()
    }

    pub fn material_labels(&self) -> Vec<u8> {
        self.material.iter().map(|m| m.label()).collect()
    }

    /// Grayscale visualization of the material map.
    pub fn material_preview(&self) -> Vec<u8> {
        self.material.iter().map(|m| m.brightness()).collect()
    }
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = dot(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Height-field normals `normalize(-∂Z/∂x, -∂Z/∂y, 1)`: central differences
/// inside, one-sided differences on the border.
pub fn normals_from_depth(depth: &[f64], height: usize, width: usize) -> Result<Vec<[f64; 3]>> {
    if height < 3 || width < 3 {
        return Err(Error::validation("depth map must be at least 3x3"));
    }
    if depth.len() != height * width {
        return Err(Error::validation(format!(
            "depth has {} values, expected {}",
            depth.len(),
            height * width
        )));
    }
    let at = |y: usize, x: usize| depth[y * width + x];
    let mut out = Vec::with_capacity(depth.len());
    for y in 0..height {
        for x in 0..width {
            let dzdx = if x == 0 {
                at(y, 1) - at(y, 0)
            } else if x == width - 1 {
                at(y, x) - at(y, x - 1)
            } else {
                (at(y, x + 1) - at(y, x - 1)) / 2.0
            };
            let dzdy = if y == 0 {
                at(1, x) - at(0, x)
            } else if y == height - 1 {
                at(y, x) - at(y - 1, x)
            } else {
                (at(y + 1, x) - at(y - 1, x)) / 2.0
            };
            out.push(normalize3([-dzdx, -dzdy, 1.0]));
        }
    }
    Ok(out)
}

/// Uniform quantization of the face region's depth range into `bins`
/// classes labelled `1..=bins`. Background pixels get label 1, and so does
/// the whole face when its depth is flat.
pub fn quantize_depth_labels(scene: &Scene, bins: usize) -> Result<Vec<u8>> {
    if bins == 0 || bins > u8::MAX as usize {
        return Err(Error::validation(format!(
            "bin count {bins} outside 1..=255"
        )));
    }
    if scene.depth.iter().any(|z| !z.is_finite()) {
        return Err(Error::validation("depth map contains non-finite values"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in 0..scene.len() {
        if scene.is_face(p) {
            lo = lo.min(scene.depth[p]);
            hi = hi.max(scene.depth[p]);
        }
    }
    let span = hi - lo;
    let flat = span.is_nan() || span <= 1e-12;
    Ok((0..scene.len())
        .map(|p| {
            if flat || !scene.is_face(p) {
                return 1;
            }
            let t = (scene.depth[p] - lo) / span;
            let bin = ((t * bins as f64).floor() as usize).min(bins - 1);
            bin as u8 + 1
        })
        .collect())
}

struct FaceLayout {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    relief: f64,
    roll: f64,
    feature_dx: f64,
    feature_dy: f64,
}

impl FaceLayout {
    fn sample<R: Rng>(rng: &mut R, height: usize, width: usize, pose_jitter: f64) -> Self {
        let s = height.min(width) as f64;
        let mut sym = |amp: f64| rng.random_range(-1.0..=1.0) * amp;
        let cx = (width as f64 - 1.0) / 2.0 + sym(0.03 * s);
        let cy = (height as f64 - 1.0) / 2.0 + sym(0.03 * s);
        let roll = sym(pose_jitter).to_radians();
        let yaw = sym(pose_jitter).to_radians();
        let pitch = sym(pose_jitter).to_radians();
        let half_w = s * rng.random_range(0.27..0.32);
        let half_h = s * rng.random_range(0.36..0.41);
        let relief = half_w * rng.random_range(0.8..1.0);
        FaceLayout {
            cx,
            cy,
            half_w,
            half_h,
            relief,
            roll,
            // Out-of-plane rotation moves the inner features across the head.
            feature_dx: 0.8 * yaw.sin(),
            feature_dy: 0.8 * pitch.sin(),
        }
    }

    /// Pixel to head-local normalized coordinates.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.roll.sin_cos();
        let u = (c * dx + s * dy) / self.half_w;
        let v = (-s * dx + c * dy) / self.half_h;
        (u, v)
    }

    fn to_pixel(&self, u: f64, v: f64) -> [f64; 2] {
        let (s, c) = self.roll.sin_cos();
        let (lx, ly) = (u * self.half_w, v * self.half_h);
        [self.cx + c * lx - s * ly, self.cy + s * lx + c * ly]
    }

    /// Feature-frame coordinates (shifted by yaw/pitch).
    fn feature(&self, u: f64, v: f64) -> (f64, f64) {
        (u - 0.3 * self.feature_dx, v - 0.3 * self.feature_dy)
    }

    fn height_at(&self, u: f64, v: f64) -> Option<f64> {
        let r2 = u * u + v * v;
        if r2 >= 1.0 {
            return None;
        }
        let (fu, fv) = self.feature(u, v);
        let g = |du: f64, dv: f64, su: f64, sv: f64| {
            (-0.5 * ((du / su).powi(2) + (dv / sv).powi(2))).exp()
        };
        let nose = 0.35 * g(fu, fv - 0.05, 0.13, 0.25);
        let brows = 0.12 * g(fu.abs() - 0.42, fv + 0.42, 0.2, 0.07);
        let sockets = -0.10 * g(fu.abs() - 0.40, fv + 0.18, 0.14, 0.09);
        let lips = 0.06 * g(fu, fv - 0.55, 0.3, 0.06);
        let window = 1.0 - r2;
        Some(self.relief * ((1.0 - r2).sqrt() + window * (nose + brows + sockets + lips)))
    }

    fn is_eye(&self, u: f64, v: f64) -> bool {
        let (fu, fv) = self.feature(u, v);
        ((fu.abs() - 0.40) / 0.16).powi(2) + ((fv + 0.18) / 0.08).powi(2) < 1.0
    }

    fn fiducials(&self) -> Vec<[f64; 2]> {
        let (sx, sy) = (0.3 * self.feature_dx, 0.3 * self.feature_dy);
        [
            (-0.40, -0.18),
            (0.40, -0.18),
            (0.0, 0.10),
            (-0.25, 0.55),
            (0.25, 0.55),
        ]
        .iter()
        .map(|&(u, v)| self.to_pixel(u + sx, v + sy))
        .collect()
    }
}

/// Builds a synthetic subject. Pure function of `spec`.
pub fn generate_scene(spec: &SubjectSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let n = h * w;

    // Geometry, light and ambient draws come from their own stream so that a
    // Mask3D and a Live subject with the same seed share them exactly.
    let mut geo_rng = rng_from(derive_seed(spec.seed, 0x6e0));
    let layout = FaceLayout::sample(&mut geo_rng, h, w, spec.pose_jitter);
    let tilt_x = geo_rng.random_range(-0.15..=0.15);
    let tilt_y = geo_rng.random_range(-0.15..=0.15);
    let light_direction = normalize3([tilt_x, tilt_y, 1.0]);
    let ambient_weight = geo_rng.random_range(0.05..=0.5);

    let mut face_depth = vec![0.0; n];
    let mut face_material = vec![MaterialClass::Environment; n];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = layout.local(x as f64, y as f64);
            if let Some(z) = layout.height_at(u, v) {
                let p = y * w + x;
                face_depth[p] = z;
                face_material[p] = if layout.is_eye(u, v) {
                    MaterialClass::EyeScreen
                } else {
                    MaterialClass::RealFace
                };
            }
        }
    }

    let mut tex_rng = rng_from(derive_seed(spec.seed, 0x7e1));
    let tj = spec.texture_jitter;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(-1.0..=1.0) * tj;

    let (depth, material, albedo) = match spec.kind {
        SubjectKind::Live | SubjectKind::ModalityReplay => {
            let albedo = face_material
                .iter()
                .map(|m| m.albedo() + jitter(&mut tex_rng))
                .collect();
            (face_depth, face_material, albedo)
        }
        SubjectKind::Mask3D => {
            let skin = if tex_rng.random_bool(0.5) {
                MaterialClass::Paper
            } else {
                MaterialClass::EyeScreen
            };
            let material: Vec<_> = face_material
                .iter()
                .map(|&m| {
                    if m == MaterialClass::Environment {
                        m
                    } else {
                        skin
                    }
                })
                .collect();
            let albedo = material
                .iter()
                .map(|m| m.albedo() + jitter(&mut tex_rng))
                .collect();
            (face_depth, material, albedo)
        }
        SubjectKind::PlanarSpoof => {
            let medium = if tex_rng.random_bool(0.5) {
                MaterialClass::Paper
            } else {
                MaterialClass::EyeScreen
            };
            // Imprint of the photographed subject's shading, in [-1, 1].
            let live_normals = normals_from_depth(&face_depth, h, w)?;
            let shade: Vec<f64> = live_normals
                .iter()
                .map(|nrm| dot(&light_direction, nrm).max(0.0))
                .collect();
            let (lo, hi) = shade
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| {
                    (a.min(s), b.max(s))
                });
            let span = (hi - lo).max(1e-12);
            let material: Vec<_> = face_material
                .iter()
                .map(|&m| {
                    if m == MaterialClass::Environment {
                        m
                    } else {
                        medium
                    }
                })
                .collect();
            let albedo = (0..n)
                .map(|p| {
                    let imprint = 2.0 * (shade[p] - lo) / span - 1.0;
                    material[p].albedo() + 0.7 * tj * imprint + 0.3 * jitter(&mut tex_rng)
                })
                .collect();
            (vec![0.0; n], material, albedo)
        }
    };

    let normals = normals_from_depth(&depth, h, w)?;
    Ok(Scene {
        height: h,
        width: w,
        depth,
        material,
        albedo,
        normals,
        ambient_weight,
        light_direction,
        kind: spec.kind,
        fiducials: layout.fiducials(),
    })
}
