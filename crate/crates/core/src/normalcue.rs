//! Frame registration and normal-cue extraction.
//!
//! Subtracting two aligned frames captured under lights with diffuse weights
//! `k_a`, `k_b` cancels the ambient term and leaves `ρ cosθ (k_a − k_b)`;
//! dividing by the weight difference yields the normal cue `ρ cosθ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{warp_bilinear, Affine2};
use crate::photometry::{
    diffuse_weight, LightCaptcha, LightParams, ReflectionFrame, CHANNELS, MIN_WEIGHT_DELTA,
};

/// Upper clamp applied to cue values. `ρ cosθ ≤ 1` for clean data, the
/// headroom absorbs noise.
pub const CUE_MAX: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalCue {
    pub height: usize,
    pub width: usize,
    /// `ρ cosθ` per pixel, clamped to `[0, CUE_MAX]`.
    pub values: Vec<f64>,
    /// Index `i` of the source pair `(F_i, F_{i+1})`.
    pub index: usize,
}

impl NormalCue {
    /// Values mapped onto `[0, 1]`.
    pub fn rescaled(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / CUE_MAX).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineAlignment {
    /// Maps pixel coordinates of the first frame onto the second.
    pub matrix: Affine2,
    /// Mean fiducial distance after alignment, pixels.
    pub residual: f64,
}

impl AffineAlignment {
    pub fn identity() -> Self {
        AffineAlignment {
            matrix: Affine2::identity(),
            residual: 0.0,
        }
    }
}

/// Least-squares affine fit from the fiducials of `frame_a` to those of
/// `frame_b`.
pub fn estimate_alignment(
    frame_a: &ReflectionFrame,
    frame_b: &ReflectionFrame,
) -> Result<AffineAlignment> {
    if (frame_a.height, frame_a.width) != (frame_b.height, frame_b.width) {
        return Err(Error::validation("frames differ in size"));
    }
    let (src, dst) = (&frame_a.fiducials, &frame_b.fiducials);
    if src.len() != dst.len() {
        return Err(Error::Alignment(format!(
            "fiducial count mismatch: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::Alignment(format!(
            "{} fiducials, need at least 3",
            src.len()
        )));
    }
    let n = src.len();
    let mut design = DMatrix::<f64>::zeros(n, 3);
    let mut target = DMatrix::<f64>::zeros(n, 2);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        design[(i, 0)] = s[0];
        design[(i, 1)] = s[1];
        design[(i, 2)] = 1.0;
        target[(i, 0)] = d[0];
        target[(i, 1)] = d[1];
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.rank(1e-9 * smax.max(1.0)) < 3 {
        return Err(Error::Alignment("fiducials are collinear".into()));
    }
    let solution = svd
        .solve(&target, 1e-12)
        .map_err(|e| Error::Alignment(e.to_string()))?;
    let mut m = [[0.0; 3]; 2];
    for r in 0..2 {
        let col: DVector<f64> = solution.column(r).into_owned();
        m[r] = [col[0], col[1], col[2]];
    }
    let matrix = Affine2 { m };
    if matrix.determinant().abs() < 1e-9 {
        return Err(Error::Alignment("singular affine fit".into()));
    }
    let residual = src
        .iter()
        .zip(dst)
        .map(|(s, d)| {
            let p = matrix.apply(*s);
            ((p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / n as f64;
    Ok(AffineAlignment { matrix, residual })
}

/// Fiducial alignment when both frames carry landmarks, identity when
/// neither does.
pub fn align_frames(
    frame_a: &ReflectionFrame,
    frame_b: &ReflectionFrame,
) -> Result<AffineAlignment> {
    if frame_a.fiducials.is_empty() && frame_b.fiducials.is_empty() {
        if (frame_a.height, frame_a.width) != (frame_b.height, frame_b.width) {
            return Err(Error::validation("frames differ in size"));
        }
        return Ok(AffineAlignment::identity());
    }
    estimate_alignment(frame_a, frame_b)
}

/// Channels whose weight difference exceeds the floor, with their `Δk`.
fn usable_channels(lp_a: LightParams, lp_b: LightParams) -> Result<Vec<(usize, f64)>> {
    let (ka, kb) = (diffuse_weight(lp_a), diffuse_weight(lp_b));
    let deltas: Vec<(usize, f64)> = (0..CHANNELS).map(|c| (c, ka[c] - kb[c])).collect();
    let max_delta = deltas.iter().map(|d| d.1.abs()).fold(0.0, f64::max);
    let usable: Vec<_> = deltas
        .into_iter()
        .filter(|d| d.1.abs() > MIN_WEIGHT_DELTA)
        .collect();
    if usable.is_empty() {
        return Err(Error::DegeneratePair {
            index: 0,
            max_delta,
        });
    }
    Ok(usable)
}

/// Normal cue of one frame pair. `frame_a` is warped onto `frame_b` first.
///
/// Each usable channel gives an estimate `ΔF_c / Δk_c`; they are combined by
/// least squares, `Σ Δk_c ΔF_c / Σ Δk_c²`, so that channels with a small
/// weight difference do not amplify noise.
pub fn extract_normal_cue(
    frame_a: &ReflectionFrame,
    frame_b: &ReflectionFrame,
    lp_a: LightParams,
    lp_b: LightParams,
    align: &AffineAlignment,
) -> Result<NormalCue> {
    let (h, w) = (frame_b.height, frame_b.width);
    if (frame_a.height, frame_a.width) != (h, w) {
        return Err(Error::validation("frames differ in size"));
    }
    let usable = usable_channels(lp_a, lp_b)?;
    let norm: f64 = usable.iter().map(|(_, d)| d * d).sum();

    let warped;
    let pixels_a = if align.matrix.is_identity() {
        &frame_a.pixels
    } else {
        let inverse = align
            .matrix
            .inverse()
            .ok_or_else(|| Error::Alignment("singular alignment".into()))?;
        warped = warp_bilinear(&frame_a.pixels, h, w, CHANNELS, &inverse);
        &warped
    };

    let values = (0..h * w)
        .map(|p| {
            let base = p * CHANNELS;
            let dot: f64 = usable
                .iter()
                .map(|&(c, d)| d * (pixels_a[base + c] - frame_b.pixels[base + c]))
                .sum();
            let v = dot / norm;
            if v.is_finite() {
                v.clamp(0.0, CUE_MAX)
            } else {
                0.0
            }
        })
        .collect();
    Ok(NormalCue {
        height: h,
        width: w,
        values,
        index: 0,
    })
}

/// One cue per contiguous frame pair, computed with the given per-frame
/// lights.
pub fn cues_for_lights(
    frames: &[ReflectionFrame],
    lights: &[LightParams],
) -> Result<Vec<NormalCue>> {
    if frames.len() != lights.len() {
        return Err(Error::validation(format!(
            "{} frames but {} lights",
            frames.len(),
            lights.len()
        )));
    }
    if frames.len() < 2 {
        return Err(Error::validation("need at least 2 frames"));
    }
    (0..frames.len() - 1)
        .map(|i| {
            let align = align_frames(&frames[i], &frames[i + 1])?;
            extract_normal_cue(&frames[i], &frames[i + 1], lights[i], lights[i + 1], &align)
                .map(|cue| NormalCue { index: i, ..cue })
                .map_err(|e| match e {
                    Error::DegeneratePair { max_delta, .. } => Error::DegeneratePair {
                        index: i,
                        max_delta,
                    },
                    other => other,
                })
        })
        .collect()
}

pub fn build_cue_sequence(
    frames: &[ReflectionFrame],
    captcha: &LightCaptcha,
) -> Result<Vec<NormalCue>> {
    cues_for_lights(frames, &captcha.sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::{
        generate_captcha, render_frame, render_video, CameraModel, Misalignment,
    };
    use crate::scene::{generate_scene, SubjectKind, SubjectSpec};

    fn frame_with_fiducials(points: Vec<[f64; 2]>) -> ReflectionFrame {
        ReflectionFrame {
            height: 16,
            width: 16,
            pixels: vec![0.0; 16 * 16 * 3],
            light: LightParams {
                alpha: 0,
                beta: 1.0,
            },
            fiducials: points,
        }
    }

    const POINTS: [[f64; 2]; 5] = [
        [4.0, 5.0],
        [11.0, 5.5],
        [7.5, 8.0],
        [5.0, 11.0],
        [10.5, 11.2],
    ];

    #[test]
    fn identical_fiducials_give_identity() {
        let a = frame_with_fiducials(POINTS.to_vec());
        let fit = estimate_alignment(&a, &a).unwrap();
        assert!(fit.matrix.max_abs_diff(&Affine2::identity()) < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn recovers_planted_translation() {
        let shift = Affine2::translation(1.5, -0.7);
        let a = frame_with_fiducials(POINTS.to_vec());
        let b = frame_with_fiducials(POINTS.iter().map(|&p| shift.apply(p)).collect());
        let fit = estimate_alignment(&a, &b).unwrap();
        assert!(fit.matrix.max_abs_diff(&shift) < 1e-6);
    }

    #[test]
    fn recovers_planted_rotation() {
        // Rotation by 2° about (7.5, 7.5), written out by hand as
        // T(c) · R(2°) · T(−c).
        let t = 2f64.to_radians();
        let (c, s) = (t.cos(), t.sin());
        let expected = Affine2 {
            m: [
                [c, -s, 7.5 - 7.5 * c + 7.5 * s],
                [s, c, 7.5 - 7.5 * s - 7.5 * c],
            ],
        };
        let planted = Affine2::translation(7.5, 7.5)
            .compose(&Affine2 {
                m: [[c, -s, 0.0], [s, c, 0.0]],
            })
            .compose(&Affine2::translation(-7.5, -7.5));
        assert!(planted.max_abs_diff(&expected) < 1e-12);
        let a = frame_with_fiducials(POINTS.to_vec());
        let b = frame_with_fiducials(POINTS.iter().map(|&p| planted.apply(p)).collect());
        let fit = estimate_alignment(&a, &b).unwrap();
        assert!(fit.matrix.max_abs_diff(&expected) < 1e-6);
    }

    #[test]
    fn too_few_or_collinear_fiducials_fail() {
        let a = frame_with_fiducials(POINTS[..2].to_vec());
        assert!(matches!(
            estimate_alignment(&a, &a),
            Err(Error::Alignment(_))
        ));
        let line = frame_with_fiducials(vec![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        assert!(matches!(
            estimate_alignment(&line, &line),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn planar_cue_is_constant() {
        let scene = generate_scene(&SubjectSpec::new(SubjectKind::PlanarSpoof, 7, 24, 24)).unwrap();
        let captcha = generate_captcha(2, 3).unwrap();
        let frames = render_video(&scene, &captcha, &CameraModel::ideal(), 0).unwrap();
        let cue = extract_normal_cue(
            &frames[0],
            &frames[1],
            captcha.sequence[0],
            captcha.sequence[1],
            &AffineAlignment::identity(),
        )
        .unwrap();
        let truth = scene.normal_cue_truth();
        for (v, t) in cue.values.iter().zip(&truth) {
            assert!((v - t).abs() < 1e-9);
        }
        let cos = scene.cos_theta(0);
        for p in 0..scene.len() {
            assert!((cue.values[p] / scene.albedo[p] - cos).abs() < 1e-9);
        }
    }

    #[test]
    fn ambient_cancels() {
        let mut scene = generate_scene(&SubjectSpec::new(SubjectKind::Live, 9, 24, 24)).unwrap();
        let lights = generate_captcha(2, 5).unwrap().sequence;
        let cue_at = |scene: &crate::scene::Scene| {
            let fa = render_frame(scene, lights[0], &CameraModel::ideal(), 0).unwrap();
            let fb = render_frame(scene, lights[1], &CameraModel::ideal(), 1).unwrap();
            extract_normal_cue(&fa, &fb, lights[0], lights[1], &AffineAlignment::identity())
                .unwrap()
        };
        scene.ambient_weight = 0.1;
        let low = cue_at(&scene);
        scene.ambient_weight = 0.5;
        let high = cue_at(&scene);
        for (a, b) in low.values.iter().zip(&high.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn live_cue_matches_ground_truth_oracle() {
        let scene = generate_scene(&SubjectSpec::new(SubjectKind::Live, 21, 32, 32)).unwrap();
        let captcha = generate_captcha(2, 8).unwrap();
        let frames = render_video(&scene, &captcha, &CameraModel::ideal(), 0).unwrap();
        let cue = build_cue_sequence(&frames, &captcha).unwrap().remove(0);
        let l = scene.light_direction;
        for p in 0..scene.len() {
            let n = scene.normals[p];
            let cos = (l[0] * n[0] + l[1] * n[1] + l[2] * n[2]).max(0.0);
            assert!((cue.values[p] - scene.albedo[p] * cos).abs() < 1e-9);
        }
    }

    #[test]
    fn cue_is_symmetric_in_pair_order_and_light_choice() {
        let scene = generate_scene(&SubjectSpec::new(SubjectKind::Mask3D, 2, 20, 20)).unwrap();
        let c1 = generate_captcha(2, 1).unwrap().sequence;
        let c2 = generate_captcha(2, 2).unwrap().sequence;
        let cam = CameraModel::ideal();
        let cue = |a: LightParams, b: LightParams| {
            let fa = render_frame(&scene, a, &cam, 0).unwrap();
            let fb = render_frame(&scene, b, &cam, 0).unwrap();
            extract_normal_cue(&fa, &fb, a, b, &AffineAlignment::identity())
                .unwrap()
                .values
        };
        let forward = cue(c1[0], c1[1]);
        let backward = cue(c1[1], c1[0]);
        let other = cue(c2[0], c2[1]);
        for i in 0..forward.len() {
            assert!((forward[i] - backward[i]).abs() < 1e-12);
            assert!((forward[i] - other[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_pair_is_rejected() {
        let f = frame_with_fiducials(vec![]);
        let lp = LightParams {
            alpha: 2,
            beta: 0.7,
        };
        let near = LightParams {
            alpha: 2,
            beta: 0.7005,
        };
        assert!(matches!(
            extract_normal_cue(&f, &f, lp, near, &AffineAlignment::identity()),
            Err(Error::DegeneratePair { .. })
        ));
    }

    #[test]
    fn sequence_lengths() {
        let scene = generate_scene(&SubjectSpec::new(SubjectKind::Live, 3, 16, 16)).unwrap();
        for n in [2, 5] {
            let captcha = generate_captcha(n, n as u64).unwrap();
            let frames = render_video(&scene, &captcha, &CameraModel::ideal(), 0).unwrap();
            let cues = build_cue_sequence(&frames, &captcha).unwrap();
            assert_eq!(cues.len(), n - 1);
            for (i, c) in cues.iter().enumerate() {
                assert_eq!(c.index, i);
            }
            assert!(build_cue_sequence(&frames[..n - 1], &captcha).is_err());
        }
    }

    #[test]
    fn random_videos_give_finite_cues() {
        for seed in 0..100u64 {
            let kind = SubjectKind::ALL[(seed % 4) as usize];
            let scene = generate_scene(&SubjectSpec::new(kind, seed, 16, 16)).unwrap();
            let captcha = generate_captcha(2 + (seed % 4) as usize, seed).unwrap();
            let cam = CameraModel {
                noise_sigma: 0.05 * (seed % 3) as f64 / 2.0,
                quantize_bits: if seed % 2 == 0 { 8 } else { 0 },
                misalignment: Misalignment {
                    dx: 0.5,
                    dy: -0.25,
                    degrees: 0.5,
                },
                shake: Misalignment {
                    dx: 0.5,
                    dy: 0.5,
                    degrees: 1.0,
                },
            };
            let frames = render_video(&scene, &captcha, &cam, seed).unwrap();
            for cue in build_cue_sequence(&frames, &captcha).unwrap() {
                assert!(cue
                    .values
                    .iter()
                    .all(|v| v.is_finite() && (0.0..=CUE_MAX).contains(v)));
            }
        }
    }

    #[test]
    fn alignment_undoes_camera_shift() {
        let scene = generate_scene(&SubjectSpec::new(SubjectKind::Live, 5, 32, 32)).unwrap();
        let lights = generate_captcha(2, 4).unwrap().sequence;
        let shifted = CameraModel {
            misalignment: Misalignment {
                dx: 1.0,
                dy: -1.0,
                degrees: 0.0,
            },
            ..CameraModel::ideal()
        };
        let fa = render_frame(&scene, lights[0], &shifted, 0).unwrap();
        let fb = render_frame(&scene, lights[1], &CameraModel::ideal(), 0).unwrap();
        let align = estimate_alignment(&fa, &fb).unwrap();
        assert!(align.matrix.max_abs_diff(&Affine2::translation(-1.0, 1.0)) < 1e-9);
        let cue = extract_normal_cue(&fa, &fb, lights[0], lights[1], &align).unwrap();
        let truth = scene.normal_cue_truth();
        // Integer shift: exact away from the clamped border.
        for y in 2..30 {
            for x in 2..30 {
                let p = y * 32 + x;
                assert!((cue.values[p] - truth[p]).abs() < 1e-9);
            }
        }
    }
}
