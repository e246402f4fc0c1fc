//! 2D affine transforms and bilinear resampling of interleaved images.

use serde::{Deserialize, Serialize};

/// Row-major 2×3 affine map `p ↦ A p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub m: [[f64; 3]; 2],
}

impl Default for Affine2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Affine2 {
    pub fn identity() -> Self {
        Affine2 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine2 {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
        }
    }

    /// Rotation by `degrees` about `center`, followed by a shift.
    pub fn rigid(center: [f64; 2], degrees: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let [cx, cy] = center;
        Affine2 {
            m: [
                [c, -s, cx - c * cx + s * cy + dx],
                [s, c, cy - s * cx - c * cy + dy],
            ],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return None;
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Some(Affine2 {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        })
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Affine2) -> Self {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                m[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            m[r][2] += a[r][2];
        }
        Affine2 { m }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn max_abs_diff(&self, other: &Affine2) -> f64 {
        let mut d: f64 = 0.0;
        for r in 0..2 {
            for c in 0..3 {
                d = d.max((self.m[r][c] - other.m[r][c]).abs());
            }
        }
        d
    }
}

/// Resamples an interleaved `height × width × channels` image so that
/// `out(q) = src(inverse(q))`. Bilinear, clamped at the border.
pub fn warp_bilinear(
    src: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    inverse: &Affine2,
) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    let at = |y: usize, x: usize, c: usize| src[(y * width + x) * channels + c];
    for y in 0..height {
        for x in 0..width {
            let [sx, sy] = inverse.apply([x as f64, y as f64]);
            let sx = sx.clamp(0.0, (width - 1) as f64);
            let sy = sy.clamp(0.0, (height - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..channels {
                let top = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
                let bottom = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
                out[(y * width + x) * channels + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_compose_cancel() {
        let a = Affine2::rigid([10.0, 12.0], 1.7, 0.4, -1.1);
        let id = a.compose(&a.inverse().unwrap());
        assert!(id.max_abs_diff(&Affine2::identity()) < 1e-12);
    }

    #[test]
    fn identity_warp_is_exact() {
        let src: Vec<f64> = (0..4 * 5 * 3).map(|i| i as f64 * 0.1).collect();
        assert_eq!(warp_bilinear(&src, 4, 5, 3, &Affine2::identity()), src);
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let src: Vec<f64> = (0..36).map(|i| i as f64).collect();
        let out = warp_bilinear(&src, 6, 6, 1, &Affine2::translation(-1.0, 0.0));
        // out(x) = src(x - 1): columns shift right, the first column clamps.
        assert_eq!(out[7], src[6]);
        assert_eq!(out[6], src[6]);
    }
}
