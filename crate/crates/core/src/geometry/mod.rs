//! Global alignment of the reference: corner keypoints, descriptor matching,
//! RANSAC homography estimation, projective warping and the center rectangle.

mod center;
mod keypoints;
mod matching;
mod ransac;
mod warp;

pub use center::{center_rect_from_homography, FOOTPRINT_SLACK, MIN_CENTER_SIDE};
pub use keypoints::{detect_keypoints, Keypoint, DESCRIPTOR_LEN, PYRAMID_LEVELS};
pub use matching::{match_descriptors, Correspondence};
pub use ransac::{estimate_homography_ransac, fit_homography, RansacParams};
pub use warp::warp_homography;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A projective map, stored row-major and normalized so that `m[2][2] == 1`.
///
/// Serializes as a flat 9-number JSON array.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// `(x, y) -> (s x + tx, s y + ty)`.
    pub const fn scale_translation(s: f64, tx: f64, ty: f64) -> Self {
        Self {
            m: [[s, 0.0, tx], [0.0, s, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Builds from a row-major matrix, normalizing by `m[2][2]`.
    pub fn from_rows(m: [[f64; 3]; 3]) -> Result<Self> {
        let d = m[2][2];
        if !d.is_finite() || d.abs() < 1e-12 || m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularHomography);
        }
        let mut n = m;
        for row in &mut n {
            for v in row.iter_mut() {
                *v /= d;
            }
        }
        n[2][2] = 1.0;
        let h = Self { m: n };
        if h.det().abs() <= 1e-12 {
            return Err(Error::SingularHomography);
        }
        Ok(h)
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self> {
        Self::from_rows([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        Self::from_rows([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.to_row_major())
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Projective denominator at `(x, y)`; positive in front of the camera.
    #[inline]
    pub fn depth(&self, x: f64, y: f64) -> f64 {
        self.m[2][0] * x + self.m[2][1] * y + self.m[2][2]
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    /// Inverse via the adjugate (exact for the identity and translations).
    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if !det.is_finite() || det.abs() <= 1e-12 {
            return Err(Error::SingularHomography);
        }
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Self::from_rows(adj)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        let (a, b) = (&self.m, &other.m);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Self::from_rows(out)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = Error;

    fn try_from(v: [f64; 9]) -> Result<Self> {
        Self::from_row_major(v)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_major()
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)` in frame coordinates
/// with even origin and even size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CenterRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CenterRect {
    /// Validates the rectangle against a `width x height` frame.
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, width: usize, height: usize) -> Result<Self> {
        let r = Self { x0, y0, x1, y1 };
        r.validate(width, height)?;
        Ok(r)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let Self { x0, y0, x1, y1 } = *self;
        if !(x0 < x1 && y0 < y1 && x1 <= width && y1 <= height) {
            return Err(Error::DegenerateCenter(format!(
                "{self} does not fit a {width}x{height} frame"
            )));
        }
        if x0 % 2 != 0 || y0 % 2 != 0 || (x1 - x0) % 2 != 0 || (y1 - y0) % 2 != 0 {
            return Err(Error::DegenerateCenter(format!("{self} is not even-aligned")));
        }
        Ok(())
    }

    /// The largest even-aligned rectangle centered in the frame covering
    /// `1/factor` of each side.
    pub fn centered(width: usize, height: usize, factor: usize) -> Result<Self> {
        let w = (width / factor) & !1;
        let h = (height / factor) & !1;
        let x0 = ((width - w) / 2) & !1;
        let y0 = ((height - h) / 2) & !1;
        Self::new(x0, y0, x0 + w, y0 + h, width, height)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn scaled(&self, s: usize) -> CenterRect {
        CenterRect {
            x0: self.x0 * s,
            y0: self.y0 * s,
            x1: self.x1 * s,
            y1: self.y1 * s,
        }
    }
}

impl std::fmt::Display for CenterRect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}) x [{}, {})", self.x0, self.x1, self.y0, self.y1)
    }
}
