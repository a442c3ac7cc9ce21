//! Planar floating-point rasters and the primitive operations every other
//! stage is built from.
//!
//! Coordinates follow the pixel-center convention: pixel `(x, y)` covers the
//! continuous square `[x - 0.5, x + 0.5] x [y - 0.5, y + 0.5]`. Under a
//! factor-2 box reduction, low-resolution pixel `i` is centered on
//! high-resolution coordinate `2i + 0.5`.

mod filter;
mod io;
mod resample;

pub use filter::{box_mean, gaussian_blur, gaussian_kernel};
pub use io::{load_image, save_image};
pub use resample::{
    high_frequency, resample, resize, sample_bicubic, sample_bilinear, ResampleMethod,
};

use crate::error::{Error, Result};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A planar image with one or three channels of `f32` intensities.
///
/// Intensities nominally live in `[0, 1]`; intermediate results may leave
/// that range and are only clamped when written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    planes: Vec<Vec<f32>>,
}

impl Image {
    /// A zero-filled image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            planes: vec![vec![value; width * height]; channels],
        })
    }

    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f32>>) -> Result<Self> {
        check_dims(width, height, planes.len())?;
        if let Some(p) = planes.iter().find(|p| p.len() != width * height) {
            return Err(Error::InvalidImage(format!(
                "plane of length {} for a {width}x{height} image",
                p.len()
            )));
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    pub fn from_gray(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_planes(width, height, vec![data])
    }

    /// Builds an image by evaluating `f(channel, x, y)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        let planes = (0..channels)
            .map(|c| {
                let mut plane = Vec::with_capacity(width * height);
                for y in 0..height {
                    for x in 0..width {
                        plane.push(f(c, x, y));
                    }
                }
                plane
            })
            .collect();
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    #[inline]
    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        &self.planes[c]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.planes[c]
    }

    pub fn planes(&self) -> &[Vec<f32>] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Vec<f32>> {
        self.planes
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.planes[c][y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.planes[c][y * self.width + x] = v;
    }

    /// Sample with replicated edges for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, c: usize, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.planes[c][y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels() == other.channels()
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidParameter(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let planes = self
            .planes
            .iter()
            .map(|p| {
                let mut out = Vec::with_capacity(w * h);
                for y in y0..y0 + h {
                    out.extend_from_slice(&p[y * self.width + x0..y * self.width + x0 + w]);
                }
                out
            })
            .collect();
        Ok(Image {
            width: w,
            height: h,
            planes,
        })
    }

    /// Extends the image to `w x h` by replicating the last row and column.
    pub fn pad_replicate(&self, w: usize, h: usize) -> Image {
        debug_assert!(w >= self.width && h >= self.height);
        Image::from_fn(w, h, self.channels(), |c, x, y| {
            self.get_clamped(c, x as isize, y as isize)
        })
        .expect("padded size is non-zero")
    }

    /// Writes `src` into `self` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &Image, x0: usize, y0: usize) -> Result<()> {
        if src.channels() != self.channels()
            || x0 + src.width > self.width
            || y0 + src.height > self.height
        {
            return Err(Error::SizeMismatch(format!(
                "cannot paste {}x{}x{} at ({x0}, {y0}) into {}x{}x{}",
                src.width,
                src.height,
                src.channels(),
                self.width,
                self.height,
                self.channels()
            )));
        }
        for (dst, s) in self.planes.iter_mut().zip(&src.planes) {
            for y in 0..src.height {
                let d = (y0 + y) * self.width + x0;
                dst[d..d + src.width].copy_from_slice(&s[y * src.width..(y + 1) * src.width]);
            }
        }
        Ok(())
    }

    /// Applies `f` to every sample.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            planes: self
                .planes
                .iter()
                .map(|p| p.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    /// Per-channel gain, computed in double precision.
    pub fn scale_channels(&self, gains: &[f64]) -> Result<Image> {
        if gains.len() != self.channels() {
            return Err(Error::SizeMismatch(format!(
                "{} gains for {} channels",
                gains.len(),
                self.channels()
            )));
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            planes: self
                .planes
                .iter()
                .zip(gains)
                .map(|(p, &g)| p.iter().map(|&v| (v as f64 * g) as f32).collect())
                .collect(),
        })
    }

    /// Luma plane (Rec.601). Single-channel images pass through unchanged.
    pub fn to_luma(&self) -> Image {
        if self.channels() == 1 {
            return self.clone();
        }
        let (r, g, b) = (&self.planes[0], &self.planes[1], &self.planes[2]);
        let luma = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| {
                (LUMA_WEIGHTS[0] * r as f64 + LUMA_WEIGHTS[1] * g as f64 + LUMA_WEIGHTS[2] * b as f64)
                    as f32
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            planes: vec![luma],
        }
    }

    /// Repeats a single plane into three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels() == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            planes: vec![self.planes[0].clone(); 3],
        }
    }
}

/// Free-function form of [`Image::to_luma`].
pub fn to_luma(image: &Image) -> Image {
    image.to_luma()
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidImage(format!(
            "{channels} channels (expected 1 or 3)"
        )));
    }
    Ok(())
}
