//! Dense pyramidal Lucas-Kanade flow and flow-guided warping.
//!
//! A [`FlowField`] lives on the grid of the *target* image: for every target
//! pixel `x` it stores the displacement `f(x)` such that
//! `source(x - f(x)) ≈ target(x)`, i.e. the motion of source content toward
//! the target.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{box_mean, gaussian_blur, resize, sample_bicubic, sample_bilinear, Image, ResampleMethod};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Pyramid levels, including full resolution.
    pub levels: usize,
    /// Odd side of the square integration window.
    pub window: usize,
    /// Gauss-Newton updates per level.
    pub iterations: usize,
    /// Bound on each displacement component, in full-resolution pixels.
    pub max_displacement: f64,
    /// Gaussian sigma applied to both inputs first, so that differently
    /// blurred images are compared at a common, coarser scale; 0 disables.
    pub presmooth: f64,
    /// Gaussian sigma applied to the estimated field, in full-resolution
    /// pixels; 0 disables.
    pub smoothing: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 7,
            iterations: 3,
            max_displacement: 16.0,
            presmooth: 1.5,
            smoothing: 4.0,
        }
    }
}

impl FlowParams {
    /// Slower, more accurate preset used when building datasets.
    pub fn high_quality() -> Self {
        Self {
            levels: 5,
            window: 11,
            iterations: 5,
            max_displacement: 32.0,
            presmooth: 0.0,
            smoothing: 0.0,
        }
    }

    /// Smallest image side these parameters accept.
    pub fn min_side(&self) -> usize {
        (1usize << self.levels) * 8
    }

    /// Drops pyramid levels until a `width x height` input is acceptable.
    pub fn fit_to(mut self, width: usize, height: usize) -> Self {
        while self.levels > 1 && width.min(height) < self.min_side() {
            self.levels -= 1;
        }
        self
    }
}

/// Per-pixel displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    /// Median displacement magnitude.
    pub fn median_magnitude(&self) -> f64 {
        let mut m: Vec<f64> = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(&u, &v)| ((u as f64).powi(2) + (v as f64).powi(2)).sqrt())
            .collect();
        median(&mut m)
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0f64, |m, &x| m.max((x as f64).abs()))
    }

    /// Bilinearly resamples to `width*scale x height*scale` and multiplies
    /// the displacements by `scale`.
    pub fn upsample(&self, scale: usize) -> FlowField {
        if scale == 1 {
            return self.clone();
        }
        let (w, h) = (self.width * scale, self.height * scale);
        let s = scale as f64;
        let (u, v): (Vec<f32>, Vec<f32>) = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let cx = ((i % w) as f64 + 0.5) / s - 0.5;
                let cy = ((i / w) as f64 + 0.5) / s - 0.5;
                (
                    (sample_bilinear(&self.u, self.width, self.height, cx, cy) * s) as f32,
                    (sample_bilinear(&self.v, self.width, self.height, cx, cy) * s) as f32,
                )
            })
            .unzip();
        FlowField {
            width: w,
            height: h,
            u,
            v,
        }
    }

    /// Raw dump: `u32` width, `u32` height, then the `u` and `v` planes as
    /// `f32`, all little-endian.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        for x in self.u.iter().chain(&self.v) {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_raw(path: impl AsRef<Path>) -> std::io::Result<FlowField> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated flow file");
        if bytes.len() < 8 {
            return Err(bad());
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = width * height;
        if bytes.len() != 8 + 8 * n {
            return Err(bad());
        }
        let floats: Vec<f32> = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FlowField {
            width,
            height,
            u: floats[..n].to_vec(),
            v: floats[n..].to_vec(),
        })
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Box-halves a single plane, replicating the last row/column when odd.
fn half(img: &Image) -> Image {
    let (w, h) = img.size();
    let padded = img.pad_replicate(w + w % 2, h + h % 2);
    resize(&padded, padded.width() / 2, padded.height() / 2, ResampleMethod::BoxDown)
        .expect("even padded size")
}

fn central_gradients(p: &[f32], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: isize, y: isize| {
        p[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize] as f64
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = 0.5 * (at(x + 1, y) - at(x - 1, y));
            gy[i] = 0.5 * (at(x, y + 1) - at(x, y - 1));
        }
    }
    (gx, gy)
}

/// Smallest eigenvalue of the windowed structure tensor below which a pixel
/// is treated as textureless and keeps its current estimate.
const MIN_EIGEN: f64 = 1e-7;

/// Estimates the flow carrying `src` onto `dst` (both the same size).
pub fn estimate_flow(src: &Image, dst: &Image, params: &FlowParams) -> Result<FlowField> {
    if src.size() != dst.size() {
        return Err(Error::SizeMismatch(format!(
            "flow between {}x{} and {}x{}",
            src.width(),
            src.height(),
            dst.width(),
            dst.height()
        )));
    }
    if params.levels == 0 || params.window % 2 == 0 || params.max_displacement < 0.0 || !(params.presmooth >= 0.0)
        || !(params.smoothing >= 0.0)
    {
        return Err(Error::InvalidParameter(format!("{params:?}")));
    }
    let (w, h) = src.size();
    if w.min(h) < params.min_side() {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} flow input with {} levels needs at least {} px",
            params.levels,
            params.min_side()
        )));
    }

    let mut src_pyr = vec![gaussian_blur(&src.to_luma(), params.presmooth)];
    let mut dst_pyr = vec![gaussian_blur(&dst.to_luma(), params.presmooth)];
    for l in 1..params.levels {
        src_pyr.push(half(&src_pyr[l - 1]));
        dst_pyr.push(half(&dst_pyr[l - 1]));
    }

    let mut flow: Option<FlowField> = None;
    for level in (0..params.levels).rev() {
        let (s, d) = (&src_pyr[level], &dst_pyr[level]);
        let (lw, lh) = d.size();
        let bound = params.max_displacement / (1u64 << level) as f64;
        let mut f = match flow.take() {
            None => FlowField::zeros(lw, lh),
            Some(coarse) => {
                let (u, v): (Vec<f32>, Vec<f32>) = (0..lw * lh)
                    .into_par_iter()
                    .map(|i| {
                        let cx = ((i % lw) as f64 - 0.5) / 2.0;
                        let cy = ((i / lw) as f64 - 0.5) / 2.0;
                        let cu = sample_bilinear(&coarse.u, coarse.width, coarse.height, cx, cy);
                        let cv = sample_bilinear(&coarse.v, coarse.width, coarse.height, cx, cy);
                        ((2.0 * cu) as f32, (2.0 * cv) as f32)
                    })
                    .unzip();
                FlowField {
                    width: lw,
                    height: lh,
                    u,
                    v,
                }
            }
        };
        refine_level(s, d, &mut f, params, bound);
        flow = Some(f);
    }
    let flow = flow.expect("at least one level");
    if params.smoothing <= 0.0 {
        return Ok(flow);
    }
    let smooth = |p: Vec<f32>| -> Result<Vec<f32>> {
        let img = gaussian_blur(&Image::from_gray(w, h, p)?, params.smoothing);
        Ok(img.into_planes().swap_remove(0))
    };
    Ok(FlowField {
        width: w,
        height: h,
        u: smooth(flow.u)?,
        v: smooth(flow.v)?,
    })
}

fn refine_level(src: &Image, dst: &Image, f: &mut FlowField, params: &FlowParams, bound: f64) {
    let (w, h) = dst.size();
    let radius = params.window / 2;
    let (gx, gy) = central_gradients(dst.plane(0), w, h);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
    let gxx = box_mean(&prod(&gx, &gx), w, h, radius);
    let gxy = box_mean(&prod(&gx, &gy), w, h, radius);
    let gyy = box_mean(&prod(&gy, &gy), w, h, radius);
    let sp = src.plane(0);
    let dp = dst.plane(0);

    for _ in 0..params.iterations {
        let it: Vec<f64> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let x = (i % w) as f64 - f.u[i] as f64;
                let y = (i / w) as f64 - f.v[i] as f64;
                sample_bilinear(sp, w, h, x, y) - dp[i] as f64
            })
            .collect();
        let bx = box_mean(&prod(&gx, &it), w, h, radius);
        let by = box_mean(&prod(&gy, &it), w, h, radius);
        f.u.par_iter_mut()
            .zip(f.v.par_iter_mut())
            .enumerate()
            .for_each(|(i, (u, v))| {
                let (a, b, c) = (gxx[i], gxy[i], gyy[i]);
                let tr = a + c;
                let det = a * c - b * b;
                let min_eig = 0.5 * (tr - ((a - c).powi(2) + 4.0 * b * b).sqrt());
                if min_eig < MIN_EIGEN || det <= 0.0 {
                    return;
                }
                let du = (c * bx[i] - b * by[i]) / det;
                let dv = (a * by[i] - b * bx[i]) / det;
                *u = (*u as f64 + du).clamp(-bound, bound) as f32;
                *v = (*v as f64 + dv).clamp(-bound, bound) as f32;
            });
    }
}

/// Backward-warps `image` (of size `flow size * scale`) by the flow
/// upsampled to its grid.
pub fn warp_with_flow(image: &Image, flow: &FlowField, scale: usize) -> Result<Image> {
    if scale == 0 || image.width() != flow.width * scale || image.height() != flow.height * scale {
        return Err(Error::SizeMismatch(format!(
            "{}x{} image for a {}x{} flow at scale {scale}",
            image.width(),
            image.height(),
            flow.width,
            flow.height
        )));
    }
    let up = flow.upsample(scale);
    let (w, h) = image.size();
    let planes = image
        .planes()
        .iter()
        .map(|p| {
            (0..w * h)
                .into_par_iter()
                .map(|i| {
                    let x = (i % w) as f64 - up.u[i] as f64;
                    let y = (i / w) as f64 - up.v[i] as f64;
                    sample_bicubic(p, w, h, x, y) as f32
                })
                .collect()
        })
        .collect();
    Image::from_planes(w, h, planes)
}
