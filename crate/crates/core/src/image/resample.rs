use rayon::prelude::*;

use super::Image;
use crate::error::{Error, Result};

/// Interpolation kernel used by [`resample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResampleMethod {
    /// Catmull-Rom cubic (a = -0.5), widened when downscaling.
    Bicubic,
    /// Triangle filter, widened when downscaling.
    Bilinear,
    Nearest,
    /// Block average; only valid for integer downscale factors.
    BoxDown,
}

const CATMULL_ROM_A: f64 = -0.5;

#[inline]
pub(crate) fn cubic_weight(t: f64) -> f64 {
    let a = CATMULL_ROM_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

#[inline]
fn triangle_weight(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// Scales both axes by `scale`; output size is `round(input * scale)`.
pub fn resample(image: &Image, scale: f64, method: ResampleMethod) -> Result<Image> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!("scale {scale} must be positive")));
    }
    let w = (image.width() as f64 * scale).round() as usize;
    let h = (image.height() as f64 * scale).round() as usize;
    if method == ResampleMethod::BoxDown {
        let factor = (1.0 / scale).round();
        if factor < 1.0 || (factor * scale - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "box-down needs an integer downscale factor, got scale {scale}"
            )));
        }
    }
    resize(image, w, h, method)
}

/// Resamples to an explicit output size.
pub fn resize(image: &Image, width: usize, height: usize, method: ResampleMethod) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "resampled size {width}x{height} is empty"
        )));
    }
    if method == ResampleMethod::BoxDown {
        return box_down(image, width, height);
    }
    let xs = weight_table(image.width(), width, method);
    let ys = weight_table(image.height(), height, method);
    let (iw, ih) = image.size();
    let planes = image
        .planes()
        .iter()
        .map(|src| {
            // Horizontal pass into a double-precision buffer.
            let mut tmp = vec![0f64; width * ih];
            tmp.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
                let line = &src[y * iw..(y + 1) * iw];
                for (out, taps) in row.iter_mut().zip(&xs) {
                    *out = taps.iter().map(|&(i, w)| w * line[i] as f64).sum();
                }
            });
            let mut out = vec![0f32; width * height];
            out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
                let taps = &ys[y];
                for (x, o) in row.iter_mut().enumerate() {
                    let v: f64 = taps.iter().map(|&(i, w)| w * tmp[i * width + x]).sum();
                    *o = v as f32;
                }
            });
            out
        })
        .collect();
    Image::from_planes(width, height, planes)
}

/// Per-output-index list of `(source index, normalized weight)` taps with
/// replicated edges.
fn weight_table(input: usize, output: usize, method: ResampleMethod) -> Vec<Vec<(usize, f64)>> {
    let ratio = input as f64 / output as f64;
    let last = input as isize - 1;
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            if method == ResampleMethod::Nearest {
                let i = ((o as f64 + 0.5) * ratio).floor() as isize;
                return vec![(i.clamp(0, last) as usize, 1.0)];
            }
            let stretch = ratio.max(1.0);
            let (support, kernel): (f64, fn(f64) -> f64) = match method {
                ResampleMethod::Bicubic => (2.0, cubic_weight),
                _ => (1.0, triangle_weight),
            };
            let reach = support * stretch;
            let lo = (center - reach).ceil() as isize;
            let hi = (center + reach).floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            for j in lo..=hi {
                let w = kernel((j as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, last) as usize;
                match taps.iter_mut().find(|(i, _)| *i == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

fn box_down(image: &Image, width: usize, height: usize) -> Result<Image> {
    let (iw, ih) = image.size();
    if iw % width != 0 || ih % height != 0 || iw / width != ih / height {
        return Err(Error::InvalidParameter(format!(
            "box-down from {iw}x{ih} to {width}x{height} is not an integer factor"
        )));
    }
    let f = iw / width;
    let norm = (f * f) as f64;
    let planes = image
        .planes()
        .iter()
        .map(|src| {
            let mut out = vec![0f32; width * height];
            out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    let mut acc = 0f64;
                    for yy in y * f..(y + 1) * f {
                        for xx in x * f..(x + 1) * f {
                            acc += src[yy * iw + xx] as f64;
                        }
                    }
                    *o = (acc / norm) as f32;
                }
            });
            out
        })
        .collect();
    Image::from_planes(width, height, planes)
}

/// Removes the low-pass `box-down(factor) -> bicubic-up(factor)` component.
///
/// The image is edge-padded to a multiple of `factor` internally and the
/// result is cropped back to the input size.
pub fn high_frequency(image: &Image, factor: usize) -> Result<Image> {
    if factor < 2 {
        return Err(Error::InvalidParameter(format!("factor {factor} < 2")));
    }
    let (w, h) = image.size();
    let pw = w.div_ceil(factor) * factor;
    let ph = h.div_ceil(factor) * factor;
    let padded = if (pw, ph) == (w, h) {
        image.clone()
    } else {
        image.pad_replicate(pw, ph)
    };
    let low = box_down(&padded, pw / factor, ph / factor)?;
    let smooth = resize(&low, pw, ph, ResampleMethod::Bicubic)?;
    Image::from_fn(w, h, image.channels(), |c, x, y| {
        (image.get(c, x, y) as f64 - smooth.get(c, x, y) as f64) as f32
    })
}

/// Catmull-Rom sample of `plane` at continuous `(x, y)` with replicated edges.
///
/// At integer coordinates this returns the stored sample exactly.
#[inline]
pub fn sample_bicubic(plane: &[f32], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let fx = x.floor();
    let fy = y.floor();
    let (ix, iy) = (fx as isize, fy as isize);
    let (tx, ty) = (x - fx, y - fy);
    if tx == 0.0 && ty == 0.0 {
        let cx = ix.clamp(0, width as isize - 1) as usize;
        let cy = iy.clamp(0, height as isize - 1) as usize;
        return plane[cy * width + cx] as f64;
    }
    let wx = [
        cubic_weight(tx + 1.0),
        cubic_weight(tx),
        cubic_weight(1.0 - tx),
        cubic_weight(2.0 - tx),
    ];
    let wy = [
        cubic_weight(ty + 1.0),
        cubic_weight(ty),
        cubic_weight(1.0 - ty),
        cubic_weight(2.0 - ty),
    ];
    let (wl, hl) = (width as isize - 1, height as isize - 1);
    let mut acc = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let row = (iy - 1 + j as isize).clamp(0, hl) as usize * width;
        let mut racc = 0.0;
        for (i, wxi) in wx.iter().enumerate() {
            let col = (ix - 1 + i as isize).clamp(0, wl) as usize;
            racc += wxi * plane[row + col] as f64;
        }
        acc += wyj * racc;
    }
    acc
}

/// Bilinear sample with replicated edges.
#[inline]
pub fn sample_bilinear(plane: &[f32], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: usize, yy: usize| plane[yy * width + xx] as f64;
    let top = p(x0, y0) + tx * (p(x1, y0) - p(x0, y0));
    let bottom = p(x0, y1) + tx * (p(x1, y1) - p(x0, y1));
    top + ty * (bottom - top)
}
