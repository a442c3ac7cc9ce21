use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, resize, sample_bilinear, Image, ResampleMethod};

/// Number of pyramid levels searched for corners (factor 2 apart).
pub const PYRAMID_LEVELS: usize = 3;
/// 4x4 cells of 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = 128;

const HARRIS_K: f64 = 0.04;
const TENSOR_SIGMA: f64 = 1.5;
const NMS_RADIUS: isize = 2;
/// Descriptor window half-size; corners closer than this to the border are dropped.
const MARGIN: usize = 8;
const MIN_RESPONSE: f64 = 1e-10;
const RELATIVE_RESPONSE: f64 = 1e-3;
const MIN_LEVEL_SIDE: usize = 2 * MARGIN + 8;

/// A multi-scale Harris corner with a gradient-orientation descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    /// Sub-pixel position in full-resolution pixel-center coordinates.
    pub x: f64,
    pub y: f64,
    /// Pyramid level the corner was found on.
    pub scale: usize,
    pub response: f64,
    /// Unit-norm, [`DESCRIPTOR_LEN`] entries.
    pub descriptor: Vec<f32>,
}

/// Detects up to `max_count` corners, strongest first.
pub fn detect_keypoints(image: &Image, max_count: usize) -> Result<Vec<Keypoint>> {
    let (w, h) = image.size();
    if w.min(h) < 32 {
        return Err(Error::ImageTooSmall(format!(
            "keypoint detection needs at least 32x32, got {w}x{h}"
        )));
    }
    let mut level_img = image.to_luma();
    let mut all = Vec::new();
    for level in 0..PYRAMID_LEVELS {
        if level > 0 {
            let (lw, lh) = level_img.size();
            if lw / 2 < MIN_LEVEL_SIDE || lh / 2 < MIN_LEVEL_SIDE {
                break;
            }
            let even = level_img.crop(0, 0, lw & !1, lh & !1)?;
            level_img = resize(&even, lw / 2, lh / 2, ResampleMethod::BoxDown)?;
        }
        all.extend(detect_level(&level_img, level));
    }
    all.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.scale.cmp(&b.scale))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    all.truncate(max_count);
    Ok(all)
}

struct Gradients {
    w: usize,
    h: usize,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

fn gradients(img: &Image, unit: f64) -> Gradients {
    let (w, h) = img.size();
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| img.get_clamped(0, x as isize + dx, y as isize + dy) as f64;
            // Sobel, scaled to intensity per full-resolution pixel.
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx[y * w + x] = (sx / 8.0 * unit) as f32;
            gy[y * w + x] = (sy / 8.0 * unit) as f32;
        }
    }
    Gradients { w, h, gx, gy }
}

fn detect_level(img: &Image, level: usize) -> Vec<Keypoint> {
    let (w, h) = img.size();
    let unit = 1.0 / (1u64 << level) as f64;
    let g = gradients(img, unit);
    let mut xx = Image::new(w, h, 1).expect("non-empty");
    let mut xy = xx.clone();
    let mut yy = xx.clone();
    for i in 0..w * h {
        let (a, b) = (g.gx[i], g.gy[i]);
        xx.plane_mut(0)[i] = a * a;
        xy.plane_mut(0)[i] = a * b;
        yy.plane_mut(0)[i] = b * b;
    }
    let (xx, xy, yy) = (
        gaussian_blur(&xx, TENSOR_SIGMA),
        gaussian_blur(&xy, TENSOR_SIGMA),
        gaussian_blur(&yy, TENSOR_SIGMA),
    );
    let response: Vec<f64> = (0..w * h)
        .map(|i| {
            let (a, b, c) = (xx.plane(0)[i] as f64, xy.plane(0)[i] as f64, yy.plane(0)[i] as f64);
            a * c - b * b - HARRIS_K * (a + c) * (a + c)
        })
        .collect();
    let peak = response.iter().cloned().fold(0.0, f64::max);
    let threshold = MIN_RESPONSE.max(RELATIVE_RESPONSE * peak);
    let at = |x: usize, y: usize| response[y * w + x];

    let mut candidates = Vec::new();
    for y in MARGIN..h.saturating_sub(MARGIN) {
        for x in MARGIN..w.saturating_sub(MARGIN) {
            let r = at(x, y);
            if r <= threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -NMS_RADIUS..=NMS_RADIUS {
                for dx in -NMS_RADIUS..=NMS_RADIUS {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = at((x as isize + dx) as usize, (y as isize + dy) as usize);
                    // Plateaus resolve to their first pixel in raster order.
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > r || (earlier && n == r) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                candidates.push((x, y, r));
            }
        }
    }

    candidates
        .into_par_iter()
        .filter_map(|(x, y, r)| {
            let ox = parabolic_offset(at(x - 1, y), r, at(x + 1, y));
            let oy = parabolic_offset(at(x, y - 1), r, at(x, y + 1));
            let (lx, ly) = (x as f64 + ox, y as f64 + oy);
            let descriptor = describe(&g, lx, ly)?;
            let s = (1u64 << level) as f64;
            Some(Keypoint {
                x: (lx + 0.5) * s - 0.5,
                y: (ly + 0.5) * s - 0.5,
                scale: level,
                response: r,
                descriptor,
            })
        })
        .collect()
}

fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// SIFT-style histogram of gradient orientations over a 16x16 window.
fn describe(g: &Gradients, cx: f64, cy: f64) -> Option<Vec<f32>> {
    let mut hist = [0f64; DESCRIPTOR_LEN];
    let sigma = MARGIN as f64;
    for j in 0..16 {
        for i in 0..16 {
            let dx = i as f64 - 7.5;
            let dy = j as f64 - 7.5;
            let gx = sample_bilinear(&g.gx, g.w, g.h, cx + dx, cy + dy);
            let gy = sample_bilinear(&g.gy, g.w, g.h, cx + dx, cy + dy);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let weight = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp() * mag;
            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let bin = angle / std::f64::consts::TAU * 8.0;
            let b0 = bin.floor() as usize % 8;
            let frac = bin - bin.floor();
            let cell = (j / 4) * 4 + i / 4;
            hist[cell * 8 + b0] += weight * (1.0 - frac);
            hist[cell * 8 + (b0 + 1) % 8] += weight * frac;
        }
    }
    normalize(&mut hist)?;
    for v in &mut hist {
        *v = v.min(0.2);
    }
    normalize(&mut hist)?;
    Some(hist.iter().map(|&v| v as f32).collect())
}

fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(())
}
