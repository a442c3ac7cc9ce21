//! Detail transfer: moving aligned reference patches to every LR position
//! through the index map, then injecting their high frequencies into the
//! bicubic upsampling under a confidence gate.

mod pipeline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CenterRect;
use crate::image::{high_frequency, resample, Image, ResampleMethod};
use crate::kfmatch::{ConfidenceMap, IndexMap, MatchMode};

pub use pipeline::{
    align_reference, super_resolve, AlignmentStats, Diagnostics, SrConfig, SrOutput, StageTimings, TransferMode,
};

/// The only supported upscaling factor.
pub const SCALE: usize = 2;

/// HR-resolution transfer result.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedRef {
    pub image: Image,
    /// Contributions averaged into each pixel; 0 where nothing was
    /// transferred (those pixels hold 0).
    pub coverage: Vec<u32>,
}

impl WarpedRef {
    pub fn covered_fraction(&self) -> f64 {
        self.coverage.iter().filter(|&&c| c > 0).count() as f64 / self.coverage.len() as f64
    }

    /// Coverage rendered as a gray image, scaled so the maximum is white.
    pub fn coverage_image(&self) -> Image {
        let max = self.coverage.iter().copied().max().unwrap_or(0).max(1) as f32;
        let data = self.coverage.iter().map(|&c| c as f32 / max).collect();
        Image::from_gray(self.image.width(), self.image.height(), data).expect("non-empty coverage")
    }
}

/// Transfers reference patches to the whole HR frame.
///
/// `ref_aligned` is the reference aligned to `center` at HR scale. Every
/// query `i` contributes the 6×6 block of `ref_aligned` around its match
/// `M_i` to the 6×6 block around `2i`, and overlapping contributions are
/// averaged. In kernel-free mode the center is copied from `ref_aligned`
/// directly.
pub fn corner_warp(ref_aligned: &Image, index_map: &IndexMap, center: CenterRect, scale: usize) -> Result<WarpedRef> {
    warp_patches(ref_aligned, index_map, center, scale, true, None)
}

/// [`corner_warp`], optionally skipping the queries outside the center
/// and scaling what position `i` contributes by `weights[i]` (row-major LR
/// order), copied center pixels included.
pub(crate) fn warp_patches(
    ref_aligned: &Image,
    index_map: &IndexMap,
    center: CenterRect,
    scale: usize,
    corners: bool,
    weights: Option<&[f64]>,
) -> Result<WarpedRef> {
    if scale != SCALE {
        return Err(Error::InvalidParameter(format!("scale {scale} is not supported, only 2")));
    }
    if index_map.center() != center {
        return Err(Error::InvalidParameter(format!(
            "index map was built for {}, not {center}",
            index_map.center()
        )));
    }
    let (rw, rh) = (2 * center.width(), 2 * center.height());
    if ref_aligned.size() != (rw, rh) {
        return Err(Error::SizeMismatch(format!(
            "aligned reference is {}x{}, the center needs {rw}x{rh}",
            ref_aligned.width(),
            ref_aligned.height()
        )));
    }
    let (w, h) = (index_map.width(), index_map.height());
    if weights.is_some_and(|wt| wt.len() != w * h) {
        return Err(Error::SizeMismatch(format!("patch weights for a {w}x{h} map")));
    }
    let (hw, hh) = (2 * w, 2 * h);
    let channels = ref_aligned.channels();
    let copy_center = index_map.mode() == MatchMode::KernelFree;
    let transfers = |x: usize, y: usize| index_map.is_query(x, y) && (corners || center.contains(x, y));

    // Gathered per output row so rows are independent; contributions are
    // summed in row-major query order.
    let rows: Vec<(Vec<Vec<f32>>, Vec<u32>)> = (0..hh)
        .into_par_iter()
        .map(|yy| {
            let mut vals = vec![vec![0f32; hw]; channels];
            let mut cov = vec![0u32; hw];
            let mut acc = vec![0f64; channels];
            for xx in 0..hw {
                if copy_center && center.contains(xx / 2, yy / 2) {
                    let (sx, sy) = (xx - 2 * center.x0, yy - 2 * center.y0);
                    for (c, v) in vals.iter_mut().enumerate() {
                        v[xx] = match weights {
                            None => ref_aligned.get(c, sx, sy),
                            Some(wt) => (wt[(yy / 2) * w + xx / 2] * ref_aligned.get(c, sx, sy) as f64) as f32,
                        };
                    }
                    cov[xx] = 1;
                    continue;
                }
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut n = 0u32;
                // Query q covers HR columns 2q-2 ..= 2q+3.
                let qy_range = yy.saturating_sub(2) / 2..=((yy + 2) / 2).min(h - 1);
                for qy in qy_range {
                    for qx in xx.saturating_sub(2) / 2..=((xx + 2) / 2).min(w - 1) {
                        if !transfers(qx, qy) {
                            continue;
                        }
                        let (mx, my) = index_map.get(qx, qy);
                        let sx = 2 * (mx - center.x0) + xx - 2 * qx;
                        let sy = 2 * (my - center.y0) + yy - 2 * qy;
                        match weights {
                            None => acc
                                .iter_mut()
                                .enumerate()
                                .for_each(|(c, a)| *a += ref_aligned.get(c, sx, sy) as f64),
                            Some(wt) => {
                                let k = wt[qy * w + qx];
                                acc.iter_mut()
                                    .enumerate()
                                    .for_each(|(c, a)| *a += k * ref_aligned.get(c, sx, sy) as f64);
                            }
                        }
                        n += 1;
                    }
                }
                if n > 0 {
                    for (v, a) in vals.iter_mut().zip(&acc) {
                        v[xx] = (a / n as f64) as f32;
                    }
                }
                cov[xx] = n;
            }
            (vals, cov)
        })
        .collect();

    let mut planes = vec![Vec::with_capacity(hw * hh); channels];
    let mut coverage = Vec::with_capacity(hw * hh);
    for (vals, cov) in rows {
        for (p, v) in planes.iter_mut().zip(vals) {
            p.extend(v);
        }
        coverage.extend(cov);
    }
    Ok(WarpedRef {
        image: Image::from_planes(hw, hh, planes)?,
        coverage,
    })
}

/// Standard deviation of the replicate-padded 3×3 luma patch at `(x, y)`.
fn patch_std(luma: &Image, x: usize, y: usize) -> f64 {
    let (mut s, mut s2) = (0.0, 0.0);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let v = luma.get_clamped(0, x as isize + dx, y as isize + dy) as f64;
            s += v;
            s2 += v * v;
        }
    }
    ((s2 - s * s / 9.0) / 9.0).max(0.0).sqrt()
}

/// Per-position contrast ratio `min(σ_lr / σ_ref, 1)` of 3×3 luma patches.
///
/// Zero-mean cosine matching ignores contrast, so a faint query can match a
/// strongly textured key; scaling the transferred detail by this ratio
/// carries the key's structure at the query's own contrast. `reference` is
/// the aligned reference at LR scale, the size of the center. Queries
/// compare against their matched key, taken from `lr` in kernel-free mode
/// and from `reference` in cross-resolution mode; copied center positions
/// compare against the reference patch they receive. Flat keys give 0.
pub fn contrast_ratios(lr: &Image, index_map: &IndexMap, reference: &Image) -> Result<Vec<f64>> {
    let (w, h) = (index_map.width(), index_map.height());
    if lr.size() != (w, h) {
        return Err(Error::SizeMismatch(format!(
            "{}x{} LR for a {w}x{h} index map",
            lr.width(),
            lr.height()
        )));
    }
    let center = index_map.center();
    if reference.size() != (center.width(), center.height()) {
        return Err(Error::SizeMismatch(format!(
            "{}x{} reference for the center {center}",
            reference.width(),
            reference.height()
        )));
    }
    let luma = lr.to_luma();
    let ref_luma = reference.to_luma();
    let cross = index_map.mode() == MatchMode::CrossResolution;
    Ok((0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (mx, my) = index_map.get(x, y);
            let sk = if cross || !index_map.is_query(x, y) {
                patch_std(&ref_luma, mx - center.x0, my - center.y0)
            } else {
                patch_std(&luma, mx, my)
            };
            if sk > 0.0 {
                (patch_std(&luma, x, y) / sk).min(1.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Transfers the high-frequency part of `ref_aligned` through the index
/// map, each query's patch scaled by its entry of `ratios`.
///
/// The high-pass is taken before warping, so seams between overlapping
/// patches never turn into spurious detail. `corners = false` leaves the
/// positions outside the center untouched.
pub fn transfer_detail(
    ref_aligned: &Image,
    index_map: &IndexMap,
    center: CenterRect,
    ratios: &[f64],
    corners: bool,
) -> Result<WarpedRef> {
    let detail = high_frequency(ref_aligned, SCALE)?;
    warp_patches(&detail, index_map, center, SCALE, corners, Some(ratios))
}

/// `lr_up + strength · g(C) · detail`, with `C` upsampled nearest ×2 and
/// the gate forced to 0 where `detail` has no coverage. Pixels with a zero
/// gate are copied from `lr_up` unchanged.
pub fn add_detail(lr_up: &Image, detail: &WarpedRef, confidence: &ConfidenceMap, gate: &GateParams) -> Result<Image> {
    gate.validate()?;
    if !lr_up.same_shape(&detail.image) {
        return Err(Error::SizeMismatch(format!(
            "upsampled LR {}x{}x{} against transfer {}x{}x{}",
            lr_up.width(),
            lr_up.height(),
            lr_up.channels(),
            detail.image.width(),
            detail.image.height(),
            detail.image.channels()
        )));
    }
    let (w, h) = lr_up.size();
    if (SCALE * confidence.width(), SCALE * confidence.height()) != (w, h) {
        return Err(Error::SizeMismatch(format!(
            "{}x{} confidence for a {w}x{h} output",
            confidence.width(),
            confidence.height()
        )));
    }
    let weights: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if detail.coverage[i] == 0 {
                0.0
            } else {
                gate.strength * gate.gate(confidence.get(i % w / SCALE, i / w / SCALE))
            }
        })
        .collect();
    let planes = lr_up
        .planes()
        .iter()
        .zip(detail.image.planes())
        .map(|(base, d)| {
            weights
                .par_iter()
                .enumerate()
                .map(|(i, &g)| {
                    if g == 0.0 {
                        base[i]
                    } else {
                        (base[i] as f64 + g * d[i] as f64) as f32
                    }
                })
                .collect()
        })
        .collect();
    Image::from_planes(w, h, planes)
}

/// Per-channel least-squares gains `k = Σ(r·l) / Σ(r²)` mapping the
/// reference, box-downsampled to `lr_center`'s size, onto `lr_center`.
///
/// Returns the reference scaled by the gains, and the gains. A channel
/// with zero energy keeps gain 1.
pub fn color_correct_ref(reference: &Image, lr_center: &Image) -> Result<(Image, Vec<f64>)> {
    if reference.channels() != lr_center.channels() {
        return Err(Error::SizeMismatch(format!(
            "{}-channel reference against {}-channel LR",
            reference.channels(),
            lr_center.channels()
        )));
    }
    if reference.size() != (2 * lr_center.width(), 2 * lr_center.height()) {
        return Err(Error::SizeMismatch(format!(
            "reference {}x{} is not twice the LR center {}x{}",
            reference.width(),
            reference.height(),
            lr_center.width(),
            lr_center.height()
        )));
    }
    let small = resample(reference, 0.5, ResampleMethod::BoxDown)?;
    let gains: Vec<f64> = (0..reference.channels())
        .map(|c| {
            let (num, den) = small
                .plane(c)
                .iter()
                .zip(lr_center.plane(c))
                .fold((0.0, 0.0), |(n, d), (&r, &l)| (n + r as f64 * l as f64, d + r as f64 * r as f64));
            if den > 0.0 {
                num / den
            } else {
                1.0
            }
        })
        .collect();
    Ok((reference.scale_channels(&gains)?, gains))
}

/// Scalar gate on the match confidence:
/// `g(C) = clamp((C - floor) / (1 - floor), 0, 1)^exponent`, scaled by
/// `strength` at fusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateParams {
    pub floor: f64,
    pub exponent: f64,
    pub strength: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            floor: 0.5,
            exponent: 1.0,
            strength: 1.0,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.floor)
            && self.exponent > 0.0
            && self.exponent.is_finite()
            && (0.0..=1.0).contains(&self.strength);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "gate needs floor in [0, 1), exponent > 0, strength in [0, 1]; got {self:?}"
            )))
        }
    }

    #[inline]
    pub fn gate(&self, confidence: f64) -> f64 {
        ((confidence - self.floor) / (1.0 - self.floor)).clamp(0.0, 1.0).powf(self.exponent)
    }
}

/// `lr_up + strength · g(C) · HF(warped)`, with `C` upsampled nearest ×2.
///
/// The gate is forced to 0 where nothing was transferred, and pixels with
/// a zero gate are copied from `lr_up` unchanged. Uncovered pixels take
/// `lr_up` values before the high-pass so that holes do not ring into
/// their covered neighbors.
pub fn fuse(lr_up: &Image, warped: &WarpedRef, confidence: &ConfidenceMap, gate: &GateParams) -> Result<Image> {
    if !lr_up.same_shape(&warped.image) || warped.coverage.len() != lr_up.width() * lr_up.height() {
        return Err(Error::SizeMismatch(format!(
            "upsampled LR {}x{}x{} against transfer {}x{}x{}",
            lr_up.width(),
            lr_up.height(),
            lr_up.channels(),
            warped.image.width(),
            warped.image.height(),
            warped.image.channels()
        )));
    }
    let w = lr_up.width();
    let filled = Image::from_fn(w, lr_up.height(), lr_up.channels(), |c, x, y| {
        if warped.coverage[y * w + x] == 0 {
            lr_up.get(c, x, y)
        } else {
            warped.image.get(c, x, y)
        }
    })?;
    let detail = WarpedRef {
        image: high_frequency(&filled, SCALE)?,
        coverage: warped.coverage.clone(),
    };
    add_detail(lr_up, &detail, confidence, gate)
}
