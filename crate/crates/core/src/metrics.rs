//! PSNR, SSIM and the full / center / corner region split.
//!
//! PSNR is computed on all channels of `[0, 1]` images; SSIM on luma
//! with an 11×11 Gaussian window (σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic
//! range 1).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CenterRect;
use crate::image::{gaussian_kernel, Image};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::SizeMismatch(format!(
            "{}x{}x{} against {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// `10 log10(1 / mse)`; infinite for a zero error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Squared error summed over all channels of the pixels selected by
/// `mask`, and the number of samples.
fn squared_error(a: &Image, b: &Image, mask: impl Fn(usize, usize) -> bool + Sync) -> (f64, usize) {
    let w = a.width();
    a.planes()
        .iter()
        .zip(b.planes())
        .map(|(pa, pb)| {
            let mut sum = 0.0;
            let mut n = 0;
            for (i, (&x, &y)) in pa.iter().zip(pb).enumerate() {
                if mask(i % w, i / w) {
                    sum += (x as f64 - y as f64).powi(2);
                    n += 1;
                }
            }
            (sum, n)
        })
        .fold((0.0, 0), |acc, (s, n)| (acc.0 + s, acc.1 + n))
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (sum, n) = squared_error(a, b, |_, _| true);
    Ok(sum / n as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Local SSIM at every window position lying fully inside the image;
/// entry `(x, y)` belongs to the window with top-left corner `(x, y)`.
fn ssim_map(a: &Image, b: &Image) -> Result<(usize, usize, Vec<f64>)> {
    check_same(a, b)?;
    let (w, h) = a.size();
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let x: Vec<f64> = a.to_luma().plane(0).iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.to_luma().plane(0).iter().map(|&v| v as f64).collect();
    let kernel = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    // Valid-mode separable filtering of one derived plane.
    let filter = |f: &(dyn Fn(usize) -> f64 + Sync)| -> Vec<f64> {
        let rows: Vec<f64> = (0..h * ow)
            .into_par_iter()
            .map(|i| {
                let (ox, yy) = (i % ow, i / ow);
                kernel.iter().enumerate().map(|(k, wt)| wt * f(yy * w + ox + k)).sum()
            })
            .collect();
        (0..ow * oh)
            .into_par_iter()
            .map(|i| {
                let (ox, oy) = (i % ow, i / ow);
                kernel.iter().enumerate().map(|(k, wt)| wt * rows[(oy + k) * ow + ox]).sum()
            })
            .collect()
    };
    let mx = filter(&|i| x[i]);
    let my = filter(&|i| y[i]);
    let sxx = filter(&|i| x[i] * x[i]);
    let syy = filter(&|i| y[i] * y[i]);
    let sxy = filter(&|i| x[i] * y[i]);
    let map = (0..ow * oh)
        .into_par_iter()
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .collect();
    Ok((ow, oh, map))
}

/// Mean SSIM over the windows whose every pixel satisfies `inside`;
/// `None` if no window qualifies.
fn masked_ssim(map: &(usize, usize, Vec<f64>), inside: impl Fn(usize, usize, usize, usize) -> bool) -> Option<f64> {
    let (ow, oh, values) = map;
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..*oh {
        for x in 0..*ow {
            if inside(x, y, x + SSIM_WINDOW, y + SSIM_WINDOW) {
                sum += values[y * ow + x];
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean structural similarity of the luma planes.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(masked_ssim(&map, |_, _, _, _| true).expect("at least one window"))
}

/// PSNR serializes as a number, or the string `"inf"` for a zero error.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    /// `None` when no SSIM window fits inside the region.
    pub ssim: Option<f64>,
    pub mse: f64,
    /// Samples (pixels × channels) in the region.
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub full: RegionScore,
    pub center: RegionScore,
    pub corner: RegionScore,
}

impl RegionReport {
    pub fn csv_header() -> &'static str {
        "full_psnr,full_ssim,center_psnr,center_ssim,corner_psnr,corner_ssim"
    }

    pub fn csv_row(&self) -> String {
        let f = |s: &RegionScore| {
            let ssim = s.ssim.map(|v| v.to_string()).unwrap_or_default();
            format!("{},{ssim}", s.psnr)
        };
        format!("{},{},{}", f(&self.full), f(&self.center), f(&self.corner))
    }
}

/// Scores `sr` against `hr` on the whole frame, on `center` (given in LR
/// coordinates) scaled ×2, and on its complement.
///
/// Region SSIM averages only the windows lying entirely inside the region.
pub fn region_report(sr: &Image, hr: &Image, center: CenterRect) -> Result<RegionReport> {
    check_same(sr, hr)?;
    let (w, h) = sr.size();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::SizeMismatch(format!("{w}x{h} is not an LR frame ×2")));
    }
    center.validate(w / 2, h / 2)?;
    let c = center.scaled(2);
    let map = ssim_map(sr, hr)?;
    let score = |mask: &(dyn Fn(usize, usize) -> bool + Sync), ssim: Option<f64>| {
        let (sum, n) = squared_error(sr, hr, mask);
        let mse = if n > 0 { sum / n as f64 } else { 0.0 };
        RegionScore {
            psnr: psnr_from_mse(mse),
            ssim,
            mse,
            samples: n,
        }
    };
    let disjoint = |x0: usize, y0: usize, x1: usize, y1: usize| x1 <= c.x0 || x0 >= c.x1 || y1 <= c.y0 || y0 >= c.y1;
    Ok(RegionReport {
        full: score(&|_, _| true, masked_ssim(&map, |_, _, _, _| true)),
        center: score(
            &|x, y| c.contains(x, y),
            masked_ssim(&map, |x0, y0, x1, y1| x0 >= c.x0 && y0 >= c.y0 && x1 <= c.x1 && y1 <= c.y1),
        ),
        corner: score(&|x, y| !c.contains(x, y), masked_ssim(&map, disjoint)),
    })
}
