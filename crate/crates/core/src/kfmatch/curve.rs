//! Hit rate of corner queries against center keys under raw-patch MSE
//! matching, evaluated on the HR patches at the matched positions.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quantize;
use super::search::{resolve, search_block, KeySet};
use crate::error::{Error, Result};
use crate::geometry::CenterRect;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveVariant {
    /// Match on the 3×3 LR patches, score on the 6×6 HR patches.
    LrMatchHrEval,
    /// Match and score on the 6×6 HR patches.
    HrMatchHrEval,
}

impl CurveVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveVariant::LrMatchHrEval => "lr_match_hr_eval",
            CurveVariant::HrMatchHrEval => "hr_match_hr_eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingCurve {
    pub variant: CurveVariant,
    pub thresholds: Vec<f64>,
    pub hit_rates: Vec<f64>,
}

impl MatchingCurve {
    /// Builds the curve from per-query error rates.
    pub fn from_error_rates(variant: CurveVariant, thresholds: &[f64], errors: &[f64]) -> Result<Self> {
        check_thresholds(thresholds)?;
        let n = errors.len().max(1) as f64;
        let hit_rates = thresholds
            .iter()
            .map(|&t| errors.iter().filter(|&&e| e < t).count() as f64 / n)
            .collect();
        Ok(Self {
            variant,
            thresholds: thresholds.to_vec(),
            hit_rates,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,hit_rate\n");
        for (t, h) in self.thresholds.iter().zip(&self.hit_rates) {
            s.push_str(&format!("{t},{h}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(self.to_csv().as_bytes())
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("no thresholds".into()));
    }
    if thresholds.iter().any(|t| t.is_nan()) || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("thresholds must be ascending".into()));
    }
    Ok(())
}

/// Quantized luma with replicated borders.
struct Grid {
    w: usize,
    h: usize,
    q: Vec<i32>,
}

impl Grid {
    fn new(img: &Image) -> Self {
        let luma = img.to_luma();
        Self {
            w: luma.width(),
            h: luma.height(),
            q: luma.plane(0).iter().map(|&v| quantize(v)).collect(),
        }
    }

    /// `side×side` block with top-left corner `(x0, y0)`; `D = side²`.
    fn block<const D: usize>(&self, x0: isize, y0: isize, side: usize) -> [i32; D] {
        debug_assert_eq!(side * side, D);
        std::array::from_fn(|t| {
            let x = (x0 + (t % side) as isize).clamp(0, self.w as isize - 1) as usize;
            let y = (y0 + (t / side) as isize).clamp(0, self.h as isize - 1) as usize;
            self.q[y * self.w + x]
        })
    }
}

fn ssd<const D: usize>(a: &[i32; D], b: &[i32; D]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| (x as i64 - y as i64).pow(2)).sum()
}

/// Index of the key with the smallest SSD for every query; ties go to the
/// lowest index.
fn nearest_keys<const D: usize>(queries: &[[i32; D]], keys: &[[i32; D]]) -> Vec<usize> {
    const BLOCK: usize = 16;
    let unit = 1.0 / super::QUANT_SCALE;
    let scaled = |v: &[i32; D]| -> [f32; D] { std::array::from_fn(|t| (v[t] as f64 * unit) as f32) };
    let key_vecs: Vec<[f32; D]> = keys.iter().map(scaled).collect();
    // Maximizing 2 q·k - |k|² minimizes |q - k|².
    let offset = keys
        .iter()
        .map(|k| -(k.iter().map(|&v| (v as f64 * unit).powi(2)).sum::<f64>()) as f32)
        .collect();
    let key_set = KeySet::new(&key_vecs, Some(offset));
    let tolerance = D as f32 * 3e-5;
    let starts: Vec<usize> = (0..queries.len()).step_by(BLOCK).collect();
    starts
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(scratch, cands), &start| {
                let end = (start + BLOCK).min(queries.len());
                let qv: Vec<[f32; D]> = queries[start..end]
                    .iter()
                    .map(|q| std::array::from_fn(|t| (2.0 * q[t] as f64 * unit) as f32))
                    .collect();
                search_block(&key_set, &qv, tolerance, scratch, cands);
                (start..end)
                    .zip(cands.iter())
                    .map(|(qi, c)| {
                        resolve(c.indices(tolerance), |k| -(ssd(&queries[qi], &keys[k]) as f64))
                            .expect("at least one key")
                            .0
                    })
                    .collect::<Vec<_>>()
            },
        )
        .flatten()
        .collect()
}

/// Relative error `|q - k| / |q|` of every corner query under `variant`,
/// in row-major query order.
///
/// Queries are the LR positions outside `center`, keys the 3×3 patches
/// fully inside it. LR position `(x, y)` corresponds to the 6×6 HR block
/// with top-left corner `(2x - 2, 2y - 2)`.
pub fn match_error_rates(lr: &Image, hr: &Image, center: CenterRect, variant: CurveVariant) -> Result<Vec<f64>> {
    let (w, h) = lr.size();
    if hr.size() != (2 * w, 2 * h) {
        return Err(Error::SizeMismatch(format!(
            "HR is {}x{}, expected {}x{}",
            hr.width(),
            hr.height(),
            2 * w,
            2 * h
        )));
    }
    center.validate(w, h)?;
    if center.width() < 3 || center.height() < 3 {
        return Err(Error::DegenerateCenter(format!("{center} cannot hold a 3x3 key patch")));
    }
    let lr_grid = Grid::new(lr);
    let hr_grid = Grid::new(hr);
    let queries: Vec<(isize, isize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !center.contains(x, y))
        .map(|(x, y)| (x as isize, y as isize))
        .collect();
    let keys: Vec<(isize, isize)> = (center.y0 + 1..center.y1 - 1)
        .flat_map(|y| (center.x0 + 1..center.x1 - 1).map(move |x| (x as isize, y as isize)))
        .collect();
    let hr_block = |&(x, y): &(isize, isize)| hr_grid.block::<36>(2 * x - 2, 2 * y - 2, 6);
    let hr_queries: Vec<[i32; 36]> = queries.iter().map(hr_block).collect();
    let hr_keys: Vec<[i32; 36]> = keys.iter().map(hr_block).collect();
    let best = match variant {
        CurveVariant::LrMatchHrEval => {
            let lr_block = |&(x, y): &(isize, isize)| lr_grid.block::<9>(x - 1, y - 1, 3);
            let q: Vec<[i32; 9]> = queries.iter().map(lr_block).collect();
            let k: Vec<[i32; 9]> = keys.iter().map(lr_block).collect();
            nearest_keys(&q, &k)
        }
        CurveVariant::HrMatchHrEval => nearest_keys(&hr_queries, &hr_keys),
    };
    Ok(hr_queries
        .iter()
        .zip(best)
        .map(|(q, k)| {
            let err = ssd(q, &hr_keys[k]);
            let norm: i64 = q.iter().map(|&v| v as i64 * v as i64).sum();
            match (err, norm) {
                (0, _) => 0.0,
                (_, 0) => f64::INFINITY,
                _ => (err as f64).sqrt() / (norm as f64).sqrt(),
            }
        })
        .collect())
}

/// Fraction of corner queries whose HR error rate is below each threshold.
pub fn matching_curve(
    lr: &Image,
    hr: &Image,
    center: CenterRect,
    thresholds: &[f64],
    variant: CurveVariant,
) -> Result<MatchingCurve> {
    check_thresholds(thresholds)?;
    let errors = match_error_rates(lr, hr, center, variant)?;
    if errors.is_empty() {
        return Err(Error::DegenerateCenter(format!("{center} leaves no corner queries")));
    }
    MatchingCurve::from_error_rates(variant, thresholds, &errors)
}
