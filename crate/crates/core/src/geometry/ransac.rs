use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Correspondence, Homography};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold_px: 3.0,
            seed: 0,
        }
    }
}

/// Similarity transform moving the centroid to the origin with mean
/// distance sqrt(2).
fn normalizer(points: impl Iterator<Item = (f64, f64)> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

#[inline]
fn transform(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)])
}

/// Normalized DLT; least squares when more than four pairs are given.
pub fn fit_homography(corrs: &[Correspondence]) -> Result<Homography> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientCorrespondences {
            found: corrs.len(),
            needed: 4,
        });
    }
    let ts = normalizer(corrs.iter().map(|c| c.src));
    let td = normalizer(corrs.iter().map(|c| c.dst));
    let rows = (2 * corrs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let (x, y) = transform(&ts, c.src);
        let (u, v) = transform(&td, c.dst);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::SingularHomography)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::SingularHomography)?;
    Homography::from_matrix(&(td_inv * hn * ts))
}

#[inline]
fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    if h.depth(c.src.0, c.src.1) <= 0.0 {
        return f64::INFINITY;
    }
    let (x, y) = h.apply(c.src.0, c.src.1);
    ((x - c.dst.0).powi(2) + (y - c.dst.1).powi(2)).sqrt()
}

fn twice_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs()
}

fn degenerate(points: &[(f64, f64); 4]) -> bool {
    const MIN_AREA: f64 = 1e-6;
    (0..4).any(|skip| {
        let t: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| points[i]).collect();
        twice_area(t[0], t[1], t[2]) < MIN_AREA
    })
}

/// Scores a model: inlier count and summed inlier error.
fn score(h: &Homography, corrs: &[Correspondence], threshold: f64) -> (usize, f64) {
    corrs.iter().fold((0, 0.0), |(n, e), c| {
        let err = reprojection_error(h, c);
        if err < threshold {
            (n + 1, e + err)
        } else {
            (n, e)
        }
    })
}

/// Robust homography from `src -> dst` pairs.
///
/// Returns the model refit on its final inlier set together with the inlier
/// mask. The result depends only on the inputs, their order and the seed.
pub fn estimate_homography_ransac(
    corrs: &[Correspondence],
    params: &RansacParams,
) -> Result<(Homography, Vec<bool>)> {
    if corrs.len() < 4 {
        return Err(Error::InsufficientCorrespondences {
            found: corrs.len(),
            needed: 4,
        });
    }
    let threshold = params.inlier_threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Homography, usize, f64)> = None;
    for _ in 0..params.iterations.max(1) {
        let idx = sample(&mut rng, corrs.len(), 4);
        let pick: Vec<Correspondence> = idx.iter().map(|i| corrs[i]).collect();
        let src = [pick[0].src, pick[1].src, pick[2].src, pick[3].src];
        let dst = [pick[0].dst, pick[1].dst, pick[2].dst, pick[3].dst];
        if degenerate(&src) || degenerate(&dst) {
            continue;
        }
        let Ok(h) = fit_homography(&pick) else { continue };
        let (n, err) = score(&h, corrs, threshold);
        let better = match &best {
            None => true,
            Some((_, bn, be)) => n > *bn || (n == *bn && err < *be),
        };
        if better {
            best = Some((h, n, err));
        }
    }
    let Some((mut model, count, _)) = best else {
        return Err(Error::NoConsensus { min_inliers: 4 });
    };
    if count < 4 {
        return Err(Error::NoConsensus { min_inliers: 4 });
    }

    let mut mask: Vec<bool> = corrs.iter().map(|c| reprojection_error(&model, c) < threshold).collect();
    for _ in 0..5 {
        let inliers: Vec<Correspondence> = corrs
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect();
        let refit = fit_homography(&inliers)?;
        let next: Vec<bool> = corrs.iter().map(|c| reprojection_error(&refit, c) < threshold).collect();
        if next.iter().filter(|&&m| m).count() < 4 {
            break;
        }
        model = refit;
        if next == mask {
            break;
        }
        mask = next;
    }
    let mask: Vec<bool> = corrs.iter().map(|c| reprojection_error(&model, c) < threshold).collect();
    if mask.iter().filter(|&&m| m).count() < 4 {
        return Err(Error::NoConsensus { min_inliers: 4 });
    }
    Ok((model, mask))
}
