use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Keypoint;
use crate::error::{Error, Result};

/// A putative point pair between the reference (`src`) and the frame (`dst`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: (f64, f64),
    pub dst: (f64, f64),
    /// Descriptor cosine similarity in `[-1, 1]`.
    pub score: f64,
}

impl Correspondence {
    pub fn new(src: (f64, f64), dst: (f64, f64)) -> Self {
        Self {
            src,
            dst,
            score: 1.0,
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// For each query, `(best, best distance, second-best distance)`.
fn nearest_two(queries: &[Keypoint], train: &[Keypoint]) -> Vec<(usize, f64, f64)> {
    queries
        .par_iter()
        .map(|q| {
            let mut best = (usize::MAX, f64::INFINITY);
            let mut second = f64::INFINITY;
            for (j, t) in train.iter().enumerate() {
                let d = (2.0 - 2.0 * dot(&q.descriptor, &t.descriptor)).max(0.0).sqrt();
                if d < best.1 {
                    second = best.1;
                    best = (j, d);
                } else if d < second {
                    second = d;
                }
            }
            (best.0, best.1, second)
        })
        .collect()
}

/// Mutual nearest neighbours that also pass the distance-ratio test
/// (`best < ratio * second`). Ties resolve to the lower index.
pub fn match_descriptors(a: &[Keypoint], b: &[Keypoint], ratio: f64) -> Result<Vec<Correspondence>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientCorrespondences {
            found: 0,
            needed: 4,
        });
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!("ratio {ratio} outside (0, 1]")));
    }
    let forward = nearest_two(a, b);
    let backward = nearest_two(b, a);
    Ok(forward
        .iter()
        .enumerate()
        .filter(|&(i, &(j, d1, d2))| backward[j].0 == i && d1 < ratio * d2)
        .map(|(i, &(j, _, _))| Correspondence {
            src: (a[i].x, a[i].y),
            dst: (b[j].x, b[j].y),
            score: dot(&a[i].descriptor, &b[j].descriptor).clamp(-1.0, 1.0),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::detect_keypoints;
    use crate::image::Image;

    fn texture(w: usize, h: usize, dx: f64, dy: f64) -> Image {
        Image::from_fn(w, h, 1, |_, x, y| {
            let (x, y) = (x as f64 - dx, y as f64 - dy);
            let v = (x * 0.21).sin() * (y * 0.13).cos()
                + 0.6 * ((x + 2.0 * y) * 0.07).sin() * ((x - y) * 0.11).cos()
                + 0.3 * ((x * x + y * y).sqrt() * 0.35).sin();
            (v * 0.25 + 0.5) as f32
        })
        .unwrap()
    }

    #[test]
    fn self_match_is_identity() {
        let img = texture(128, 96, 0.0, 0.0);
        let kps = detect_keypoints(&img, 200).unwrap();
        let pairs = match_descriptors(&kps, &kps, 0.8).unwrap();
        assert!(pairs.len() >= kps.len() * 9 / 10);
        for p in &pairs {
            assert_eq!(p.src, p.dst);
            assert!((p.score - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_a_synthetic_shift() {
        let a = detect_keypoints(&texture(160, 128, 0.0, 0.0), 300).unwrap();
        let b = detect_keypoints(&texture(160, 128, 10.0, 4.0), 300).unwrap();
        let pairs = match_descriptors(&a, &b, 0.8).unwrap();
        assert!(pairs.len() >= 10, "only {} pairs", pairs.len());
        let good = pairs
            .iter()
            .filter(|p| ((p.dst.0 - p.src.0 - 10.0).abs() <= 1.0) && ((p.dst.1 - p.src.1 - 4.0).abs() <= 1.0))
            .count();
        assert!(good * 10 >= pairs.len() * 8, "{good}/{}", pairs.len());
    }

    #[test]
    fn empty_side_is_reported() {
        let a = detect_keypoints(&texture(64, 64, 0.0, 0.0), 50).unwrap();
        assert!(matches!(
            match_descriptors(&a, &[], 0.8),
            Err(Error::InsufficientCorrespondences { .. })
        ));
    }
}
