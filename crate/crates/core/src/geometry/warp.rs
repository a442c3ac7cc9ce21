use rayon::prelude::*;

use super::Homography;
use crate::error::Result;
use crate::image::{sample_bicubic, Image};

/// Inverse-warps `image` by `h` (which maps source to output coordinates)
/// into an `out_width x out_height` canvas.
///
/// Samples are bicubic; positions outside the source take replicated edge
/// values.
pub fn warp_homography(image: &Image, h: &Homography, out_width: usize, out_height: usize) -> Result<Image> {
    let inv = h.inverse()?;
    let (w, hgt) = image.size();
    let coords: Vec<(f64, f64)> = (0..out_width * out_height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % out_width) as f64, (i / out_width) as f64);
            let (sx, sy) = inv.apply(x, y);
            if sx.is_finite() && sy.is_finite() && inv.depth(x, y) > 0.0 {
                (sx, sy)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let planes = image
        .planes()
        .iter()
        .map(|p| {
            coords
                .par_iter()
                .map(|&(sx, sy)| sample_bicubic(p, w, hgt, sx, sy) as f32)
                .collect()
        })
        .collect();
    Image::from_planes(out_width, out_height, planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 2 + 1, |c, x, y| (x as f32 * 0.03 + y as f32 * 0.07 + c as f32 * 0.1).fract())
            .unwrap()
    }

    #[test]
    fn identity_is_exact_crop_or_pad() {
        let img = ramp(20, 14);
        let out = warp_homography(&img, &Homography::identity(), 20, 14).unwrap();
        assert_eq!(out, img);
        let smaller = warp_homography(&img, &Homography::identity(), 11, 9).unwrap();
        assert_eq!(smaller, img.crop(0, 0, 11, 9).unwrap());
        let larger = warp_homography(&img, &Homography::identity(), 24, 16).unwrap();
        assert_eq!(larger, img.pad_replicate(24, 16));
    }

    #[test]
    fn integer_translation_shifts_content() {
        let img = Image::from_fn(30, 20, 1, |_, x, y| x as f32 * 0.02 + y as f32 * 0.01).unwrap();
        let out = warp_homography(&img, &Homography::translation(7.0, 2.0), 30, 20).unwrap();
        for y in 2..20 {
            for x in 7..30 {
                assert!((out.get(0, x, y) - img.get(0, x - 7, y - 2)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(16, 12, 3, 0.62).unwrap();
        let h = Homography::from_row_major([0.8, 0.2, 3.0, -0.1, 1.3, -4.0, 1e-3, 2e-3, 1.0]).unwrap();
        let out = warp_homography(&img, &h, 25, 19).unwrap();
        assert!(out.planes().iter().flatten().all(|&v| v == 0.62));
    }
}
