//! Synthetic test material built from a single sharp image: aligned
//! (LR, Ref, HR) triples and raw (wide, tele) capture pairs with known
//! geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CenterRect;
use crate::image::{gaussian_blur, resample, sample_bicubic, Image, ResampleMethod};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOptions {
    /// Gaussian blur applied to the reference, standing in for the optical
    /// gap between the two cameras; 0 disables it.
    pub ref_blur_sigma: f64,
    /// Peak amplitude, in HR pixels, of a smooth displacement applied to
    /// the reference so that it needs local alignment; 0 disables it.
    pub deformation: f64,
    /// Wavelength of the displacement, in HR pixels.
    pub deformation_period: f64,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            ref_blur_sigma: 0.0,
            deformation: 0.0,
            deformation_period: 96.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTriple {
    pub lr: Image,
    pub reference: Image,
    pub hr: Image,
    /// LR coordinates; the reference is the HR crop of this rectangle ×2.
    pub center: CenterRect,
}

/// Smooth displacement field `(dx, dy)` with random phases.
struct Deformation {
    amplitude: f64,
    k: f64,
    phases: [f64; 4],
}

impl Deformation {
    fn new(amplitude: f64, period: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            amplitude,
            k: std::f64::consts::TAU / period,
            phases: std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU)),
        }
    }

    fn at(&self, x: f64, y: f64) -> (f64, f64) {
        let p = &self.phases;
        let a = self.amplitude / 2.0;
        (
            a * ((self.k * x + p[0]).sin() + (self.k * y + p[1]).sin()),
            a * ((self.k * (x + y) * 0.7 + p[2]).cos() + (self.k * y * 1.3 + p[3]).sin()),
        )
    }
}

/// Triple from a sharp `hr` image: LR = HR box-downsampled ×2, Ref = the
/// HR crop of the centered half-size rectangle.
///
/// `hr` is trimmed to even dimensions first. Deformation samples the
/// whole HR image, so displaced reference pixels near the crop border are
/// still genuine content.
pub fn synthetic_triple(hr: &Image, opts: &SyntheticOptions) -> Result<SyntheticTriple> {
    let (w, h) = (hr.width() & !1, hr.height() & !1);
    if w < 8 || h < 8 {
        return Err(Error::ImageTooSmall(format!("synthetic triple needs 8x8, got {w}x{h}")));
    }
    let hr = hr.crop(0, 0, w, h)?;
    let lr = resample(&hr, 0.5, ResampleMethod::BoxDown)?;
    let center = CenterRect::centered(w / 2, h / 2, 2)?;
    let (x0, y0) = (2 * center.x0, 2 * center.y0);
    let (rw, rh) = (2 * center.width(), 2 * center.height());
    let reference = if opts.deformation > 0.0 {
        let field = Deformation::new(opts.deformation, opts.deformation_period, opts.seed);
        let coords: Vec<(f64, f64)> = (0..rw * rh)
            .map(|i| {
                let (x, y) = ((i % rw) as f64, (i / rw) as f64);
                let (dx, dy) = field.at(x, y);
                ((x0 as f64 + x + dx), (y0 as f64 + y + dy))
            })
            .collect();
        let planes = hr
            .planes()
            .iter()
            .map(|p| coords.par_iter().map(|&(x, y)| sample_bicubic(p, w, h, x, y) as f32).collect())
            .collect();
        Image::from_planes(rw, rh, planes)?
    } else {
        hr.crop(x0, y0, rw, rh)?
    };
    let reference = gaussian_blur(&reference, opts.ref_blur_sigma);
    Ok(SyntheticTriple {
        lr,
        reference,
        hr,
        center,
    })
}

/// A raw capture pair: `wide` is the whole scene at half resolution,
/// shifted by `shift` LR pixels and scaled per channel by `gains`; `tele`
/// is the sharp, unshifted center crop of `scene`.
///
/// Wide pixel `p` shows scene content at LR position `p - shift`.
pub fn synthetic_pair(scene: &Image, shift: (f64, f64), gains: &[f64]) -> Result<(Image, Image)> {
    let (w, h) = (scene.width() & !1, scene.height() & !1);
    let scene = scene.crop(0, 0, w, h)?;
    let small = resample(&scene, 0.5, ResampleMethod::BoxDown)?;
    let (lw, lh) = small.size();
    let planes = small
        .planes()
        .iter()
        .map(|p| {
            (0..lw * lh)
                .into_par_iter()
                .map(|i| {
                    let (x, y) = ((i % lw) as f64 - shift.0, (i / lw) as f64 - shift.1);
                    sample_bicubic(p, lw, lh, x, y) as f32
                })
                .collect()
        })
        .collect();
    let wide = Image::from_planes(lw, lh, planes)?.scale_channels(gains)?;
    let center = CenterRect::centered(lw, lh, 2)?;
    let tele = scene.crop(2 * center.x0, 2 * center.y0, 2 * center.width(), 2 * center.height())?;
    Ok((wide, tele))
}

/// `tele` with the left `fraction` of the frame rotated by 180° in place,
/// as if a subject covering it moved between the two exposures.
pub fn with_moved_subject(tele: &Image, fraction: f64) -> Image {
    let (w, h) = tele.size();
    let split = ((w as f64 * fraction.clamp(0.0, 1.0)) as usize).min(w);
    Image::from_fn(w, h, tele.channels(), |c, x, y| {
        if x < split {
            tele.get(c, split - 1 - x, h - 1 - y)
        } else {
            tele.get(c, x, y)
        }
    })
    .expect("same shape as the input")
}
