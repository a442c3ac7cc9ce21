//! Building aligned (LR, Ref, HR) triples from raw wide-angle / telephoto
//! captures.
//!
//! The telephoto frame is registered to the wide frame coarse-to-fine
//! (keypoint homography, then dense flow at the high-quality preset),
//! color-matched with per-channel gains and cropped to the overlap: the
//! wide crop is the LR image, the warped telephoto over it the HR image,
//! and the unwarped telephoto around the LR center the reference.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, warp_with_flow, FlowParams};
use crate::geometry::{center_rect_from_homography, warp_homography, CenterRect, Homography, RansacParams};
use crate::image::{resample, save_image, Image, ResampleMethod};
use crate::transfer::{align_reference, color_correct_ref, SrConfig};

/// Triples whose quality score exceeds this are flagged for review.
pub const DEFAULT_REJECT_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    pub flow: FlowParams,
    pub ransac: RansacParams,
    pub max_keypoints: usize,
    pub match_ratio: f64,
    pub reject_threshold: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            flow: FlowParams::high_quality(),
            ransac: RansacParams::default(),
            max_keypoints: 2000,
            match_ratio: 0.8,
            reject_threshold: DEFAULT_REJECT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Map from the half-resolution telephoto grid to wide pixels; the
    /// identity when the telephoto is the wide frame at twice the scale.
    pub homography: Homography,
    /// Region of the wide frame kept as LR.
    pub overlap: CenterRect,
    /// Per-channel gains applied to the telephoto content.
    pub gains: Vec<f64>,
    pub quality: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub lr: Image,
    pub reference: Image,
    pub hr: Image,
    /// Reference footprint in LR coordinates.
    pub center: CenterRect,
    pub provenance: Provenance,
}

/// Everything in `meta.json` of a stored triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleMeta {
    pub center: CenterRect,
    pub lr_size: (usize, usize),
    #[serde(flatten)]
    pub provenance: Provenance,
}

fn half(img: &Image) -> Result<Image> {
    resample(img, 0.5, ResampleMethod::BoxDown)
}

/// Median absolute luma difference between `hr` box-downsampled ×2 and
/// `lr`; 0 for a perfectly consistent pair.
pub fn pair_quality(lr: &Image, hr: &Image) -> Result<f64> {
    if hr.size() != (2 * lr.width(), 2 * lr.height()) {
        return Err(Error::SizeMismatch(format!(
            "HR {}x{} for LR {}x{}",
            hr.width(),
            hr.height(),
            lr.width(),
            lr.height()
        )));
    }
    let a = half(hr)?.to_luma();
    let b = lr.to_luma();
    let mut diffs: Vec<f32> = a.plane(0).iter().zip(b.plane(0)).map(|(x, y)| (x - y).abs()).collect();
    let mid = diffs.len() / 2;
    let (_, m, _) = diffs.select_nth_unstable_by(mid, f32::total_cmp);
    Ok(*m as f64)
}

/// Alignment score of a triple: see [`pair_quality`].
pub fn alignment_quality(triple: &Triple) -> Result<f64> {
    pair_quality(&triple.lr, &triple.hr)
}

/// Registers `tele` (about twice the focal length, field of view nested in
/// `wide`'s) to `wide` and crops the triple.
///
/// A quality score above `params.reject_threshold` flags the triple
/// (`accepted = false`) rather than failing.
pub fn build_triple(wide: &Image, tele: &Image, params: &BuildParams) -> Result<Triple> {
    if wide.channels() != tele.channels() {
        return Err(Error::SizeMismatch(format!(
            "{}-channel wide frame with a {}-channel telephoto frame",
            wide.channels(),
            tele.channels()
        )));
    }
    let config = SrConfig {
        ransac: params.ransac,
        max_keypoints: params.max_keypoints,
        match_ratio: params.match_ratio,
        ..SrConfig::default()
    };
    // Telephoto pixels to wide pixels.
    let (to_wide, _) = align_reference(tele, wide, &config)?;
    let homography = to_wide.compose(&Homography::scale_translation(2.0, 0.5, 0.5))?;
    let overlap = center_rect_from_homography(&to_wide, tele.size(), wide.size())?;
    let lr = wide.crop(overlap.x0, overlap.y0, overlap.width(), overlap.height())?;

    let to_hr = Homography::scale_translation(2.0, 0.5 - 2.0 * overlap.x0 as f64, 0.5 - 2.0 * overlap.y0 as f64);
    let (hw, hh) = (2 * lr.width(), 2 * lr.height());
    let coarse = warp_homography(tele, &to_hr.compose(&to_wide)?, hw, hh)?;
    let (coarse, first) = color_correct_ref(&coarse, &lr)?;
    let flow_params = params.flow.fit_to(lr.width(), lr.height());
    let flow = estimate_flow(&half(&coarse)?.to_luma(), &lr.to_luma(), &flow_params)?;
    let fine = warp_with_flow(&coarse, &flow, 2)?;
    let (hr, second) = color_correct_ref(&fine, &lr)?;
    let gains: Vec<f64> = first.iter().zip(&second).map(|(a, b)| a * b).collect();

    // The reference is the unwarped telephoto around the LR center.
    let center = CenterRect::centered(lr.width(), lr.height(), 2)?;
    let (rw, rh) = (2 * center.width(), 2 * center.height());
    if rw > tele.width() || rh > tele.height() {
        return Err(Error::OverlapTooSmall(format!(
            "{}x{} telephoto frame cannot hold a {rw}x{rh} reference",
            tele.width(),
            tele.height()
        )));
    }
    let mid = (
        (overlap.x0 + center.x0) as f64 + center.width() as f64 / 2.0 - 0.5,
        (overlap.y0 + center.y0) as f64 + center.height() as f64 / 2.0 - 0.5,
    );
    let (tx, ty) = to_wide.inverse()?.apply(mid.0, mid.1);
    let clamp = |v: f64, side: usize, max: usize| ((v + 0.5 - side as f64 / 2.0).round().max(0.0) as usize).min(max - side);
    let reference = tele
        .crop(clamp(tx, rw, tele.width()), clamp(ty, rh, tele.height()), rw, rh)?
        .scale_channels(&gains)?;

    let quality = pair_quality(&lr, &hr)?;
    Ok(Triple {
        lr,
        reference,
        hr,
        center,
        provenance: Provenance {
            homography,
            overlap,
            gains,
            quality,
            accepted: quality <= params.reject_threshold,
        },
    })
}

/// Writes `lr.png`, `ref.png`, `hr.png` and `meta.json` into `dir`.
pub fn save_triple(triple: &Triple, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    save_image(&triple.lr, dir.join("lr.png"))?;
    save_image(&triple.reference, dir.join("ref.png"))?;
    save_image(&triple.hr, dir.join("hr.png"))?;
    let meta = TripleMeta {
        center: triple.center,
        lr_size: triple.lr.size(),
        provenance: triple.provenance.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    let path = dir.join("meta.json");
    fs::write(&path, text + "\n").map_err(io(&path))
}
