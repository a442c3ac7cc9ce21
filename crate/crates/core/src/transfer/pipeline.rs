use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    add_detail, color_correct_ref, contrast_ratios, fuse, transfer_detail, warp_patches, GateParams, WarpedRef, SCALE,
};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, warp_with_flow, FlowParams};
use crate::geometry::{
    center_rect_from_homography, detect_keypoints, estimate_homography_ransac, match_descriptors, warp_homography,
    CenterRect, Correspondence, Homography, RansacParams,
};
use crate::image::{resample, Image, ResampleMethod};
use crate::kfmatch::{build_match_features, kernel_free_match_with, ConfidenceMap, IndexMap, MatchMode, SearchOptions};

/// What is moved through the index map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// The high-frequency part of the aligned reference, contrast-matched
    /// per patch ([`transfer_detail`](super::transfer_detail) +
    /// [`add_detail`](super::add_detail)).
    #[default]
    Detail,
    /// Reference pixels, high-passed after averaging
    /// ([`corner_warp`](super::corner_warp) + [`fuse`](super::fuse)).
    Image,
}

/// Settings of [`super_resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrConfig {
    /// Upscaling factor; only 2 is supported.
    pub scale: usize,
    pub matching_mode: MatchMode,
    pub gate: GateParams,
    pub flow: FlowParams,
    pub ransac: RansacParams,
    /// Reference-to-LR map used instead of keypoint alignment.
    pub fixed_homography: Option<Homography>,
    /// Refine the global alignment with dense flow.
    pub center_warp: bool,
    /// Transfer reference detail to the positions outside the center.
    pub corner_warp: bool,
    pub transfer: TransferMode,
    pub search: SearchOptions,
    /// Keypoints detected per image for global alignment.
    pub max_keypoints: usize,
    /// Descriptor distance-ratio test threshold.
    pub match_ratio: f64,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            scale: SCALE,
            matching_mode: MatchMode::KernelFree,
            gate: GateParams::default(),
            flow: FlowParams::default(),
            ransac: RansacParams::default(),
            fixed_homography: None,
            center_warp: true,
            corner_warp: true,
            transfer: TransferMode::Detail,
            search: SearchOptions::default(),
            max_keypoints: 1500,
            match_ratio: 0.8,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale != SCALE {
            return Err(Error::InvalidParameter(format!("scale {} is not supported, only 2", self.scale)));
        }
        if !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!("match ratio {} outside (0, 1]", self.match_ratio)));
        }
        self.gate.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub reference_keypoints: usize,
    pub lr_keypoints: usize,
    pub matches: usize,
    pub inliers: usize,
}

/// Everything measured along the way that is worth inspecting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `None` when the homography was given.
    pub alignment: Option<AlignmentStats>,
    pub gains: Vec<f64>,
    pub flow_median_magnitude: f64,
    pub flow_max_abs: f64,
    /// Fraction of HR pixels that received reference detail.
    pub covered_fraction: f64,
    /// Mean match confidence over the query positions.
    pub mean_query_confidence: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub alignment: Duration,
    pub center_warp: Duration,
    pub matching: Duration,
    pub transfer: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug)]
pub struct SrOutput {
    pub sr: Image,
    pub center: CenterRect,
    pub index_map: IndexMap,
    pub confidence: ConfidenceMap,
    /// Per-position contrast ratios; `None` in image transfer mode.
    pub contrast: Option<Vec<f64>>,
    /// Reference-to-LR map.
    pub homography: Homography,
    /// The reference aligned to the center at HR scale.
    pub aligned_reference: Image,
    /// What was fused: the detail layer or the warped reference, per
    /// [`SrConfig::transfer`].
    pub warped: WarpedRef,
    pub diagnostics: Diagnostics,
    pub timings: StageTimings,
}

/// Box-downsampling by 2 after trimming odd edges.
fn half(img: &Image) -> Result<Image> {
    let (w, h) = img.size();
    let even = if w % 2 == 0 && h % 2 == 0 {
        img.clone()
    } else {
        img.crop(0, 0, w & !1, h & !1)?
    };
    resample(&even, 0.5, ResampleMethod::BoxDown)
}

/// Estimates the map from reference pixel coordinates to LR pixel
/// coordinates, by matching corners of the half-resolution reference
/// against the LR frame.
pub fn align_reference(reference: &Image, lr: &Image, config: &SrConfig) -> Result<(Homography, AlignmentStats)> {
    let small = half(reference)?;
    let ref_kp = detect_keypoints(&small, config.max_keypoints)?;
    let lr_kp = detect_keypoints(lr, config.max_keypoints)?;
    let matches: Vec<Correspondence> = match_descriptors(&ref_kp, &lr_kp, config.match_ratio)?;
    let (h_small, mask) = estimate_homography_ransac(&matches, &config.ransac)?;
    // Reference pixel r sits at 0.5 r - 0.25 on the half-resolution grid.
    let h = h_small.compose(&Homography::scale_translation(0.5, -0.25, -0.25))?;
    let stats = AlignmentStats {
        reference_keypoints: ref_kp.len(),
        lr_keypoints: lr_kp.len(),
        matches: matches.len(),
        inliers: mask.iter().filter(|&&m| m).count(),
    };
    Ok((h, stats))
}

/// Converts `image` to `channels` channels (gray <-> RGB).
fn with_channels(image: &Image, channels: usize) -> Image {
    match (image.channels(), channels) {
        (a, b) if a == b => image.clone(),
        (1, _) => image.to_rgb(),
        _ => image.to_luma(),
    }
}

/// Full ×2 reference-based super-resolution of `lr` with the telephoto
/// `reference`.
///
/// Stages: global homography (or the fixed override), center rectangle,
/// projective warp of the reference onto the center at HR scale, color
/// correction, dense-flow refinement, kernel-free matching, patch
/// transfer and gated high-frequency fusion with the bicubic upsampling.
/// Positions without transferred detail or with a zero gate keep the
/// bicubic upsampling bit for bit.
pub fn super_resolve(lr: &Image, reference: &Image, config: &SrConfig) -> Result<SrOutput> {
    config.validate()?;
    let start = Instant::now();
    let mut timings = StageTimings::default();
    let mut diagnostics = Diagnostics::default();
    let reference = with_channels(reference, lr.channels());

    let t = Instant::now();
    let homography = match config.fixed_homography {
        Some(h) => h,
        None => {
            let (h, stats) = align_reference(&reference, lr, config)?;
            diagnostics.alignment = Some(stats);
            h
        }
    };
    let center = center_rect_from_homography(&homography, reference.size(), lr.size())?;
    // LR coordinate l lands on HR coordinate 2 l + 0.5, shifted to the
    // center's origin.
    let to_center = Homography::scale_translation(2.0, 0.5 - 2.0 * center.x0 as f64, 0.5 - 2.0 * center.y0 as f64);
    let (rw, rh) = (2 * center.width(), 2 * center.height());
    let global = warp_homography(&reference, &to_center.compose(&homography)?, rw, rh)?;
    let lr_center = lr.crop(center.x0, center.y0, center.width(), center.height())?;
    let (global, gains) = color_correct_ref(&global, &lr_center)?;
    diagnostics.gains = gains;
    timings.alignment = t.elapsed();

    let t = Instant::now();
    let aligned = if config.center_warp {
        let params = config.flow.fit_to(center.width(), center.height());
        let flow = estimate_flow(&half(&global)?.to_luma(), &lr_center.to_luma(), &params)?;
        diagnostics.flow_median_magnitude = flow.median_magnitude();
        diagnostics.flow_max_abs = flow.max_abs();
        warp_with_flow(&global, &flow, SCALE)?
    } else {
        global
    };
    timings.center_warp = t.elapsed();

    let t = Instant::now();
    let reference_lr = half(&aligned)?;
    let cross_keys = match config.matching_mode {
        MatchMode::CrossResolution => Some(&reference_lr),
        MatchMode::KernelFree => None,
    };
    let (index_map, confidence) = kernel_free_match_with(
        &build_match_features(lr),
        center,
        config.matching_mode,
        cross_keys,
        &config.search,
    )?;
    timings.matching = t.elapsed();

    let t = Instant::now();
    let lr_up = resample(lr, SCALE as f64, ResampleMethod::Bicubic)?;
    let (sr, warped, contrast) = match config.transfer {
        TransferMode::Detail => {
            let ratios = contrast_ratios(lr, &index_map, &reference_lr)?;
            let detail = transfer_detail(&aligned, &index_map, center, &ratios, config.corner_warp)?;
            (add_detail(&lr_up, &detail, &confidence, &config.gate)?, detail, Some(ratios))
        }
        TransferMode::Image => {
            let warped = warp_patches(&aligned, &index_map, center, SCALE, config.corner_warp, None)?;
            (fuse(&lr_up, &warped, &confidence, &config.gate)?, warped, None)
        }
    };
    timings.transfer = t.elapsed();

    let (w, h) = lr.size();
    let (sum, n) = (0..w * h)
        .filter(|&i| index_map.is_query(i % w, i / w))
        .fold((0.0, 0usize), |(s, n), i| (s + confidence.values()[i], n + 1));
    diagnostics.mean_query_confidence = if n > 0 { sum / n as f64 } else { 0.0 };
    diagnostics.covered_fraction = warped.covered_fraction();
    timings.total = start.elapsed();

    Ok(SrOutput {
        sr,
        center,
        index_map,
        confidence,
        contrast,
        homography,
        aligned_reference: aligned,
        warped,
        diagnostics,
        timings,
    })
}
