//! Kernel-free matching: every 3×3 LR patch outside the center rectangle
//! is matched against all 3×3 patches lying fully inside it, by cosine
//! similarity of zero-mean luma vectors.
//!
//! Intensities are quantized to multiples of `1/65280` (a 1/256 step of
//! an 8-bit code) before scoring, so per-patch sums, norms and dot
//! products are exact integers. The similarity of a pair is then a single
//! correctly-rounded division of exact values and does not depend on the
//! evaluation order, the thread count, or the CPU's vector width.

mod curve;
mod search;

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CenterRect;
use crate::image::{resample, Image, ResampleMethod};
use search::{resolve, search_block, search_block_topk, KeySet};

pub use curve::{match_error_rates, matching_curve, CurveVariant, MatchingCurve};

pub const PATCH_SIZE: usize = 3;
pub const STRIDE: usize = 1;

/// Quantization step count for unit intensity.
pub const QUANT_SCALE: f64 = 65280.0;

/// Candidate window of the exact pass; see `search`. The approximate
/// scores of unit vectors are accurate to well below 1e-5.
const COSINE_TOLERANCE: f32 = 1e-5;

/// Queries handed to the vector kernel together.
const QUERY_BLOCK: usize = 16;

#[inline]
pub fn quantize(v: f32) -> i32 {
    (v.clamp(0.0, 1.0) as f64 * QUANT_SCALE).round() as i32
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// LR corners against LR center.
    #[default]
    KernelFree,
    /// Every LR patch against the downsampled, aligned reference.
    CrossResolution,
}

impl MatchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchMode::KernelFree => "kernel_free",
            MatchMode::CrossResolution => "cross_resolution",
        }
    }
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "kernel_free" => Ok(MatchMode::KernelFree),
            "cross_resolution" => Ok(MatchMode::CrossResolution),
            _ => Err(Error::InvalidParameter(format!("unknown matching mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for MatchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Single-channel matching plane derived from the LR input.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchFeatures {
    source: Image,
}

impl MatchFeatures {
    pub fn source(&self) -> &Image {
        &self.source
    }

    pub fn width(&self) -> usize {
        self.source.width()
    }

    pub fn height(&self) -> usize {
        self.source.height()
    }

    pub fn patch_size(&self) -> usize {
        PATCH_SIZE
    }

    pub fn stride(&self) -> usize {
        STRIDE
    }
}

/// Whether `(x, y)` centers a 3×3 patch lying fully inside `center`.
pub fn is_key_center(center: CenterRect, x: usize, y: usize) -> bool {
    x > center.x0 && x + 2 <= center.x1 && y > center.y0 && y + 2 <= center.y1
}

/// Luma plane of `lr`; normalization happens per patch at scoring time.
pub fn build_match_features(lr: &Image) -> MatchFeatures {
    MatchFeatures { source: lr.to_luma() }
}

/// Matched key center for every LR position, in LR coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMap {
    width: usize,
    height: usize,
    center: CenterRect,
    mode: MatchMode,
    mx: Vec<u32>,
    my: Vec<u32>,
}

impl IndexMap {
    /// Builds a map from row-major matched positions.
    ///
    /// Every query position must point at a key center (a 3×3 patch fully
    /// inside `center`); in kernel-free mode center positions must point at
    /// themselves.
    pub fn from_positions(
        width: usize,
        height: usize,
        center: CenterRect,
        mode: MatchMode,
        positions: &[(usize, usize)],
    ) -> Result<Self> {
        center.validate(width, height)?;
        if positions.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "{} positions for a {width}x{height} map",
                positions.len()
            )));
        }
        let mut map = Self {
            width,
            height,
            center,
            mode,
            mx: Vec::with_capacity(positions.len()),
            my: Vec::with_capacity(positions.len()),
        };
        for (i, &(x, y)) in positions.iter().enumerate() {
            let own = (i % width, i / width);
            let valid = if map.is_query(own.0, own.1) {
                is_key_center(center, x, y)
            } else {
                (x, y) == own
            };
            if !valid {
                return Err(Error::IndexOutOfDomain { x, y });
            }
            map.mx.push(x as u32);
            map.my.push(y as u32);
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn center(&self) -> CenterRect {
        self.center
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (usize, usize) {
        let i = y * self.width + x;
        (self.mx[i] as usize, self.my[i] as usize)
    }

    /// Whether `(x, y)` was matched rather than copied from the center.
    #[inline]
    pub fn is_query(&self, x: usize, y: usize) -> bool {
        self.mode == MatchMode::CrossResolution || !self.center.contains(x, y)
    }

    /// Fraction of positions whose match differs from `other`'s.
    pub fn disagreement(&self, other: &IndexMap) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let differ = (0..self.mx.len())
            .filter(|&i| self.mx[i] != other.mx[i] || self.my[i] != other.my[i])
            .count();
        differ as f64 / self.mx.len() as f64
    }

    /// Raw dump: `u32` width and height, then the x and y planes as `u32`,
    /// all little-endian.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        for v in self.mx.iter().chain(&self.my) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    }
}

/// Best similarity for every LR position.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "{} confidence values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("confidence {v} outside [-1, 1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grayscale rendering with -1 as black and 1 as white.
    pub fn to_image(&self) -> Image {
        let data = self.values.iter().map(|&c| ((c + 1.0) * 0.5) as f32).collect();
        Image::from_gray(self.width, self.height, data).expect("non-empty map")
    }

    /// Raw dump: `u32` width and height, then the values as `f64`, all
    /// little-endian.
    pub fn write_raw(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    }
}

/// Search strategy of [`kernel_free_match_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Match at half resolution first, then refine within `refine_radius`.
    pub coarse_to_fine: bool,
    /// Coarse matches kept per query for refinement.
    pub coarse_candidates: usize,
    pub refine_radius: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            coarse_to_fine: false,
            coarse_candidates: 4,
            refine_radius: 2,
        }
    }
}

impl SearchOptions {
    pub fn accelerated() -> Self {
        Self {
            coarse_to_fine: true,
            ..Self::default()
        }
    }
}

/// Exact integer statistics of one 3×3 patch.
#[derive(Clone, Copy, Debug)]
struct Patch {
    v: [i32; 9],
    sum: i64,
    /// `9 Σv² - (Σv)²`, i.e. 81 times the variance.
    n2: i64,
}

impl Patch {
    fn new(v: [i32; 9]) -> Self {
        let sum: i64 = v.iter().map(|&x| x as i64).sum();
        let sq: i64 = v.iter().map(|&x| x as i64 * x as i64).sum();
        Self { v, sum, n2: 9 * sq - sum * sum }
    }

    /// Zero-mean unit vector, or zeros for a flat patch.
    fn unit(&self) -> [f32; 9] {
        if self.n2 == 0 {
            return [0.0; 9];
        }
        let norm = 3.0 * (self.n2 as f64).sqrt();
        std::array::from_fn(|t| ((9 * self.v[t] as i64 - self.sum) as f64 / norm) as f32)
    }
}

/// Zero-mean cosine similarity of two quantized patches; 0 if either is
/// flat.
#[inline]
fn similarity(q: &Patch, k: &Patch) -> f64 {
    if q.n2 == 0 || k.n2 == 0 {
        return 0.0;
    }
    let dot: i64 = q.v.iter().zip(&k.v).map(|(&a, &b)| a as i64 * b as i64).sum();
    let num = 9 * dot - q.sum * k.sum;
    (num as f64 / ((q.n2 as f64) * (k.n2 as f64)).sqrt()).clamp(-1.0, 1.0)
}

/// Quantized plane with replicated borders.
struct Plane {
    w: usize,
    h: usize,
    q: Vec<i32>,
}

impl Plane {
    fn new(img: &Image) -> Self {
        let luma = img.to_luma();
        Self {
            w: luma.width(),
            h: luma.height(),
            q: luma.plane(0).iter().map(|&v| quantize(v)).collect(),
        }
    }

    fn patch(&self, cx: usize, cy: usize) -> Patch {
        let mut v = [0; 9];
        for dy in 0..3 {
            let y = (cy + dy).saturating_sub(1).min(self.h - 1);
            for dx in 0..3 {
                let x = (cx + dx).saturating_sub(1).min(self.w - 1);
                v[dy * 3 + dx] = self.q[y * self.w + x];
            }
        }
        Patch::new(v)
    }
}

/// Key patches centered on `[kx0, kx1] x [ky0, ky1]` (LR coordinates),
/// row-major.
struct Keys {
    kx0: usize,
    ky0: usize,
    nx: usize,
    ny: usize,
    patches: Vec<Patch>,
}

impl Keys {
    /// `plane` pixel `(x, y)` sits at LR position `(x + ox, y + oy)`.
    fn new(plane: &Plane, ox: usize, oy: usize, rect: CenterRect) -> Result<Self> {
        if rect.width() < PATCH_SIZE || rect.height() < PATCH_SIZE {
            return Err(Error::DegenerateCenter(format!(
                "{rect} cannot hold a full {PATCH_SIZE}x{PATCH_SIZE} key patch"
            )));
        }
        let (kx0, ky0) = (rect.x0 + 1, rect.y0 + 1);
        let (nx, ny) = (rect.width() - 2, rect.height() - 2);
        let patches = (0..ny * nx)
            .map(|i| plane.patch(kx0 + i % nx - ox, ky0 + i / nx - oy))
            .collect();
        Ok(Self { kx0, ky0, nx, ny, patches })
    }

    #[inline]
    fn position(&self, k: usize) -> (usize, usize) {
        (self.kx0 + k % self.nx, self.ky0 + k / self.nx)
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        (y - self.ky0) * self.nx + (x - self.kx0)
    }

    /// Key closest to `(x, y)`.
    fn nearest(&self, x: usize, y: usize) -> usize {
        let cx = x.clamp(self.kx0, self.kx0 + self.nx - 1);
        let cy = y.clamp(self.ky0, self.ky0 + self.ny - 1);
        self.index(cx, cy)
    }

    fn key_set(&self) -> KeySet<9> {
        let units: Vec<[f32; 9]> = self.patches.iter().map(Patch::unit).collect();
        KeySet::new(&units, None)
    }
}

struct Problem {
    width: usize,
    height: usize,
    center: CenterRect,
    mode: MatchMode,
    queries: Vec<(usize, usize)>,
    query_patches: Vec<Patch>,
    keys: Keys,
}

impl Problem {
    fn new(feats: &MatchFeatures, center: CenterRect, mode: MatchMode, reference: Option<&Image>) -> Result<Self> {
        let (width, height) = (feats.width(), feats.height());
        center.validate(width, height)?;
        let lr = Plane::new(&feats.source);
        let keys = match mode {
            MatchMode::KernelFree => Keys::new(&lr, 0, 0, center)?,
            MatchMode::CrossResolution => {
                let reference = reference.ok_or_else(|| {
                    Error::InvalidParameter("cross-resolution matching needs a downsampled reference".into())
                })?;
                if reference.size() != (center.width(), center.height()) {
                    return Err(Error::SizeMismatch(format!(
                        "reference is {}x{}, center is {}x{}",
                        reference.width(),
                        reference.height(),
                        center.width(),
                        center.height()
                    )));
                }
                Keys::new(&Plane::new(reference), center.x0, center.y0, center)?
            }
        };
        let queries: Vec<(usize, usize)> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| mode == MatchMode::CrossResolution || !center.contains(x, y))
            .collect();
        let query_patches = queries.par_iter().map(|&(x, y)| lr.patch(x, y)).collect();
        Ok(Self {
            width,
            height,
            center,
            mode,
            queries,
            query_patches,
            keys,
        })
    }

    fn finish(self, results: Vec<(usize, f64)>) -> (IndexMap, ConfidenceMap) {
        let n = self.width * self.height;
        let mut mx = vec![0u32; n];
        let mut my = vec![0u32; n];
        let mut conf = vec![1.0f64; n];
        for i in 0..n {
            mx[i] = (i % self.width) as u32;
            my[i] = (i / self.width) as u32;
        }
        for (&(x, y), &(k, c)) in self.queries.iter().zip(&results) {
            let i = y * self.width + x;
            let (kx, ky) = self.keys.position(k);
            mx[i] = kx as u32;
            my[i] = ky as u32;
            conf[i] = c;
        }
        (
            IndexMap {
                width: self.width,
                height: self.height,
                center: self.center,
                mode: self.mode,
                mx,
                my,
            },
            ConfidenceMap {
                width: self.width,
                height: self.height,
                values: conf,
            },
        )
    }

    /// Result for a flat query, which has no direction to match.
    fn flat(&self, qi: usize) -> (usize, f64) {
        let (x, y) = self.queries[qi];
        (self.keys.nearest(x, y), 0.0)
    }

    fn exhaustive(&self) -> Vec<(usize, f64)> {
        let key_set = self.keys.key_set();
        let blocks: Vec<usize> = (0..self.queries.len()).step_by(QUERY_BLOCK).collect();
        blocks
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(scratch, cands), &start| {
                    let end = (start + QUERY_BLOCK).min(self.queries.len());
                    let units: Vec<[f32; 9]> = self.query_patches[start..end].iter().map(Patch::unit).collect();
                    search_block(&key_set, &units, COSINE_TOLERANCE, scratch, cands);
                    (start..end)
                        .zip(cands.iter())
                        .map(|(qi, c)| {
                            let q = &self.query_patches[qi];
                            if q.n2 == 0 {
                                return self.flat(qi);
                            }
                                                        resolve(c.indices(COSINE_TOLERANCE), |k| similarity(q, &self.keys.patches[k]))
                                .expect("at least one key")
                        })
                        .collect::<Vec<_>>()
                },
            )
            .flatten()
            .collect()
    }

    /// Half-resolution search, then exact rescoring of the fine keys
    /// around each coarse hit.
    fn coarse_to_fine(&self, feats: &MatchFeatures, reference: Option<&Image>, opts: &SearchOptions) -> Result<Vec<(usize, f64)>> {
        let c = self.center;
        let coarse_rect = CenterRect {
            x0: c.x0 / 2,
            y0: c.y0 / 2,
            x1: c.x1 / 2,
            y1: c.y1 / 2,
        };
        if coarse_rect.width() < PATCH_SIZE || coarse_rect.height() < PATCH_SIZE {
            return Ok(self.exhaustive());
        }
        let half = |img: &Image| -> Result<Image> {
            let (w, h) = img.size();
            resample(&img.pad_replicate(w + w % 2, h + h % 2), 0.5, ResampleMethod::BoxDown)
        };
        let coarse_lr = Plane::new(&half(&feats.source)?);
        let coarse_keys = match self.mode {
            MatchMode::KernelFree => Keys::new(&coarse_lr, 0, 0, coarse_rect)?,
            MatchMode::CrossResolution => Keys::new(
                &Plane::new(&half(reference.expect("validated"))?),
                coarse_rect.x0,
                coarse_rect.y0,
                coarse_rect,
            )?,
        };
        let key_set = coarse_keys.key_set();
        // One coarse query per 2x2 cell that holds a fine query.
        let mut cells: Vec<(usize, usize)> = self.queries.iter().map(|&(x, y)| (x / 2, y / 2)).collect();
        cells.sort_unstable_by_key(|&(x, y)| (y, x));
        cells.dedup();
        let k = opts.coarse_candidates.max(1);
        let blocks: Vec<usize> = (0..cells.len()).step_by(QUERY_BLOCK).collect();
        let coarse_hits: Vec<Vec<usize>> = blocks
            .par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(scratch, tops), &start| {
                    let end = (start + QUERY_BLOCK).min(cells.len());
                    let units: Vec<[f32; 9]> = cells[start..end]
                        .iter()
                        .map(|&(x, y)| coarse_lr.patch(x, y).unit())
                        .collect();
                    search_block_topk(&key_set, &units, k, scratch, tops);
                    tops.iter().map(|t| t.indices().collect()).collect::<Vec<_>>()
                },
            )
            .flatten()
            .collect();
        let cell_index = |x: usize, y: usize| {
            cells
                .binary_search_by_key(&(y / 2, x / 2), |&(cx, cy)| (cy, cx))
                .expect("every query has a cell")
        };

        let r = opts.refine_radius as isize;
        let keys = &self.keys;
        let (kx_hi, ky_hi) = ((keys.kx0 + keys.nx - 1) as isize, (keys.ky0 + keys.ny - 1) as isize);
        let results = (0..self.queries.len())
            .into_par_iter()
            .map_init(Vec::new, |cands, qi| {
                let q = &self.query_patches[qi];
                if q.n2 == 0 {
                    return self.flat(qi);
                }
                let (x, y) = self.queries[qi];
                cands.clear();
                for &ck in &coarse_hits[cell_index(x, y)] {
                    let (cx, cy) = coarse_keys.position(ck);
                    let fx = (2 * cx + x % 2) as isize;
                    let fy = (2 * cy + y % 2) as isize;
                    for ky in (fy - r).max(keys.ky0 as isize)..=(fy + r).min(ky_hi) {
                        for kx in (fx - r).max(keys.kx0 as isize)..=(fx + r).min(kx_hi) {
                            cands.push(keys.index(kx as usize, ky as usize));
                        }
                    }
                }
                cands.sort_unstable();
                cands.dedup();
                if cands.is_empty() {
                    return self.flat(qi);
                }
                resolve(cands.iter().copied(), |k| similarity(q, &keys.patches[k])).expect("non-empty")
            })
            .collect();
        Ok(results)
    }
}

/// Exhaustive matching; see [`kernel_free_match_with`].
pub fn kernel_free_match(
    feats: &MatchFeatures,
    center: CenterRect,
    mode: MatchMode,
    ref_for_cross: Option<&Image>,
) -> Result<(IndexMap, ConfidenceMap)> {
    kernel_free_match_with(feats, center, mode, ref_for_cross, &SearchOptions::default())
}

/// Best-matching key for every query position.
///
/// In kernel-free mode the queries are the positions outside `center`,
/// and center positions map to themselves with confidence 1. In
/// cross-resolution mode every position is a query and the keys come from
/// `ref_for_cross`, a luma or RGB image the size of `center` at LR scale.
/// Keys are the patches fully inside `center`; ties go to the lowest
/// row-major key. A flat query takes the nearest key with confidence 0.
pub fn kernel_free_match_with(
    feats: &MatchFeatures,
    center: CenterRect,
    mode: MatchMode,
    ref_for_cross: Option<&Image>,
    opts: &SearchOptions,
) -> Result<(IndexMap, ConfidenceMap)> {
    let problem = Problem::new(feats, center, mode, ref_for_cross)?;
    let results = if opts.coarse_to_fine {
        problem.coarse_to_fine(feats, ref_for_cross, opts)?
    } else {
        problem.exhaustive()
    };
    Ok(problem.finish(results))
}
