use super::{CenterRect, Homography};
use crate::error::{Error, Result};

/// Smallest accepted side of the center rectangle, in frame pixels.
pub const MIN_CENTER_SIDE: usize = 16;

/// Distance, in frame pixels, by which the projected reference may fall
/// short of a pixel boundary and still cover it; absorbs the sub-pixel
/// noise of estimated homographies.
pub const FOOTPRINT_SLACK: f64 = 0.1;

/// Horizontal extent of a convex polygon at height `y`.
fn slice(poly: &[(f64, f64)], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        if y < p.1.min(q.1) || y > p.1.max(q.1) {
            continue;
        }
        let xs = if p.1 == q.1 {
            [p.0, q.0]
        } else {
            let x = p.0 + (y - p.1) * (q.0 - p.0) / (q.1 - p.1);
            [x, x]
        };
        for x in xs {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

fn is_convex(poly: &[(f64, f64)]) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let (a, b, c) = (poly[i], poly[(i + 1) % poly.len()], poly[(i + 2) % poly.len()]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross.abs() < 1e-12 {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

/// Largest even-aligned, axis-aligned rectangle of frame pixels lying
/// inside both the projected reference and the frame.
///
/// `h` maps reference pixel-center coordinates to frame coordinates.
pub fn center_rect_from_homography(
    h: &Homography,
    ref_size: (usize, usize),
    lr_size: (usize, usize),
) -> Result<CenterRect> {
    let (rw, rh) = (ref_size.0 as f64, ref_size.1 as f64);
    let (lw, lh) = lr_size;
    let corners = [(-0.5, -0.5), (rw - 0.5, -0.5), (rw - 0.5, rh - 0.5), (-0.5, rh - 0.5)];
    if corners.iter().any(|&(x, y)| h.depth(x, y) <= 0.0) {
        return Err(Error::OverlapTooSmall("reference projects behind the camera".into()));
    }
    let quad: Vec<(f64, f64)> = corners.iter().map(|&(x, y)| h.apply(x, y)).collect();
    if !is_convex(&quad) {
        return Err(Error::OverlapTooSmall("projected reference is not convex".into()));
    }
    // Push the vertices out diagonally so that near-rectangular edges move
    // out by about the slack.
    let (cx, cy) = (quad.iter().map(|p| p.0).sum::<f64>() / 4.0, quad.iter().map(|p| p.1).sum::<f64>() / 4.0);
    let quad: Vec<(f64, f64)> = quad
        .iter()
        .map(|&(x, y)| {
            let d = (x - cx).hypot(y - cy);
            let k = if d > 0.0 { FOOTPRINT_SLACK * std::f64::consts::SQRT_2 / d } else { 0.0 };
            (x + k * (x - cx), y + k * (y - cy))
        })
        .collect();

    const EPS: f64 = 1e-9;
    // Rows are even, so the candidate edges are the lines y = 2k - 0.5.
    let lines: Vec<Option<(f64, f64)>> = (0..=lh / 2)
        .map(|k| {
            let y = (2 * k) as f64 - 0.5;
            slice(&quad, y).and_then(|(lo, hi)| {
                let lo = lo.max(-0.5);
                let hi = hi.min(lw as f64 - 0.5);
                (lo <= hi).then_some((lo, hi))
            })
        })
        .collect();

    let mut best: Option<(usize, CenterRect)> = None;
    for a in 0..lines.len() {
        let Some(top) = lines[a] else { continue };
        for b in a + 1..lines.len() {
            let Some(bottom) = lines[b] else { break };
            let lo = top.0.max(bottom.0);
            let hi = top.1.min(bottom.1);
            let x0 = (lo + 0.5 - EPS).ceil().max(0.0) as usize;
            let x0 = x0 + x0 % 2;
            let x1 = ((hi + 0.5 + EPS).floor().max(0.0) as usize).min(lw);
            if x1 < x0 + 2 {
                continue;
            }
            let width = (x1 - x0) & !1;
            let rect = CenterRect {
                x0,
                y0: 2 * a,
                x1: x0 + width,
                y1: 2 * b,
            };
            if best.is_none_or(|(area, _)| rect.area() > area) {
                best = Some((rect.area(), rect));
            }
        }
    }
    match best {
        Some((_, rect)) if rect.width() >= MIN_CENTER_SIDE && rect.height() >= MIN_CENTER_SIDE => {
            rect.validate(lw, lh)?;
            Ok(rect)
        }
        Some((_, rect)) => Err(Error::OverlapTooSmall(format!(
            "largest inscribed rectangle {rect} is below {MIN_CENTER_SIDE} px"
        ))),
        None => Err(Error::OverlapTooSmall("reference does not overlap the frame".into())),
    }
}
