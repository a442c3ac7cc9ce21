use kefree::geometry::CenterRect;
use kefree::kfmatch::{build_match_features, kernel_free_match, MatchMode};
use kefree::Image;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn q(v: f32) -> i64 {
    (v.clamp(0.0, 1.0) as f64 * 65280.0).round() as i64
}

pub fn at(img: &Image, x: isize, y: isize) -> i64 {
    q(img.get_clamped(0, x, y))
}

pub fn patch(img: &Image, cx: isize, cy: isize) -> Vec<i64> {
    let mut v = Vec::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            v.push(at(img, cx + dx, cy + dy));
        }
    }
    v
}

/// Zero-mean cosine over exact integer sums.
fn cosine(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len() as i64;
    let (sa, sb): (i64, i64) = (a.iter().sum(), b.iter().sum());
    let na = n * a.iter().map(|x| x * x).sum::<i64>() - sa * sa;
    let nb = n * b.iter().map(|x| x * x).sum::<i64>() - sb * sb;
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let dot: i64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    ((n * dot - sa * sb) as f64 / ((na as f64) * (nb as f64)).sqrt()).clamp(-1.0, 1.0)
}

/// Plain double loop over every query and key.
pub fn brute_force(lr: &Image, rect: CenterRect, keys_from: Option<&Image>) -> Vec<((usize, usize), f64)> {
    let (w, h) = lr.size();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if keys_from.is_none() && rect.contains(x, y) {
                out.push(((x, y), 1.0));
                continue;
            }
            let qp = patch(lr, x as isize, y as isize);
            let flat = qp.iter().all(|&v| v == qp[0]);
            let mut best: Option<((usize, usize), f64)> = None;
            let mut nearest = ((0, 0), f64::INFINITY);
            for ky in rect.y0 + 1..rect.y1 - 1 {
                for kx in rect.x0 + 1..rect.x1 - 1 {
                    let kp = match keys_from {
                        None => patch(lr, kx as isize, ky as isize),
                        Some(r) => patch(r, (kx - rect.x0) as isize, (ky - rect.y0) as isize),
                    };
                    let s = cosine(&qp, &kp);
                    if best.map_or(true, |(_, b)| s > b) {
                        best = Some(((kx, ky), s));
                    }
                    let d = (kx as f64 - x as f64).hypot(ky as f64 - y as f64);
                    if d < nearest.1 {
                        nearest = ((kx, ky), d);
                    }
                }
            }
            out.push(if flat { (nearest.0, 0.0) } else { best.unwrap() });
        }
    }
    out
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (Image, CenterRect) {
    let w = rng.gen_range(6..=32usize);
    let h = rng.gen_range(6..=32usize);
    let levels = [2u32, 3, 8, 256, 0][rng.gen_range(0..5)];
    let img = Image::from_fn(w, h, 1, |_, _, _| {
        if levels == 0 {
            rng.gen::<f32>()
        } else {
            rng.gen_range(0..levels) as f32 / (levels - 1) as f32
        }
    })
    .unwrap();
    let rw = 2 * rng.gen_range(2..=w / 2);
    let rh = 2 * rng.gen_range(2..=h / 2);
    let x0 = 2 * rng.gen_range(0..=(w - rw) / 2);
    let y0 = 2 * rng.gen_range(0..=(h - rh) / 2);
    let rect = CenterRect::new(x0, y0, x0 + rw, y0 + rh, w, h).unwrap();
    (img, rect)
}

/// First disagreement between the matcher and [`brute_force`], if any.
pub fn mismatch(lr: &Image, rect: CenterRect, mode: MatchMode, reference: Option<&Image>) -> Option<String> {
    let (m, c) = kernel_free_match(&build_match_features(lr), rect, mode, reference).unwrap();
    let expected = brute_force(lr, rect, reference);
    for (i, &((ex, ey), ec)) in expected.iter().enumerate() {
        let (x, y) = (i % lr.width(), i / lr.width());
        if m.get(x, y) != (ex, ey) || c.get(x, y).to_bits() != ec.to_bits() {
            return Some(format!(
                "({x}, {y}) in {rect}: got {:?} {}, want {:?} {ec}",
                m.get(x, y),
                c.get(x, y),
                (ex, ey)
            ));
        }
    }
    None
}
