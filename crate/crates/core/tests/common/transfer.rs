use kefree::geometry::CenterRect;
use kefree::kfmatch::{IndexMap, MatchMode};
use kefree::transfer::corner_warp;
use kefree::Image;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub map: IndexMap,
    pub center: CenterRect,
    pub reference: Image,
}

pub fn random_case(rng: &mut ChaCha8Rng, mode: MatchMode) -> Case {
    let w = rng.gen_range(6..=24usize);
    let h = rng.gen_range(6..=24usize);
    let rw = 2 * rng.gen_range(2..=w / 2);
    let rh = 2 * rng.gen_range(2..=h / 2);
    let x0 = 2 * rng.gen_range(0..=(w - rw) / 2);
    let y0 = 2 * rng.gen_range(0..=(h - rh) / 2);
    let center = CenterRect::new(x0, y0, x0 + rw, y0 + rh, w, h).unwrap();
    let positions: Vec<(usize, usize)> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if mode == MatchMode::KernelFree && center.contains(x, y) {
                (x, y)
            } else {
                (rng.gen_range(x0 + 1..x0 + rw - 1), rng.gen_range(y0 + 1..y0 + rh - 1))
            }
        })
        .collect();
    let map = IndexMap::from_positions(w, h, center, mode, &positions).unwrap();
    let channels = [1, 3][rng.gen_range(0..2)];
    let reference = Image::from_fn(2 * rw, 2 * rh, channels, |_, _, _| rng.gen()).unwrap();
    Case { map, center, reference }
}

/// Scatter every query's 6×6 block onto the HR grid and divide by the
/// number of contributions. Returns values and counts.
pub fn scatter(case: &Case, order: &[(usize, usize)]) -> (Vec<Vec<f64>>, Vec<u32>) {
    let Case { map, center, reference } = case;
    let (hw, hh) = (2 * map.width(), 2 * map.height());
    let kernel_free = map.mode() == MatchMode::KernelFree;
    let mut acc = vec![vec![0f64; hw * hh]; reference.channels()];
    let mut count = vec![0u32; hw * hh];
    for &(qx, qy) in order {
        let (mx, my) = map.get(qx, qy);
        for dy in 0..6 {
            for dx in 0..6 {
                let (xx, yy) = ((2 * qx + dx) as isize - 2, (2 * qy + dy) as isize - 2);
                if xx < 0 || yy < 0 || xx >= hw as isize || yy >= hh as isize {
                    continue;
                }
                let (xx, yy) = (xx as usize, yy as usize);
                if kernel_free && center.contains(xx / 2, yy / 2) {
                    continue;
                }
                let sx = 2 * (mx - center.x0) + dx - 2;
                let sy = 2 * (my - center.y0) + dy - 2;
                for (c, plane) in acc.iter_mut().enumerate() {
                    plane[yy * hw + xx] += reference.get(c, sx, sy) as f64;
                }
                count[yy * hw + xx] += 1;
            }
        }
    }
    (acc, count)
}

pub fn queries(map: &IndexMap) -> Vec<(usize, usize)> {
    let mut q = Vec::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.mode() == MatchMode::CrossResolution || !map.center().contains(x, y) {
                q.push((x, y));
            }
        }
    }
    q
}

/// Expected output of a row-major scatter, including the copied center.
pub fn oracle(case: &Case) -> (Image, Vec<u32>) {
    let (acc, mut count) = scatter(case, &queries(&case.map));
    let (hw, hh) = (2 * case.map.width(), 2 * case.map.height());
    let c = case.center;
    let kernel_free = case.map.mode() == MatchMode::KernelFree;
    let image = Image::from_fn(hw, hh, case.reference.channels(), |ch, x, y| {
        if kernel_free && c.contains(x / 2, y / 2) {
            case.reference.get(ch, x - 2 * c.x0, y - 2 * c.y0)
        } else {
            let n = count[y * hw + x];
            if n == 0 {
                0.0
            } else {
                (acc[ch][y * hw + x] / n as f64) as f32
            }
        }
    })
    .unwrap();
    if kernel_free {
        for y in 0..hh {
            for x in 0..hw {
                if c.contains(x / 2, y / 2) {
                    count[y * hw + x] = 1;
                }
            }
        }
    }
    (image, count)
}

/// First disagreement between `corner_warp` and [`oracle`], if any.
pub fn mismatch(case: &Case) -> Option<String> {
    let got = corner_warp(&case.reference, &case.map, case.center, 2).unwrap();
    let (want, count) = oracle(case);
    if got.coverage != count {
        return Some(format!("coverage, center {}", case.center));
    }
    for (c, (a, b)) in got.image.planes().iter().zip(want.planes()).enumerate() {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            if x.to_bits() != y.to_bits() {
                return Some(format!("channel {c} pixel {i}: {x} vs {y}, center {}", case.center));
            }
        }
    }
    None
}
