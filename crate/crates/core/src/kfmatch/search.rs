//! Exhaustive "best key per query" search over fixed-length patch vectors.
//!
//! Scores are first evaluated as `f32` dot products plus a per-key offset
//! in a vectorized kernel. Every key whose approximate score lies within
//! `tolerance` of the best approximate score is kept as a candidate; the
//! caller then rescores the candidates exactly. As long as `tolerance`
//! exceeds twice the worst-case `f32` error, the exact winner is always
//! among the candidates, so the result equals a scalar brute-force search
//! bit for bit.

/// Keys per SIMD block.
const LANES: usize = 16;

/// Keys per chunk; one chunk stays in L1 across a query block.
const CHUNK: usize = 512;

/// Keys stored in blocks of [`LANES`]: each block holds the offsets of its
/// keys followed by one run of `LANES` values per dimension. The tail is
/// padded with keys whose offset is `-inf`, so they never score.
pub(crate) struct KeySet<const D: usize> {
    len: usize,
    data: Vec<f32>,
}

impl<const D: usize> KeySet<D> {
    const BLOCK: usize = (D + 1) * LANES;

    pub fn new(vectors: &[[f32; D]], offset: Option<Vec<f32>>) -> Self {
        let len = vectors.len();
        if let Some(o) = &offset {
            assert_eq!(o.len(), len);
        }
        let blocks = len.div_ceil(LANES);
        let mut data = vec![0.0; blocks * Self::BLOCK];
        for b in 0..blocks {
            let block = &mut data[b * Self::BLOCK..(b + 1) * Self::BLOCK];
            for i in 0..LANES {
                let k = b * LANES + i;
                if k >= len {
                    block[i] = f32::NEG_INFINITY;
                    continue;
                }
                block[i] = offset.as_ref().map_or(0.0, |o| o[k]);
                for t in 0..D {
                    block[(t + 1) * LANES + i] = vectors[k][t];
                }
            }
        }
        Self { len, data }
    }

    /// Blocks `[b0, b1)` as a flat slice.
    fn blocks(&self, b0: usize, b1: usize) -> &[f32] {
        &self.data[b0 * Self::BLOCK..b1 * Self::BLOCK]
    }
}

fn kernel_portable<const D: usize, const STORE: bool>(q: &[f32; D], data: &[f32], out: &mut [f32]) -> f32 {
    let mut m = f32::NEG_INFINITY;
    for (b, block) in data.chunks_exact((D + 1) * LANES).enumerate() {
        for i in 0..LANES {
            let mut s = block[i];
            for t in 0..D {
                s += q[t] * block[(t + 1) * LANES + i];
            }
            if STORE {
                out[b * LANES + i] = s;
            }
            m = m.max(s);
        }
    }
    m
}

/// Generates an explicit-SIMD kernel over `LANES`-key blocks that returns
/// the maximum score and, if `STORE`, writes every score to `out`.
#[cfg(target_arch = "x86_64")]
macro_rules! simd_kernel {
    ($name:ident, $feat:literal, $vec:ty, $width:literal, $set1:ident, $load:ident, $store:ident, $fma:ident, $max:ident) => {
        #[target_feature(enable = $feat)]
        unsafe fn $name<const D: usize, const STORE: bool>(q: &[f32; D], data: &[f32], out: &mut [f32]) -> f32 {
            use std::arch::x86_64::*;
            const PER_BLOCK: usize = LANES / $width;
            // Independent accumulators: enough to cover FMA latency on two
            // ports.
            const UNROLL: usize = 8;
            let stride = (D + 1) * LANES;
            let blocks = data.len() / stride;
            // Plain loops only: closures and `array::from_fn` would not be
            // compiled with the target features and break vectorization.
            // `wrapping_add` keeps debug builds free of per-load pointer
            // checks; every offset stays inside `data` / `out`.
            let mut qv = [$set1(0.0); D];
            for t in 0..D {
                qv[t] = $set1(q[t]);
            }
            let src = data.as_ptr();
            let dst = out.as_mut_ptr();
            let mut best = [$set1(f32::NEG_INFINITY); UNROLL];
            // One unit is `$width` consecutive keys of a block.
            let units = blocks * PER_BLOCK;
            let mut u = 0;
            while u + UNROLL <= units {
                let mut base = [src; UNROLL];
                let mut acc = [$set1(0.0); UNROLL];
                for j in 0..UNROLL {
                    let v = u + j;
                    base[j] = src.wrapping_add((v / PER_BLOCK) * stride + (v % PER_BLOCK) * $width);
                    acc[j] = $load(base[j]);
                }
                for t in 0..D {
                    for j in 0..UNROLL {
                        acc[j] = $fma(qv[t], $load(base[j].wrapping_add((t + 1) * LANES)), acc[j]);
                    }
                }
                for j in 0..UNROLL {
                    if STORE {
                        $store(dst.wrapping_add((u + j) * $width), acc[j]);
                    }
                    best[j] = $max(best[j], acc[j]);
                }
                u += UNROLL;
            }
            while u < units {
                let base = src.wrapping_add((u / PER_BLOCK) * stride + (u % PER_BLOCK) * $width);
                let mut acc = $load(base);
                for t in 0..D {
                    acc = $fma(qv[t], $load(base.wrapping_add((t + 1) * LANES)), acc);
                }
                if STORE {
                    $store(dst.wrapping_add(u * $width), acc);
                }
                best[0] = $max(best[0], acc);
                u += 1;
            }
            let mut m = best[0];
            for j in 1..UNROLL {
                m = $max(m, best[j]);
            }
            let mut lanes = [0f32; $width];
            $store(lanes.as_mut_ptr(), m);
            let mut r = f32::NEG_INFINITY;
            for l in lanes {
                r = r.max(l);
            }
            r
        }
    };
}

#[cfg(target_arch = "x86_64")]
simd_kernel!(kernel_avx512, "avx512f,fma", __m512, 16, _mm512_set1_ps, _mm512_loadu_ps, _mm512_storeu_ps, _mm512_fmadd_ps, _mm512_max_ps);
#[cfg(target_arch = "x86_64")]
simd_kernel!(kernel_avx2, "avx2,fma", __m256, 8, _mm256_set1_ps, _mm256_loadu_ps, _mm256_storeu_ps, _mm256_fmadd_ps, _mm256_max_ps);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Isa {
    #[cfg(target_arch = "x86_64")]
    Avx512,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    Portable,
}

/// Picks the widest supported kernel; `KEFREE_SIMD` (`avx512`, `avx2` or
/// `portable`) caps the choice.
fn detect_isa() -> Isa {
    let cap = std::env::var("KEFREE_SIMD").unwrap_or_default();
    #[cfg(target_arch = "x86_64")]
    {
        let fma = is_x86_feature_detected!("fma");
        if (cap.is_empty() || cap == "avx512") && fma && is_x86_feature_detected!("avx512f") {
            return Isa::Avx512;
        }
        if (cap.is_empty() || cap == "avx512" || cap == "avx2") && fma && is_x86_feature_detected!("avx2") {
            return Isa::Avx2;
        }
    }
    let _ = cap;
    Isa::Portable
}

fn isa() -> Isa {
    static ISA: std::sync::OnceLock<Isa> = std::sync::OnceLock::new();
    *ISA.get_or_init(detect_isa)
}

/// Scores of the keys in `data` (whole blocks), written to `out` only if
/// `STORE`; returns their maximum.
#[inline]
fn kernel<const D: usize, const STORE: bool>(q: &[f32; D], data: &[f32], out: &mut [f32]) -> f32 {
    let stride = (D + 1) * LANES;
    assert!(data.len() % stride == 0 && (!STORE || out.len() >= data.len() / stride * LANES));
    match isa() {
        // SAFETY: the CPU features were verified at runtime, `data` holds
        // whole blocks and `out` has room for every score that is stored.
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => unsafe { kernel_avx512::<D, STORE>(q, data, out) },
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { kernel_avx2::<D, STORE>(q, data, out) },
        Isa::Portable => kernel_portable::<D, STORE>(q, data, out),
    }
}

/// Per-query candidate state.
#[derive(Clone, Debug, Default)]
pub(crate) struct Candidates {
    best: f32,
    items: Vec<(u32, f32)>,
    /// Length above which stale items are pruned; grows with the number of
    /// genuine near-ties so pruning stays amortized.
    limit: usize,
}

impl Candidates {
    fn reset(&mut self) {
        self.best = f32::NEG_INFINITY;
        self.items.clear();
        self.limit = CHUNK;
    }

    /// Appends the scores of `chunk` (keys from `start`) that reach `thr`.
    fn collect(&mut self, start: usize, chunk: &[f32], thr: f32) {
        // Branch-free compaction: always write, advance on a hit.
        let len = self.items.len();
        self.items.resize(len + chunk.len(), (0, 0.0));
        let mut n = len;
        for (j, &p) in chunk.iter().enumerate() {
            self.items[n] = ((start + j) as u32, p);
            n += (p >= thr) as usize;
        }
        self.items.truncate(n);
        if self.items.len() > self.limit {
            self.items.retain(|c| c.1 >= thr);
            self.limit = self.limit.max(2 * self.items.len());
        }
    }

    /// Candidate key indices, ascending.
    pub fn indices(&self, tolerance: f32) -> impl Iterator<Item = usize> + '_ {
        let thr = self.best - tolerance;
        self.items.iter().filter(move |c| c.1 >= thr).map(|c| c.0 as usize)
    }
}

/// Calls `visit(first_key, chunk_data)` for every chunk in key order.
fn for_each_chunk<const D: usize>(keys: &KeySet<D>, mut visit: impl FnMut(usize, &[f32])) {
    let blocks = keys.len.div_ceil(LANES);
    let per_chunk = CHUNK / LANES;
    let mut b0 = 0;
    while b0 < blocks {
        let b1 = (b0 + per_chunk).min(blocks);
        visit(b0 * LANES, keys.blocks(b0, b1));
        b0 = b1;
    }
}

/// Runs the approximate pass for a block of queries against all keys.
///
/// `cands` is resized to `queries.len()`; entry `i` receives the
/// candidates of query `i`.
pub(crate) fn search_block<const D: usize>(
    keys: &KeySet<D>,
    queries: &[[f32; D]],
    tolerance: f32,
    scratch: &mut Vec<f32>,
    cands: &mut Vec<Candidates>,
) {
    cands.resize_with(queries.len(), Candidates::default);
    cands.iter_mut().for_each(Candidates::reset);
    scratch.resize(CHUNK, 0.0);
    for_each_chunk(keys, |start, data| {
        for (q, state) in queries.iter().zip(cands.iter_mut()) {
            let m = kernel::<D, false>(q, data, scratch);
            if m > state.best {
                state.best = m;
            }
            let thr = state.best - tolerance;
            if m < thr {
                continue;
            }
            kernel::<D, true>(q, data, scratch);
            let n = (keys.len - start).min(CHUNK);
            state.collect(start, &scratch[..n], thr);
        }
    });
}

/// The `k` best keys of one query by approximate score, best first; equal
/// scores keep ascending key order.
#[derive(Clone, Debug, Default)]
pub(crate) struct TopK {
    items: Vec<(f32, u32)>,
}

impl TopK {
    fn floor(&self, k: usize) -> f32 {
        if self.items.len() < k {
            f32::NEG_INFINITY
        } else {
            self.items[k - 1].0
        }
    }

    fn insert(&mut self, k: usize, score: f32, idx: u32) {
        let pos = self.items.partition_point(|&(s, _)| s >= score);
        if pos < k {
            self.items.insert(pos, (score, idx));
            self.items.truncate(k);
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|&(_, i)| i as usize)
    }
}

/// Approximate top-`k` search for a block of queries.
pub(crate) fn search_block_topk<const D: usize>(
    keys: &KeySet<D>,
    queries: &[[f32; D]],
    k: usize,
    scratch: &mut Vec<f32>,
    out: &mut Vec<TopK>,
) {
    assert!(k > 0);
    out.resize_with(queries.len(), TopK::default);
    out.iter_mut().for_each(|t| t.items.clear());
    scratch.resize(CHUNK, 0.0);
    for_each_chunk(keys, |start, data| {
        for (q, top) in queries.iter().zip(out.iter_mut()) {
            if kernel::<D, false>(q, data, scratch) <= top.floor(k) {
                continue;
            }
            kernel::<D, true>(q, data, scratch);
            let n = (keys.len - start).min(CHUNK);
            for (j, &p) in scratch[..n].iter().enumerate() {
                if p > top.floor(k) {
                    top.insert(k, p, (start + j) as u32);
                }
            }
        }
    });
}

/// Picks the candidate with the greatest exact score; ties go to the
/// lowest index. `exact` must be deterministic.
pub(crate) fn resolve(indices: impl Iterator<Item = usize>, mut exact: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for k in indices {
        let s = exact(k);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn candidates_contain_the_true_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 17, 3000] {
            let keys: Vec<[f32; 9]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
            let offset: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let set = KeySet::new(&keys, Some(offset.clone()));
            let queries: Vec<[f32; 9]> = (0..20).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
            let mut scratch = Vec::new();
            let mut cands = Vec::new();
            search_block(&set, &queries, 1e-4, &mut scratch, &mut cands);
            for (q, c) in queries.iter().zip(&cands) {
                let exact = |k: usize| offset[k] as f64 + (0..9).map(|t| q[t] as f64 * keys[k][t] as f64).sum::<f64>();
                let brute = (0..n).fold((0, f64::NEG_INFINITY), |b, k| if exact(k) > b.1 { (k, exact(k)) } else { b });
                let got = resolve(c.indices(1e-4), exact).unwrap();
                assert_eq!(got.0, brute.0);
            }
        }
    }

    #[test]
    fn simd_kernels_agree_with_portable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1usize, 15, 16, 63, 64, 65, 200, 512] {
            let keys: Vec<[f32; 9]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
            let offset: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let set = KeySet::new(&keys, Some(offset));
            let q: [f32; 9] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let padded = n.div_ceil(LANES) * LANES;
            let mut expect = vec![0.0; padded];
            let m = kernel_portable::<9, true>(&q, &set.data, &mut expect);
            let mut got = vec![0.0; padded];
            let gm = kernel::<9, true>(&q, &set.data, &mut got);
            for (a, b) in expect.iter().zip(&got) {
                assert!((a - b).abs() < 1e-5 || (*a == f32::NEG_INFINITY && *b == f32::NEG_INFINITY));
            }
            assert!((m - gm).abs() < 1e-5);
            assert_eq!(gm.to_bits(), kernel::<9, false>(&q, &set.data, &mut []).to_bits());
        }
    }

    #[test]
    fn topk_keeps_best_scores_in_order() {
        let keys: Vec<[f32; 1]> = [0.1, 0.9, 0.5, 0.9, 0.7, 0.2].iter().map(|&v| [v]).collect();
        let set = KeySet::new(&keys, None);
        let mut out = Vec::new();
        search_block_topk(&set, &[[1.0]], 3, &mut Vec::new(), &mut out);
        assert_eq!(out[0].indices().collect::<Vec<_>>(), vec![1, 3, 4]);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let got = resolve([3usize, 5, 9].into_iter(), |k| if k == 3 { 0.5 } else { 1.0 });
        assert_eq!(got, Some((5, 1.0)));
    }

    #[test]
    fn every_tied_key_stays_a_candidate() {
        let keys = vec![[0.5f32, -0.5, 0.0]; 3000];
        let set = KeySet::new(&keys, None);
        let (mut scratch, mut cands) = (Vec::new(), Vec::new());
        search_block(&set, &[[1.0, -1.0, 0.0]], 1e-5, &mut scratch, &mut cands);
        assert!(cands[0].indices(1e-5).eq(0..3000));
    }
}
