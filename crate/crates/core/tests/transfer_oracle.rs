mod common;

use common::transfer::{mismatch, queries, random_case, scatter};
use kefree::kfmatch::MatchMode;
use kefree::transfer::corner_warp;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn kernel_free_warp_matches_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        assert_eq!(mismatch(&random_case(&mut rng, MatchMode::KernelFree)), None);
    }
}

#[test]
fn cross_resolution_warp_matches_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        assert_eq!(mismatch(&random_case(&mut rng, MatchMode::CrossResolution)), None);
    }
}

#[test]
fn every_corner_pixel_is_covered() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..20 {
        let case = random_case(&mut rng, MatchMode::KernelFree);
        let got = corner_warp(&case.reference, &case.map, case.center, 2).unwrap();
        assert!(got.coverage.iter().all(|&n| n > 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Averaging does not depend on the order contributions arrive in, up
    /// to floating-point reassociation.
    #[test]
    fn warp_is_invariant_to_query_order(seed in any::<u64>(), cross in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if cross { MatchMode::CrossResolution } else { MatchMode::KernelFree };
        let case = random_case(&mut rng, mode);
        let got = corner_warp(&case.reference, &case.map, case.center, 2).unwrap();
        let mut order = queries(&case.map);
        order.shuffle(&mut rng);
        let (acc, count) = scatter(&case, &order);
        let hw = 2 * case.map.width();
        for (i, &n) in count.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for (c, plane) in acc.iter().enumerate() {
                let got = got.image.plane(c)[i] as f64;
                prop_assert!((got - plane[i] / n as f64).abs() < 1e-6, "pixel ({}, {})", i % hw, i / hw);
            }
        }
    }
}
