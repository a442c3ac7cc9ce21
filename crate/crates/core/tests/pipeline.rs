use std::path::PathBuf;

use kefree::geometry::Homography;
use kefree::image::{load_image, resample};
use kefree::kfmatch::{MatchMode, SearchOptions};
use kefree::metrics::{psnr, region_report};
use kefree::synthetic::{synthetic_triple, SyntheticOptions, SyntheticTriple};
use kefree::transfer::{super_resolve, GateParams, SrConfig, SrOutput};
use kefree::{Image, ResampleMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn asset(name: &str) -> Image {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets/natural").join(format!("{name}.png"));
    load_image(path).unwrap()
}

fn triple(name: &str, opts: SyntheticOptions) -> SyntheticTriple {
    synthetic_triple(&asset(name), &opts).unwrap()
}

/// Reference-to-LR map of a synthetic triple's exact crop.
fn exact_homography(t: &SyntheticTriple) -> Homography {
    let c = t.center;
    Homography::scale_translation(0.5, c.x0 as f64 - 0.25, c.y0 as f64 - 0.25)
}

fn bits(img: &Image) -> Vec<u32> {
    img.planes().iter().flatten().map(|v| v.to_bits()).collect()
}

fn bicubic(lr: &Image) -> Image {
    resample(lr, 2.0, ResampleMethod::Bicubic).unwrap()
}

#[test]
fn constant_frame_gives_bicubic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lr = Image::filled(64, 48, 3, 0.4).unwrap();
    let reference = Image::from_fn(64, 48, 3, |_, _, _| rng.gen()).unwrap();
    let h = Homography::scale_translation(0.5, 16.0 - 0.25, 12.0 - 0.25);
    for mode in [MatchMode::KernelFree, MatchMode::CrossResolution] {
        let config = SrConfig {
            fixed_homography: Some(h),
            matching_mode: mode,
            ..SrConfig::default()
        };
        let out = super_resolve(&lr, &reference, &config).unwrap();
        assert_eq!(bits(&out.sr), bits(&bicubic(&lr)), "{mode}");
    }
}

#[test]
fn exact_reference_lifts_the_center() {
    let t = triple("coffee", SyntheticOptions::default());
    let out = super_resolve(&t.lr, &t.reference, &SrConfig::default()).unwrap();
    assert_eq!(out.center, t.center);
    let sr = region_report(&out.sr, &t.hr, t.center).unwrap();
    let base = region_report(&bicubic(&t.lr), &t.hr, t.center).unwrap();
    assert!(sr.center.psnr > base.center.psnr + 1.0, "{} vs {}", sr.center.psnr, base.center.psnr);
    assert!(sr.corner.psnr > base.corner.psnr - 0.1);
}

#[test]
fn kernel_free_beats_cross_resolution_on_a_blurred_reference() {
    let t = triple("astronaut", SyntheticOptions { ref_blur_sigma: 1.5, ..SyntheticOptions::default() });
    let score = |mode| {
        let config = SrConfig { matching_mode: mode, ..SrConfig::default() };
        psnr(&super_resolve(&t.lr, &t.reference, &config).unwrap().sr, &t.hr).unwrap()
    };
    let (kf, cross) = (score(MatchMode::KernelFree), score(MatchMode::CrossResolution));
    assert!(kf > cross, "{kf} vs {cross}");
}

/// Disabling corner warping changes nothing where the full pipeline
/// injected no detail, and nothing in the center.
#[test]
fn corner_switch_only_touches_gated_corners() {
    let t = triple("chelsea", SyntheticOptions::default());
    // A high floor leaves both gated and ungated corner positions.
    let base = SrConfig {
        fixed_homography: Some(exact_homography(&t)),
        gate: GateParams { floor: 0.95, ..Default::default() },
        ..SrConfig::default()
    };
    let d = super_resolve(&t.lr, &t.reference, &base).unwrap();
    let b = super_resolve(&t.lr, &t.reference, &SrConfig { corner_warp: false, ..base }).unwrap();
    let up = bicubic(&t.lr);
    let (w, h) = d.sr.size();
    let (mut gated, mut ungated_count) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            let inside = t.center.contains(x / 2, y / 2);
            let ungated = base.gate.gate(d.confidence.get(x / 2, y / 2)) == 0.0;
            for c in 0..3 {
                if inside || ungated {
                    assert_eq!(b.sr.get(c, x, y).to_bits(), d.sr.get(c, x, y).to_bits(), "({x}, {y})");
                }
                if !inside {
                    assert_eq!(b.sr.get(c, x, y).to_bits(), up.get(c, x, y).to_bits());
                }
            }
            gated += usize::from(!inside && !ungated);
            ungated_count += usize::from(!inside && ungated);
        }
    }
    assert!(gated > 0 && ungated_count > 0, "{gated} {ungated_count}");
}

fn run_in(threads: usize, t: &SyntheticTriple, config: &SrConfig) -> SrOutput {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| super_resolve(&t.lr, &t.reference, config).unwrap())
}

#[test]
fn output_ignores_thread_count() {
    let t = triple("ihc", SyntheticOptions { deformation: 2.0, ..SyntheticOptions::default() });
    for config in [SrConfig::default(), SrConfig { search: SearchOptions::accelerated(), ..SrConfig::default() }] {
        let one = run_in(1, &t, &config);
        let four = run_in(4, &t, &config);
        assert_eq!(bits(&one.sr), bits(&four.sr));
        assert_eq!(one.index_map, four.index_map);
        assert_eq!(one.homography, four.homography);
    }
}

/// Flow refinement undoes a smooth displacement of the reference.
#[test]
fn flow_refinement_reduces_alignment_error() {
    for (name, seed) in [("coffee", 1), ("ihc", 2), ("chelsea", 3)] {
        let t = triple(name, SyntheticOptions { deformation: 3.0, seed, ..SyntheticOptions::default() });
        let config = SrConfig { fixed_homography: Some(exact_homography(&t)), ..SrConfig::default() };
        let truth = t.hr.crop(2 * t.center.x0, 2 * t.center.y0, t.reference.width(), t.reference.height()).unwrap();
        let refined = super_resolve(&t.lr, &t.reference, &config).unwrap().aligned_reference;
        let global = super_resolve(&t.lr, &t.reference, &SrConfig { center_warp: false, ..config })
            .unwrap()
            .aligned_reference;
        let (before, after) = (psnr(&global, &truth).unwrap(), psnr(&refined, &truth).unwrap());
        assert!(after > before + 2.0, "{name}: {before:.2} -> {after:.2} dB");
    }
}
