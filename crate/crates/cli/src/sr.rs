use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use kefree::geometry::{CenterRect, Homography};
use kefree::image::{load_image, resample, save_image};
use kefree::metrics::{region_report, RegionReport};
use kefree::transfer::{super_resolve, Diagnostics, SrConfig, SrOutput};
use kefree::{Image, ResampleMethod};
use serde::Serialize;

use crate::SrArgs;

/// Reproducible record of one run; timings are deliberately left out.
#[derive(Serialize)]
struct SrMeta<'a> {
    mode: &'static str,
    seed: u64,
    lr_size: (usize, usize),
    sr_size: (usize, usize),
    center: CenterRect,
    homography: Homography,
    diagnostics: &'a Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<Scores>,
    config: &'a SrConfig,
}

#[derive(Serialize)]
struct Scores {
    sr: RegionReport,
    bicubic: RegionReport,
    psnr_channels: &'static str,
    ssim_channels: &'static str,
}

/// Built-in defaults, then the JSON file, then flags.
fn resolve_config(args: &SrArgs) -> Result<SrConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid configuration {}", path.display()))?
        }
        None => SrConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.ransac.seed = seed;
    }
    if let Some(mode) = args.matching_mode {
        config.matching_mode = mode;
    }
    if args.no_center_warp {
        config.center_warp = false;
    }
    if args.no_corner_warp {
        config.corner_warp = false;
    }
    if args.accelerated {
        config.search.coarse_to_fine = true;
    }
    if let Some(values) = &args.fixed_homography {
        let Ok(m) = <[f64; 9]>::try_from(values.as_slice()) else {
            bail!("--fixed-homography takes 9 values, got {}", values.len());
        };
        config.fixed_homography = Some(Homography::from_row_major(m)?);
    }
    config.validate()?;
    Ok(config)
}

fn write_debug(out: &SrOutput, lr: &Image, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    save_image(&out.aligned_reference, dir.join("aligned_reference.png"))?;
    save_image(&out.confidence.to_image(), dir.join("confidence.png"))?;
    save_image(&out.warped.coverage_image(), dir.join("coverage.png"))?;
    // The detail layer is signed; shift it to mid-gray.
    let transfer = if out.contrast.is_some() {
        out.warped.image.map(|v| v + 0.5)
    } else {
        out.warped.image.clone()
    };
    save_image(&transfer, dir.join("transfer.png"))?;
    save_image(&resample(lr, 2.0, ResampleMethod::Bicubic)?, dir.join("bicubic.png"))?;
    out.index_map.write_raw(dir.join("index_map.bin"))?;
    out.confidence.write_raw(dir.join("confidence.bin"))?;
    Ok(())
}

pub fn run(args: SrArgs) -> Result<()> {
    let config = resolve_config(&args)?;
    let lr = load_image(&args.lr)?;
    let reference = load_image(&args.reference)?;
    let hr = args.hr.as_ref().map(load_image).transpose()?;

    let out = super_resolve(&lr, &reference, &config)?;
    save_image(&out.sr, &args.out)?;
    if let Some(dir) = &args.debug_dir {
        write_debug(&out, &lr, dir)?;
    }

    let scores = match &hr {
        Some(hr) => {
            let bicubic = resample(&lr, 2.0, ResampleMethod::Bicubic)?;
            Some(Scores {
                sr: region_report(&out.sr, hr, out.center)?,
                bicubic: region_report(&bicubic, hr, out.center)?,
                psnr_channels: "rgb",
                ssim_channels: "luma",
            })
        }
        None => None,
    };
    let meta = SrMeta {
        mode: config.matching_mode.as_str(),
        seed: config.ransac.seed,
        lr_size: lr.size(),
        sr_size: out.sr.size(),
        center: out.center,
        homography: out.homography,
        diagnostics: &out.diagnostics,
        scores,
        config: &config,
    };
    let meta_path = args.out.with_extension("json");
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, text + "\n").with_context(|| format!("cannot write {}", meta_path.display()))?;

    let t = &out.timings;
    eprintln!(
        "{} -> {} ({}x{}), center {}, {:.2}s (align {:.2}, flow {:.2}, match {:.2}, transfer {:.2})",
        args.lr.display(),
        args.out.display(),
        out.sr.width(),
        out.sr.height(),
        out.center,
        t.total.as_secs_f64(),
        t.alignment.as_secs_f64(),
        t.center_warp.as_secs_f64(),
        t.matching.as_secs_f64(),
        t.transfer.as_secs_f64()
    );
    if let Some(s) = &meta.scores {
        eprintln!(
            "PSNR full/center/corner {:.3}/{:.3}/{:.3} dB (bicubic {:.3}/{:.3}/{:.3})",
            s.sr.full.psnr, s.sr.center.psnr, s.sr.corner.psnr, s.bicubic.full.psnr, s.bicubic.center.psnr, s.bicubic.corner.psnr
        );
    }
    Ok(())
}
