use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use kefree::dataset::TripleMeta;
use kefree::image::load_image;
use kefree::metrics::{region_report, RegionReport, RegionScore};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::read_manifest;
use crate::EvalArgs;

#[derive(Serialize)]
struct SceneReport {
    scene_id: String,
    #[serde(flatten)]
    report: RegionReport,
}

/// Arithmetic means over scenes; SSIM means skip scenes without a value.
#[derive(Serialize)]
struct Means {
    scenes: usize,
    full_psnr: f64,
    full_ssim: Option<f64>,
    center_psnr: f64,
    center_ssim: Option<f64>,
    corner_psnr: f64,
    corner_ssim: Option<f64>,
}

#[derive(Serialize)]
struct EvalReport {
    psnr_channels: &'static str,
    ssim_channels: &'static str,
    scenes: Vec<SceneReport>,
    mean: Means,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_ssim<'a>(scores: impl Iterator<Item = &'a RegionScore>) -> Option<f64> {
    let values: Vec<f64> = scores.filter_map(|s| s.ssim).collect();
    (!values.is_empty()).then(|| mean(values.into_iter()))
}

fn means(reports: &[SceneReport]) -> Means {
    let region = |f: fn(&RegionReport) -> &RegionScore| {
        let psnr = mean(reports.iter().map(|r| f(&r.report).psnr));
        (psnr, mean_ssim(reports.iter().map(|r| f(&r.report))))
    };
    let (full_psnr, full_ssim) = region(|r| &r.full);
    let (center_psnr, center_ssim) = region(|r| &r.center);
    let (corner_psnr, corner_ssim) = region(|r| &r.corner);
    Means {
        scenes: reports.len(),
        full_psnr,
        full_ssim,
        center_psnr,
        center_ssim,
        corner_psnr,
        corner_ssim,
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    let rows: Vec<_> = read_manifest(&args.dataset)?
        .into_iter()
        .filter(|r| r.accepted || args.include_rejected)
        .collect();
    if rows.is_empty() {
        bail!("no scenes to evaluate in {}", args.dataset.display());
    }
    let inputs: Vec<(String, PathBuf, PathBuf, PathBuf)> = rows
        .iter()
        .map(|r| {
            let dir = args.dataset.join(&r.scene_id);
            let sr = args.sr_dir.join(format!("{}.png", r.scene_id));
            (r.scene_id.clone(), sr, dir.join("hr.png"), dir.join("meta.json"))
        })
        .collect();
    let missing: Vec<String> = inputs
        .iter()
        .flat_map(|(_, sr, hr, meta)| [sr, hr, meta])
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing files: {}", missing.join(", "));
    }

    let scenes = inputs
        .par_iter()
        .map(|(id, sr, hr, meta)| -> Result<SceneReport> {
            let text = fs::read_to_string(meta).with_context(|| format!("cannot read {}", meta.display()))?;
            let meta: TripleMeta =
                serde_json::from_str(&text).with_context(|| format!("malformed {}", meta.display()))?;
            let report = region_report(&load_image(sr)?, &load_image(hr)?, meta.center)
                .with_context(|| format!("scoring {id}"))?;
            Ok(SceneReport {
                scene_id: id.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = means(&scenes);

    let mut csv = csv::Writer::from_path(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    let header = format!("scene_id,{}", RegionReport::csv_header());
    csv.write_record(header.split(','))?;
    for s in &scenes {
        let row = format!("{},{}", s.scene_id, s.report.csv_row());
        csv.write_record(row.split(','))?;
    }
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    csv.write_record([
        "mean".to_string(),
        mean.full_psnr.to_string(),
        opt(mean.full_ssim),
        mean.center_psnr.to_string(),
        opt(mean.center_ssim),
        mean.corner_psnr.to_string(),
        opt(mean.corner_ssim),
    ])?;
    csv.flush()?;

    eprintln!(
        "{} scenes: PSNR full/center/corner {:.3}/{:.3}/{:.3} dB",
        mean.scenes, mean.full_psnr, mean.center_psnr, mean.corner_psnr
    );
    let report = EvalReport {
        psnr_channels: "rgb",
        ssim_channels: "luma",
        scenes,
        mean,
    };
    let json_path = args.out.with_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", json_path.display()))?;
    Ok(())
}
