use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kefree::dataset::{build_triple, save_triple, BuildParams, Triple};
use kefree::image::load_image;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::BuildArgs;

/// One line of `manifest.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub scene_id: String,
    pub quality: f64,
    pub accepted: bool,
}

pub const MANIFEST: &str = "manifest.csv";

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    let path = root.join(MANIFEST);
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("cannot read {}", path.display()))?;
    reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("malformed {}", path.display()))
}

fn resolve_params(args: &BuildArgs) -> Result<BuildParams> {
    let mut params = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid configuration {}", path.display()))?
        }
        None => BuildParams::default(),
    };
    if let Some(seed) = args.seed {
        params.ransac.seed = seed;
    }
    Ok(params)
}

/// Scene directories in name order.
fn scenes(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(input).with_context(|| format!("cannot list {}", input.display()))?;
    let mut scenes = Vec::new();
    for entry in entries {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            scenes.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    scenes.sort();
    Ok(scenes)
}

fn build_scene(dir: &Path, params: &BuildParams) -> Result<Triple> {
    let wide = load_image(dir.join("wide.png"))?;
    let tele = load_image(dir.join("tele.png"))?;
    Ok(build_triple(&wide, &tele, params)?)
}

pub fn run(args: BuildArgs) -> Result<()> {
    let params = resolve_params(&args)?;
    let scenes = scenes(&args.input)?;
    if scenes.is_empty() {
        bail!("no scene directories in {}", args.input.display());
    }
    let results: Vec<(String, Option<Triple>)> = scenes
        .par_iter()
        .map(|(id, dir)| {
            let missing: Vec<&str> = ["wide.png", "tele.png"]
                .into_iter()
                .filter(|f| !dir.join(f).is_file())
                .collect();
            if !missing.is_empty() {
                eprintln!("warning: skipping {id}: missing {}", missing.join(", "));
                return (id.clone(), None);
            }
            match build_scene(dir, &params) {
                Ok(t) => (id.clone(), Some(t)),
                Err(e) => {
                    eprintln!("warning: skipping {id}: {e:#}");
                    (id.clone(), None)
                }
            }
        })
        .collect();

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let manifest_path = args.out.join(MANIFEST);
    let mut manifest =
        csv::Writer::from_path(&manifest_path).with_context(|| format!("cannot write {}", manifest_path.display()))?;
    let (mut built, mut flagged) = (0, 0);
    for (id, triple) in &results {
        let Some(t) = triple else { continue };
        save_triple(t, args.out.join(id))?;
        manifest.serialize(ManifestRow {
            scene_id: id.clone(),
            quality: t.provenance.quality,
            accepted: t.provenance.accepted,
        })?;
        built += 1;
        flagged += usize::from(!t.provenance.accepted);
    }
    manifest.flush()?;
    eprintln!(
        "{built} of {} scenes built into {}, {flagged} flagged for review",
        scenes.len(),
        args.out.display()
    );
    Ok(())
}
