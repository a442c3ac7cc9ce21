//! `kefree`: reference-based ×2 super-resolution of wide-angle frames with
//! a telephoto reference, plus evaluation, matching-curve analysis and
//! dataset construction.

mod curve;
mod dataset;
mod eval;
mod sr;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kefree::kfmatch::MatchMode;

#[derive(Parser)]
#[command(name = "kefree", version, about)]
struct Cli {
    /// Worker threads (all cores when unset).
    #[arg(long, global = true, env = "KEFREE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Super-resolve a wide-angle frame with its telephoto reference.
    Sr(SrArgs),
    /// Score super-resolved outputs of a dataset against its HR images.
    Eval(EvalArgs),
    /// Matching hit rate against error-rate threshold.
    Curve(CurveArgs),
    /// Build (LR, Ref, HR) triples from wide/telephoto capture pairs.
    BuildDataset(BuildArgs),
}

#[derive(Args)]
pub struct SrArgs {
    /// Low-resolution wide-angle frame.
    #[arg(long)]
    lr: PathBuf,
    /// Telephoto reference.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output PNG; metadata goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
    /// Ground truth; adds region scores of the output and of bicubic
    /// upsampling to the metadata.
    #[arg(long)]
    hr: Option<PathBuf>,
    /// JSON pipeline configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    matching_mode: Option<MatchMode>,
    /// Skip dense-flow refinement of the reference alignment.
    #[arg(long)]
    no_center_warp: bool,
    /// Leave the positions outside the center at bicubic.
    #[arg(long)]
    no_corner_warp: bool,
    /// Coarse-to-fine matching instead of exhaustive search.
    #[arg(long)]
    accelerated: bool,
    /// Reference-to-LR homography, row-major, instead of keypoint
    /// alignment.
    #[arg(long, num_args = 1..=9, value_delimiter = ',', allow_negative_numbers = true)]
    fixed_homography: Option<Vec<f64>>,
    /// Directory for intermediate images and raw maps.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset root holding `manifest.csv` and one directory per scene.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of `<scene_id>.png` outputs.
    #[arg(long)]
    sr_dir: PathBuf,
    /// Per-scene CSV with a final `mean` row; a JSON twin is written
    /// next to it.
    #[arg(long)]
    out: PathBuf,
    /// Also score scenes flagged at build time.
    #[arg(long)]
    include_rejected: bool,
}

#[derive(Args)]
pub struct CurveArgs {
    #[arg(long)]
    lr: PathBuf,
    #[arg(long)]
    hr: PathBuf,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Ascending, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = curve::default_thresholds())]
    thresholds: Vec<f64>,
    /// Center rectangle `x0,y0,x1,y1` in LR pixels; the centered half
    /// frame by default.
    #[arg(long, num_args = 4, value_delimiter = ',')]
    center: Option<Vec<usize>>,
    /// Additional whitespace-separated table for plotting.
    #[arg(long)]
    dat: Option<PathBuf>,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Directory of scene folders, each with `wide.png` and `tele.png`.
    #[arg(long)]
    input: PathBuf,
    /// Dataset root to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON build parameters; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<MatchMode, String> {
    s.parse().map_err(|e: kefree::Error| e.to_string())
}

/// Exit status of a failed command: 2 for alignment failures, 1 otherwise.
fn failure_code(err: &anyhow::Error) -> u8 {
    let alignment = err
        .chain()
        .filter_map(|e| e.downcast_ref::<kefree::Error>())
        .any(kefree::Error::is_alignment_failure);
    if alignment {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set {n} worker threads: {e}");
        }
    }
    let result = match cli.command {
        Command::Sr(args) => sr::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Curve(args) => curve::run(args),
        Command::BuildDataset(args) => dataset::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}
