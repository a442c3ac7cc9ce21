use std::fs;

use anyhow::{bail, Context, Result};
use kefree::geometry::CenterRect;
use kefree::image::load_image;
use kefree::kfmatch::{matching_curve, CurveVariant};

use crate::CurveArgs;

/// 0, 0.05, …, 1.
pub fn default_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

pub fn run(args: CurveArgs) -> Result<()> {
    let lr = load_image(&args.lr)?;
    let hr = load_image(&args.hr)?;
    let (w, h) = lr.size();
    if hr.size() != (2 * w, 2 * h) {
        bail!(
            "HR {} is {}x{}, expected twice the {w}x{h} LR",
            args.hr.display(),
            hr.width(),
            hr.height()
        );
    }
    let center = match args.center.as_deref() {
        Some(&[x0, y0, x1, y1]) => CenterRect::new(x0, y0, x1, y1, w, h)?,
        Some(_) => bail!("--center takes x0,y0,x1,y1"),
        None => CenterRect::centered(w, h, 2)?,
    };
    let curves = [CurveVariant::LrMatchHrEval, CurveVariant::HrMatchHrEval]
        .map(|variant| matching_curve(&lr, &hr, center, &args.thresholds, variant));
    let [lr_match, hr_match] = curves;
    let (lr_match, hr_match) = (lr_match?, hr_match?);

    let mut csv = csv::Writer::from_path(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    csv.write_record(["threshold", "hit_rate_lr_match", "hit_rate_hr_match"])?;
    for (i, t) in args.thresholds.iter().enumerate() {
        csv.write_record([t.to_string(), lr_match.hit_rates[i].to_string(), hr_match.hit_rates[i].to_string()])?;
    }
    csv.flush()?;

    if let Some(path) = &args.dat {
        let mut text = String::from("# threshold hit_rate_lr_match hit_rate_hr_match\n");
        for (i, t) in args.thresholds.iter().enumerate() {
            text.push_str(&format!("{t} {} {}\n", lr_match.hit_rates[i], hr_match.hit_rates[i]));
        }
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    eprintln!("{} thresholds, center {center}", args.thresholds.len());
    Ok(())
}
