use rayon::prelude::*;

use super::Image;

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with a `ceil(3 sigma)` radius and replicated edges.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel = gaussian_kernel(sigma, radius);
    let (w, h) = image.size();
    let planes = image
        .planes()
        .iter()
        .map(|src| {
            let src: Vec<f64> = src.iter().map(|&v| v as f64).collect();
            let tmp = convolve_rows(&src, w, h, &kernel);
            let out = convolve_cols(&tmp, w, h, &kernel);
            out.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    Image::from_planes(w, h, planes).expect("shape preserved")
}

fn convolve_rows(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0f64; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * line[xx];
            }
            *o = acc;
        }
    });
    out
}

fn convolve_cols(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0f64; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, kv) in kernel.iter().enumerate() {
            let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let line = &src[yy * w..(yy + 1) * w];
            for (o, s) in row.iter_mut().zip(line) {
                *o += kv * s;
            }
        }
    });
    out
}

/// Mean over a `(2 radius + 1)^2` window with replicated edges.
pub fn box_mean(src: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let n = 2 * radius + 1;
    let kernel = vec![1.0 / n as f64; n];
    let tmp = convolve_rows(src, w, h, &kernel);
    convolve_cols(&tmp, w, h, &kernel)
}
