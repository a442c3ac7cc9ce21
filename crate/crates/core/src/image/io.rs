use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageFormat};

use super::Image;
use crate::error::{Error, Result};

/// Reads an 8/16-bit gray or RGB PNG, or a binary PNM, into `[0, 1]` planes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|source| match source {
        image::ImageError::Unsupported(e) => Error::UnsupportedFormat {
            path: path.to_owned(),
            detail: e.to_string(),
        },
        source => Error::Read {
            path: path.to_owned(),
            source,
        },
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => planar(w, h, 1, buf.as_raw(), 255.0),
        DynamicImage::ImageRgb8(buf) => planar(w, h, 3, buf.as_raw(), 255.0),
        DynamicImage::ImageLuma16(buf) => planar(w, h, 1, buf.as_raw(), 65535.0),
        DynamicImage::ImageRgb16(buf) => planar(w, h, 3, buf.as_raw(), 65535.0),
        other => Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            detail: format!("color type {:?}", other.color()),
        }),
    }
}

fn planar<T: Copy + Into<f64>>(
    w: usize,
    h: usize,
    channels: usize,
    raw: &[T],
    max: f64,
) -> Result<Image> {
    let planes = (0..channels)
        .map(|c| {
            raw.iter()
                .skip(c)
                .step_by(channels)
                .map(|&v| (v.into() / max) as f32)
                .collect()
        })
        .collect();
    Image::from_planes(w, h, planes)
}

/// Quantizes a sample to an 8-bit code: clamp to `[0, 1]`, then round half up.
#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit PNG (gray or RGB depending on the channel count).
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = image.width() * image.height();
    let channels = image.channels();
    let mut buf = vec![0u8; n * channels];
    for (c, plane) in image.planes().iter().enumerate() {
        for (i, &v) in plane.iter().enumerate() {
            buf[i * channels + c] = quantize_u8(v);
        }
    }
    let color = if channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &buf,
        image.width() as u32,
        image.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|source| Error::Write {
        path: path.to_owned(),
        source,
    })
}
