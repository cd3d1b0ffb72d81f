//! 16-bit depth PNGs (`depth = raw * scale`, raw 0 is missing) and 8-bit RGB PNGs.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::types::{DepthMap, RgbImage};

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::ImageFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_depth_png16(path: impl AsRef<Path>, scale: f64) -> Result<DepthMap> {
    let path = path.as_ref();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("depth scale must be positive, got {scale}")));
    }
    match image::open(path)? {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let values = buf.into_raw().into_iter().map(|raw| raw as f64 * scale).collect();
            DepthMap::new(h as usize, w as usize, values)
        }
        other => Err(format_error(
            path,
            format!("expected single-channel 16-bit PNG, found {:?}", other.color()),
        )),
    }
}

/// Stores `round(depth / scale)`; values beyond the 16-bit range are an error.
pub fn write_depth_png16(depth: &DepthMap, path: impl AsRef<Path>, scale: f64) -> Result<()> {
    let path = path.as_ref();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("depth scale must be positive, got {scale}")));
    }
    let raw = depth
        .values()
        .iter()
        .map(|&v| {
            let r = (v / scale).round();
            if r > u16::MAX as f64 {
                Err(format_error(path, format!("depth {v} m overflows 16 bits at scale {scale}")))
            } else {
                Ok(r as u16)
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .ok_or_else(|| format_error(path, "buffer size mismatch"))?;
    buf.save(path)?;
    Ok(())
}

/// Channel values map to `[0, 1]`. Grayscale and alpha inputs are converted.
pub fn read_rgb_png8(path: impl AsRef<Path>) -> Result<RgbImage> {
    let buf = image::open(path.as_ref())?.into_rgb8();
    let (w, h) = buf.dimensions();
    let pixels = buf
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    RgbImage::new(h as usize, w as usize, pixels)
}

pub fn write_rgb_png8(rgb: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = rgb
        .pixels()
        .iter()
        .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(rgb.width() as u32, rgb.height() as u32, raw)
        .ok_or_else(|| format_error(path, "buffer size mismatch"))?;
    buf.save(path)?;
    Ok(())
}
