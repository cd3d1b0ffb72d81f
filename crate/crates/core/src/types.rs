//! Shared image and depth containers.
//!
//! Depth is stored in meters. A value of exactly `0.0` means "no measurement";
//! NaN is never used as a missing marker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel range values in meters, row-major. Zero marks a missing pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "depth map must be non-empty, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} depth map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "depth map must be non-empty");
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "depth map must be non-empty");
        assert!(value.is_finite() && value >= 0.0);
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Builds a map from a per-pixel function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    /// Returns a copy with pixel `i` replaced by `f(i, value)`. The closure
    /// must keep values finite and nonnegative.
    pub fn map_indexed(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().enumerate().map(|(i, v)| f(i, *v)).collect();
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self {
            height: self.height,
            width: self.width,
            values,
        }
    }

    /// Zeroes every pixel whose flag in `mask` is false.
    pub fn masked(&self, mask: &ValidityMask) -> Result<Self> {
        check_dims("mask", self.dims(), mask.dims())?;
        Ok(self.map_indexed(|i, v| if mask.flags()[i] { v } else { 0.0 }))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: flip_rows(&self.values, self.height, self.width),
        }
    }
}

/// Boolean validity grid. When derived from a depth map, `true` marks pixels
/// with a measurement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    flags: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} flags for a {height}x{width} mask",
                flags.len()
            )));
        }
        Ok(Self {
            height,
            width,
            flags,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    /// `true` when every set flag here is also set in `other`.
    pub fn is_subset_of(&self, other: &ValidityMask) -> bool {
        self.dims() == other.dims()
            && self.flags.iter().zip(&other.flags).all(|(a, b)| !*a || *b)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            flags: flip_rows(&self.flags, self.height, self.width),
        }
    }
}

pub fn mask_from_depth(d: &DepthMap) -> ValidityMask {
    ValidityMask {
        height: d.height,
        width: d.width,
        flags: d.values.iter().map(|v| *v > 0.0).collect(),
    }
}

/// Color image with channels in `[0, 1]`, row-major interleaved RGB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image must be non-empty".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("image values must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            pixels: vec![color; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: flip_rows(&self.pixels, self.height, self.width),
        }
    }
}

/// Network input bundle: color, sensor depth, its validity mask and an
/// optional ground-truth target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbdSample {
    pub rgb: RgbImage,
    pub sensor: DepthMap,
    pub mask: ValidityMask,
    pub gt: Option<DepthMap>,
}

impl RgbdSample {
    /// Builds a sample whose mask is derived from `sensor`.
    pub fn new(rgb: RgbImage, sensor: DepthMap, gt: Option<DepthMap>) -> Result<Self> {
        check_dims("sensor", rgb.dims(), sensor.dims())?;
        if let Some(gt) = &gt {
            check_dims("gt", rgb.dims(), gt.dims())?;
        }
        let mask = mask_from_depth(&sensor);
        Ok(Self {
            rgb,
            sensor,
            mask,
            gt,
        })
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// Replaces the sensor depth, re-deriving the mask.
    pub fn with_sensor(&self, sensor: DepthMap) -> Result<Self> {
        Self::new(self.rgb.clone(), sensor, self.gt.clone())
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            rgb: self.rgb.flip_horizontal(),
            sensor: self.sensor.flip_horizontal(),
            mask: self.mask.flip_horizontal(),
            gt: self.gt.as_ref().map(DepthMap::flip_horizontal),
        }
    }
}

pub(crate) fn check_dims(what: &str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected {}x{}",
            got.0, got.1, expected.0, expected.1
        )));
    }
    Ok(())
}

fn flip_rows<T: Clone>(data: &[T], height: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for y in 0..height {
        out.extend(data[y * width..(y + 1) * width].iter().rev().cloned());
    }
    out
}
