//! Corpus conventions: border crops, resizing and depth-PNG scales.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DepthMap, RgbImage, RgbdSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crop {
    None,
    /// Pixels removed from each side.
    Borders {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
    /// Window of fixed size touching the bottom edge, centered horizontally.
    BottomCenter { height: usize, width: usize },
}

impl Crop {
    /// `(y0, x0, height, width)` of the retained window.
    pub fn window(&self, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let undersized = || {
            Error::InvalidArgument(format!("{height}x{width} image is smaller than crop {self:?}"))
        };
        match *self {
            Crop::None => Ok((0, 0, height, width)),
            Crop::Borders {
                top,
                bottom,
                left,
                right,
            } => {
                if top + bottom >= height || left + right >= width {
                    return Err(undersized());
                }
                Ok((top, left, height - top - bottom, width - left - right))
            }
            Crop::BottomCenter { height: ch, width: cw } => {
                if ch > height || cw > width || ch == 0 || cw == 0 {
                    return Err(undersized());
                }
                Ok((height - ch, (width - cw) / 2, ch, cw))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    /// Meters per raw PNG unit.
    pub depth_png_scale: f64,
    pub crop: Crop,
    /// `(height, width)` after cropping.
    pub resize_to: Option<(usize, usize)>,
    pub flip_augment: bool,
}

impl Default for DatasetProfile {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl DatasetProfile {
    pub const NAMES: [&'static str; 5] = ["synthetic", "matterport", "nyu", "scannet", "kitti"];

    pub fn synthetic() -> Self {
        Self {
            name: "synthetic".into(),
            depth_png_scale: 1.0 / 4000.0,
            crop: Crop::None,
            resize_to: None,
            flip_augment: true,
        }
    }

    pub fn matterport() -> Self {
        Self {
            name: "matterport".into(),
            resize_to: Some((256, 320)),
            ..Self::synthetic()
        }
    }

    pub fn nyu() -> Self {
        Self {
            name: "nyu".into(),
            depth_png_scale: 1.0 / 1000.0,
            crop: Crop::Borders {
                top: 45,
                bottom: 15,
                left: 45,
                right: 40,
            },
            resize_to: Some((256, 320)),
            flip_augment: true,
        }
    }

    pub fn scannet() -> Self {
        Self {
            name: "scannet".into(),
            depth_png_scale: 1.0 / 1000.0,
            crop: Crop::None,
            resize_to: Some((256, 320)),
            flip_augment: true,
        }
    }

    pub fn kitti() -> Self {
        Self {
            name: "kitti".into(),
            depth_png_scale: 1.0 / 256.0,
            crop: Crop::BottomCenter {
                height: 256,
                width: 1216,
            },
            resize_to: None,
            flip_augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_png_scale > 0.0 && self.depth_png_scale.is_finite()) {
            return Err(Error::InvalidArgument("depth_png_scale must be positive".into()));
        }
        if let Some((h, w)) = self.resize_to {
            if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
                return Err(Error::IndivisibleSize {
                    height: h,
                    width: w,
                    factor: 32,
                });
            }
        }
        Ok(())
    }
}

impl FromStr for DatasetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "synthetic" => Ok(Self::synthetic()),
            "matterport" => Ok(Self::matterport()),
            "nyu" => Ok(Self::nyu()),
            "scannet" => Ok(Self::scannet()),
            "kitti" => Ok(Self::kitti()),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile {other:?}; expected one of {:?}",
                Self::NAMES
            ))),
        }
    }
}

fn crop_depth(d: &DepthMap, (y0, x0, h, w): (usize, usize, usize, usize)) -> Result<DepthMap> {
    DepthMap::from_fn(h, w, |y, x| d.get(y0 + y, x0 + x))
}

fn crop_rgb(img: &RgbImage, (y0, x0, h, w): (usize, usize, usize, usize)) -> Result<RgbImage> {
    RgbImage::from_fn(h, w, |y, x| img.get(y0 + y, x0 + x))
}

/// Nearest-neighbor resize: output pixel `(y, x)` copies input
/// `(floor(y * H / h), floor(x * W / w))`. Never invents values.
pub fn resize_depth_nearest(d: &DepthMap, height: usize, width: usize) -> Result<DepthMap> {
    let (h, w) = d.dims();
    DepthMap::from_fn(height, width, |y, x| d.get(y * h / height, x * w / width))
}

/// Bilinear resize with half-pixel centers and clamped borders.
pub fn resize_rgb_bilinear(img: &RgbImage, height: usize, width: usize) -> Result<RgbImage> {
    let (h, w) = img.dims();
    let taps = |dst: usize, out: usize, inp: usize| {
        let s = ((dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f64)
    };
    RgbImage::from_fn(height, width, |y, x| {
        let (y0, y1, fy) = taps(y, height, h);
        let (x0, x1, fx) = taps(x, width, w);
        let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
        std::array::from_fn(|k| {
            (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k])
        })
    })
}

/// Crop, then optionally resize. Color is resized bilinearly; depth maps
/// (sensor and ground truth) use nearest neighbor and the mask is rederived.
pub fn preprocess(sample: &RgbdSample, profile: &DatasetProfile) -> Result<RgbdSample> {
    let (h, w) = sample.dims();
    let window = profile.crop.window(h, w)?;
    let mut rgb = crop_rgb(&sample.rgb, window)?;
    let mut sensor = crop_depth(&sample.sensor, window)?;
    let mut gt = sample.gt.as_ref().map(|g| crop_depth(g, window)).transpose()?;
    if let Some((rh, rw)) = profile.resize_to {
        if (rh, rw) != rgb.dims() {
            rgb = resize_rgb_bilinear(&rgb, rh, rw)?;
            sensor = resize_depth_nearest(&sensor, rh, rw)?;
            gt = gt.map(|g| resize_depth_nearest(&g, rh, rw)).transpose()?;
        }
    }
    RgbdSample::new(rgb, sensor, gt)
}
