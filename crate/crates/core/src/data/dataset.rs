//! On-disk layout: `rgb/NNNNNN.png`, `depth/NNNNNN.png`, optional
//! `gt/NNNNNN.png`, and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::png::{read_depth_png16, read_rgb_png8, write_depth_png16, write_rgb_png8};
use super::preprocess::DatasetProfile;
use crate::error::{Error, Result};
use crate::types::RgbdSample;

pub const META_FILE: &str = "meta.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub profile: DatasetProfile,
    pub count: usize,
    pub has_gt: bool,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetMeta {
    /// All samples in the training split.
    pub fn all_train(profile: DatasetProfile, count: usize, has_gt: bool) -> Self {
        Self {
            profile,
            count,
            has_gt,
            train: (0..count).collect(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn sample_file(index: usize) -> String {
    format!("{index:06}.png")
}

fn paths(dir: &Path, index: usize) -> (PathBuf, PathBuf, PathBuf) {
    let name = sample_file(index);
    (dir.join("rgb").join(&name), dir.join("depth").join(&name), dir.join("gt").join(&name))
}

/// Writes samples in index order. Ground truth is written only when every
/// sample has it.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[RgbdSample], meta: &DatasetMeta) -> Result<()> {
    let dir = dir.as_ref();
    if meta.count != samples.len() {
        return Err(Error::InvalidArgument(format!(
            "meta count {} does not match {} samples",
            meta.count,
            samples.len()
        )));
    }
    if meta.has_gt && samples.iter().any(|s| s.gt.is_none()) {
        return Err(Error::MissingGroundTruth);
    }
    fs::create_dir_all(dir.join("rgb"))?;
    fs::create_dir_all(dir.join("depth"))?;
    if meta.has_gt {
        fs::create_dir_all(dir.join("gt"))?;
    }
    let scale = meta.profile.depth_png_scale;
    for (i, s) in samples.iter().enumerate() {
        let (rgb, depth, gt) = paths(dir, i);
        write_rgb_png8(&s.rgb, rgb)?;
        write_depth_png16(&s.sensor, depth, scale)?;
        if meta.has_gt {
            write_depth_png16(s.gt.as_ref().expect("checked above"), gt, scale)?;
        }
    }
    write_meta(dir, meta)
}

pub fn write_meta(dir: impl AsRef<Path>, meta: &DatasetMeta) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_meta(dir: impl AsRef<Path>) -> Result<DatasetMeta> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join(META_FILE))?)?)
}

pub fn read_sample(dir: impl AsRef<Path>, meta: &DatasetMeta, index: usize) -> Result<RgbdSample> {
    let (rgb, depth, gt) = paths(dir.as_ref(), index);
    let scale = meta.profile.depth_png_scale;
    let rgb = read_rgb_png8(rgb)?;
    let sensor = read_depth_png16(depth, scale)?;
    let gt = if meta.has_gt { Some(read_depth_png16(gt, scale)?) } else { None };
    RgbdSample::new(rgb, sensor, gt)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(DatasetMeta, Vec<RgbdSample>)> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let samples = (0..meta.count)
        .map(|i| read_sample(dir, &meta, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, samples))
}
