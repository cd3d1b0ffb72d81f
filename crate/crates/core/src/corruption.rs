//! Pseudo-sensor corruption `h = z_n ∘ z_g`: image-guided zeroing of small
//! segments followed by uniform random spattering, plus uniform sparse
//! sampling as the LiDAR-style baseline.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{segment_graph_based, SegmentLabeling};
use crate::types::{check_dims, DepthMap, RgbdSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    /// Segmentation merging scale on `[0, 255]` RGB.
    pub k: f64,
    pub min_size: usize,
    /// Segments with area strictly below this many pixels are zeroed.
    pub area_threshold: usize,
    pub spatter_prob: f64,
    pub rng_seed: u64,
    pub gaussian_presmooth_sigma: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            k: 500.0,
            min_size: 20,
            area_threshold: 1000,
            spatter_prob: 0.02,
            rng_seed: 0,
            gaussian_presmooth_sigma: 0.8,
        }
    }
}

impl CorruptionConfig {
    /// Defaults rescaled from the 320×256 reference resolution to
    /// `height × width`: areas scale with pixel count, `k` with linear size.
    pub fn for_resolution(height: usize, width: usize) -> Self {
        let base = Self::default();
        let scale = (height * width) as f64 / (320.0 * 256.0);
        Self {
            k: base.k * scale.sqrt(),
            area_threshold: (base.area_threshold as f64 * scale).round() as usize,
            min_size: ((base.min_size as f64 * scale).round() as usize).max(1),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.spatter_prob) {
            return Err(Error::InvalidArgument(format!(
                "spatter probability {} outside [0, 1]",
                self.spatter_prob
            )));
        }
        if !(self.k > 0.0) || self.min_size == 0 || self.gaussian_presmooth_sigma < 0.0 {
            return Err(Error::InvalidArgument("require k > 0, min_size ≥ 1, sigma ≥ 0".into()));
        }
        Ok(())
    }
}

/// `z_g`: zero every pixel whose segment area is below `area_threshold`.
pub fn zero_small_segments(depth: &DepthMap, seg: &SegmentLabeling, area_threshold: usize) -> Result<DepthMap> {
    check_dims("segmentation", depth.dims(), (seg.height, seg.width))?;
    Ok(depth.map_indexed(|i, v| if seg.area_of_pixel(i) < area_threshold { 0.0 } else { v }))
}

/// `z_n`: zero each pixel independently with probability `p`.
pub fn spatter(depth: &DepthMap, p: f64, rng: &mut impl Rng) -> Result<DepthMap> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("spatter probability {p} outside [0, 1]")));
    }
    Ok(depth.map_indexed(|_, v| if rng.gen::<f64>() < p { 0.0 } else { v }))
}

/// `z_g` applied to the sample's target: zero segments of the color image
/// with area below the threshold. Deterministic.
pub fn guided_zeroing(sample: &RgbdSample, cfg: &CorruptionConfig) -> Result<DepthMap> {
    cfg.validate()?;
    let gt = sample.gt.as_ref().ok_or(Error::MissingGroundTruth)?;
    if gt.valid_count() == 0 {
        return Err(Error::EmptyValidSet);
    }
    if cfg.area_threshold == 0 {
        return Ok(gt.clone());
    }
    let seg = segment_graph_based(&sample.rgb, cfg.k, cfg.min_size, cfg.gaussian_presmooth_sigma);
    zero_small_segments(gt, &seg, cfg.area_threshold)
}

/// Pseudo-sensor map from the sample's target: `z_n(z_g(gt | rgb))`, drawing
/// spatter from `rng`.
pub fn corrupt_with_rng(sample: &RgbdSample, cfg: &CorruptionConfig, rng: &mut impl Rng) -> Result<DepthMap> {
    spatter(&guided_zeroing(sample, cfg)?, cfg.spatter_prob, rng)
}

/// [`corrupt_with_rng`] seeded from `cfg.rng_seed`.
pub fn corrupt(sample: &RgbdSample, cfg: &CorruptionConfig) -> Result<DepthMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    corrupt_with_rng(sample, cfg, &mut rng)
}

/// Keeps exactly `n_points` valid pixels chosen uniformly without replacement.
pub fn sample_uniform_sparse(depth: &DepthMap, n_points: usize, rng: &mut impl Rng) -> Result<DepthMap> {
    let valid: Vec<usize> = depth
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, _)| i)
        .collect();
    if n_points > valid.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {n_points} points out of {} valid pixels",
            valid.len()
        )));
    }
    let mut keep = vec![false; depth.len()];
    for j in index::sample(rng, valid.len(), n_points) {
        keep[valid[j]] = true;
    }
    Ok(depth.map_indexed(|i, v| if keep[i] { v } else { 0.0 }))
}

/// Fraction of input-valid pixels that the corruption zeroed.
pub fn zeroed_fraction(input: &DepthMap, output: &DepthMap) -> f64 {
    let valid = input.valid_count();
    if valid == 0 {
        return 0.0;
    }
    let lost = input
        .values()
        .iter()
        .zip(output.values())
        .filter(|(a, b)| **a > 0.0 && **b == 0.0)
        .count();
    lost as f64 / valid as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RgbImage;

    fn two_segments() -> SegmentLabeling {
        SegmentLabeling::from_keys(4, 4, &(0..16).map(|i| usize::from(i % 4 >= 2)).collect::<Vec<_>>())
    }

    #[test]
    fn zero_threshold_is_identity() {
        let d = DepthMap::from_fn(4, 4, |y, x| 1.0 + (y * 4 + x) as f64).unwrap();
        assert_eq!(zero_small_segments(&d, &two_segments(), 0).unwrap(), d);
    }

    #[test]
    fn threshold_above_image_area_zeroes_all() {
        let d = DepthMap::filled(4, 4, 2.0);
        assert_eq!(zero_small_segments(&d, &two_segments(), 17).unwrap().valid_count(), 0);
    }

    #[test]
    fn threshold_rule_is_strict() {
        let d = DepthMap::filled(4, 4, 2.0);
        let seg = two_segments();
        assert_eq!(seg.areas, vec![8, 8]);
        assert_eq!(zero_small_segments(&d, &seg, 9).unwrap().valid_count(), 0);
        assert_eq!(zero_small_segments(&d, &seg, 8).unwrap(), d);
    }

    #[test]
    fn mismatched_segmentation_is_an_error() {
        let d = DepthMap::filled(4, 5, 2.0);
        assert!(zero_small_segments(&d, &two_segments(), 1).is_err());
    }

    #[test]
    fn spatter_extremes() {
        let d = DepthMap::filled(8, 8, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(spatter(&d, 0.0, &mut rng).unwrap(), d);
        assert_eq!(spatter(&d, 1.0, &mut rng).unwrap().valid_count(), 0);
        assert!(spatter(&d, 1.5, &mut rng).is_err());
    }

    #[test]
    fn spatter_is_deterministic_per_seed() {
        let d = DepthMap::filled(16, 16, 1.5);
        let a = spatter(&d, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = spatter(&d, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spatter_fraction_concentrates() {
        let d = DepthMap::filled(128, 128, 1.0);
        for seed in 0..20 {
            let out = spatter(&d, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let frac = zeroed_fraction(&d, &out);
            assert!((0.25..=0.35).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn corrupt_requires_gt() {
        let rgb = RgbImage::filled(4, 4, [0.5; 3]);
        let s = RgbdSample::new(rgb, DepthMap::filled(4, 4, 1.0), None).unwrap();
        assert!(matches!(corrupt(&s, &CorruptionConfig::default()), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn corrupt_identity_and_full_spatter() {
        let rgb = RgbImage::from_fn(8, 8, |y, _| [y as f64 / 8.0; 3]).unwrap();
        let gt = DepthMap::from_fn(8, 8, |y, x| 1.0 + (y + x) as f64 * 0.1).unwrap();
        let s = RgbdSample::new(rgb, gt.clone(), Some(gt.clone())).unwrap();
        let cfg = CorruptionConfig {
            area_threshold: 0,
            spatter_prob: 0.0,
            ..Default::default()
        };
        assert_eq!(corrupt(&s, &cfg).unwrap(), gt);
        let cfg = CorruptionConfig {
            spatter_prob: 1.0,
            ..Default::default()
        };
        assert_eq!(corrupt(&s, &cfg).unwrap().valid_count(), 0);
    }

    #[test]
    fn uniform_sparse_counts() {
        let d = DepthMap::filled(256, 320, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = sample_uniform_sparse(&d, 500, &mut rng).unwrap();
        assert_eq!(out.valid_count(), 500);
        assert!(out.values().iter().all(|v| *v == 0.0 || *v == 3.0));
        assert_eq!(sample_uniform_sparse(&d, 0, &mut rng).unwrap().valid_count(), 0);
        let small = DepthMap::new(1, 4, vec![1.0, 0.0, 2.0, 3.0]).unwrap();
        assert_eq!(sample_uniform_sparse(&small, 3, &mut rng).unwrap(), small);
        assert!(sample_uniform_sparse(&small, 4, &mut rng).is_err());
    }
}
