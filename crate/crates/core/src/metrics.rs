//! Depth-completion metrics over pixels with valid ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_dims, DepthMap};

/// δ thresholds, ascending.
pub const DELTA_THRESHOLDS: [f64; 5] = [1.05, 1.10, 1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricProfile {
    /// SSIM dynamic range in meters.
    pub max_depth: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
}

impl Default for MetricProfile {
    fn default() -> Self {
        Self {
            max_depth: 10.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    /// Fractions for [`DELTA_THRESHOLDS`], same order.
    pub delta: [f64; 5],
    pub ssim: f64,
    /// Inverse-depth RMSE in 1/km; `None` when no valid pixel has `pred > 0`.
    pub irmse: Option<f64>,
    pub imae: Option<f64>,
    pub valid_pixel_count: usize,
    /// Valid pixels left out of the inverse metrics because `pred <= 0`.
    pub inverse_excluded_count: usize,
}

impl MetricReport {
    /// Per-field mean over reports. Inverse metrics average over the reports
    /// that have them.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("cannot average zero reports".into()));
        }
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
            let vals: Vec<f64> = reports.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Ok(MetricReport {
            rmse: avg(&|r| r.rmse),
            mae: avg(&|r| r.mae),
            rel: avg(&|r| r.rel),
            delta: std::array::from_fn(|i| avg(&|r| r.delta[i])),
            ssim: avg(&|r| r.ssim),
            irmse: avg_opt(&|r| r.irmse),
            imae: avg_opt(&|r| r.imae),
            valid_pixel_count: reports.iter().map(|r| r.valid_pixel_count).sum(),
            inverse_excluded_count: reports.iter().map(|r| r.inverse_excluded_count).sum(),
        })
    }
}

pub fn evaluate(pred: &DepthMap, gt: &DepthMap, profile: &MetricProfile) -> Result<MetricReport> {
    check_dims("prediction", gt.dims(), pred.dims())?;
    let mut n = 0usize;
    let (mut se, mut ae, mut rel) = (0.0, 0.0, 0.0);
    let mut hits = [0usize; 5];
    let (mut ise, mut iae, mut inv_n) = (0.0, 0.0, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if g <= 0.0 {
            continue;
        }
        n += 1;
        let d = p - g;
        se += d * d;
        ae += d.abs();
        rel += d.abs() / g;
        let ratio = (p / g).max(g / p);
        for (h, t) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
            *h += usize::from(ratio < t);
        }
        if p > 0.0 {
            let di = 1000.0 / p - 1000.0 / g;
            ise += di * di;
            iae += di.abs();
            inv_n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyValidSet);
    }
    let nf = n as f64;
    let ssim = ssim(pred, gt, profile.ssim_window, profile.ssim_sigma, profile.max_depth)?;
    Ok(MetricReport {
        rmse: (se / nf).sqrt(),
        mae: ae / nf,
        rel: rel / nf,
        delta: hits.map(|h| h as f64 / nf),
        ssim,
        irmse: (inv_n > 0).then(|| (ise / inv_n as f64).sqrt()),
        imae: (inv_n > 0).then(|| iae / inv_n as f64),
        valid_pixel_count: n,
        inverse_excluded_count: n - inv_n,
    })
}

/// Normalized 1-D Gaussian taps of odd length `size`.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Window actually used on an `height × width` map: the requested odd size,
/// shrunk to the largest odd size that fits.
pub fn effective_window(window: usize, height: usize, width: usize) -> usize {
    let fit = height.min(width);
    let w = window.min(fit).max(1);
    if w % 2 == 0 {
        w - 1
    } else {
        w
    }
}

/// SSIM of depth maps. Missing pixels enter as 0 in both maps.
pub fn ssim(pred: &DepthMap, gt: &DepthMap, window: usize, sigma: f64, dynamic_range: f64) -> Result<f64> {
    check_dims("prediction", gt.dims(), pred.dims())?;
    let (h, w) = gt.dims();
    ssim_values(pred.values(), gt.values(), h, w, window, sigma, dynamic_range)
}

/// Mean local SSIM over all fully-contained Gaussian windows of arbitrary
/// real-valued maps.
pub fn ssim_values(
    a: &[f64],
    b: &[f64],
    height: usize,
    width: usize,
    window: usize,
    sigma: f64,
    dynamic_range: f64,
) -> Result<f64> {
    if a.len() != height * width || b.len() != height * width || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "ssim inputs of length {} and {} for {height}x{width}",
            a.len(),
            b.len()
        )));
    }
    if !(sigma > 0.0 && dynamic_range > 0.0) {
        return Err(Error::InvalidArgument("ssim needs sigma > 0 and dynamic_range > 0".into()));
    }
    let size = effective_window(window, height, width);
    let taps = gaussian_taps(size, sigma);
    let (oh, ow) = (height - size + 1, width - size + 1);
    // Separable 'valid' filtering: rows first, then columns.
    let filter = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut rows = vec![0.0; height * ow];
        for y in 0..height {
            for x in 0..ow {
                rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * f(y * width + x + k)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
            }
        }
        out
    };
    let mu_a = filter(&|i| a[i]);
    let mu_b = filter(&|i| b[i]);
    let aa = filter(&|i| a[i] * a[i]);
    let bb = filter(&|i| b[i] * b[i]);
    let ab = filter(&|i| a[i] * b[i]);
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}
