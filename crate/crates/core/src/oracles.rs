//! Brute-force reference implementations for cross-checking the fast paths.
//!
//! Each function is a literal per-definition loop written independently of
//! the module it checks. Inputs are capped at 64×64 pixels.

use crate::error::{Error, Result};
use crate::losses::{LossKind, ValidSet};
use crate::metrics::{MetricProfile, MetricReport};
use crate::segment::SegmentLabeling;
use crate::types::{DepthMap, RgbImage};

pub const ORACLE_PIXEL_LIMIT: usize = 64 * 64;

fn guard(n: usize) -> Result<()> {
    if n > ORACLE_PIXEL_LIMIT {
        return Err(Error::SizeGuard {
            got: n,
            limit: ORACLE_PIXEL_LIMIT,
        });
    }
    Ok(())
}

/// Mean over all ordered pairs `(i, j)` of the penalty on
/// `log(y_i / y_j) − log(y*_i / y*_j)`.
pub fn oracle_pairwise(vs: &ValidSet, kind: LossKind) -> Result<f64> {
    let n = vs.pred_log.len();
    guard(n)?;
    if n == 0 {
        return Err(Error::EmptyValidSet);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pred_ratio = vs.pred_log[i] - vs.pred_log[j];
            let true_ratio = (vs.target[i] / vs.target[j]).ln();
            let e = pred_ratio - true_ratio;
            sum += match kind {
                LossKind::PairwiseLogL1 => e.abs(),
                LossKind::PairwiseLogL2 => e * e,
                _ => return Err(Error::InvalidArgument(format!("{kind} is not pairwise"))),
            };
        }
    }
    Ok(sum / (n as f64 * n as f64))
}

/// Any of the six losses, evaluated pixel by pixel (pairwise kinds pair by pair).
pub fn oracle_loss(vs: &ValidSet, kind: LossKind) -> Result<f64> {
    if kind.is_pairwise() {
        return oracle_pairwise(vs, kind);
    }
    let n = vs.pred_log.len();
    guard(n)?;
    if n == 0 {
        return Err(Error::EmptyValidSet);
    }
    let mut sum = 0.0;
    for i in 0..n {
        let y = vs.pred_log[i].exp();
        let t = vs.target[i];
        sum += match kind {
            LossKind::L1 => (y - t).abs(),
            LossKind::L2 => (y - t) * (y - t),
            LossKind::LogL1 => (y.ln() - t.ln()).abs(),
            LossKind::LogL2 => (y.ln() - t.ln()).powi(2),
            _ => unreachable!(),
        };
    }
    Ok(sum / n as f64)
}

/// Mean SSIM with a 2-D Gaussian window summed directly at every valid
/// placement. The window is the requested odd size, reduced to the largest
/// odd size not exceeding either image side.
pub fn oracle_ssim(a: &[f64], b: &[f64], height: usize, width: usize, window: usize, sigma: f64, range: f64) -> Result<f64> {
    guard(height * width)?;
    if a.len() != height * width || b.len() != height * width {
        return Err(Error::ShapeMismatch("oracle ssim inputs".into()));
    }
    let mut size = window;
    while size > height || size > width || size % 2 == 0 {
        size -= 1;
    }
    let half = (size / 2) as f64;
    let mut kernel = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (u, row) in kernel.iter_mut().enumerate() {
        for (v, k) in row.iter_mut().enumerate() {
            let r2 = (u as f64 - half).powi(2) + (v as f64 - half).powi(2);
            *k = (-r2 / (2.0 * sigma * sigma)).exp();
            total += *k;
        }
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y in 0..=height - size {
        for x in 0..=width - size {
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..size {
                for v in 0..size {
                    let k = kernel[u][v] / total;
                    let p = (y + u) * width + x + v;
                    ma += k * a[p];
                    mb += k * b[p];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..size {
                for v in 0..size {
                    let k = kernel[u][v] / total;
                    let p = (y + u) * width + x + v;
                    va += k * (a[p] - ma) * (a[p] - ma);
                    vb += k * (b[p] - mb) * (b[p] - mb);
                    cov += k * (a[p] - ma) * (b[p] - mb);
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

pub fn oracle_metrics(pred: &DepthMap, gt: &DepthMap, profile: &MetricProfile) -> Result<MetricReport> {
    let (h, w) = gt.dims();
    guard(h * w)?;
    if pred.dims() != (h, w) {
        return Err(Error::ShapeMismatch("oracle metrics inputs".into()));
    }
    let valid: Vec<(f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| (pred.get(y, x), gt.get(y, x)))
        .filter(|&(_, g)| g > 0.0)
        .collect();
    if valid.is_empty() {
        return Err(Error::EmptyValidSet);
    }
    let n = valid.len() as f64;
    let rmse = (valid.iter().map(|(p, g)| (p - g).powi(2)).sum::<f64>() / n).sqrt();
    let mae = valid.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / n;
    let rel = valid.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / n;
    let thresholds = [1.05, 1.10, 1.25, 1.5625, 1.953125];
    let mut delta = [0.0; 5];
    for (slot, t) in delta.iter_mut().zip(thresholds) {
        let inside = valid
            .iter()
            .filter(|(p, g)| {
                let r = if p / g > g / p { p / g } else { g / p };
                r < t
            })
            .count();
        *slot = inside as f64 / n;
    }
    let inverse: Vec<(f64, f64)> = valid
        .iter()
        .filter(|(p, _)| *p > 0.0)
        .map(|(p, g)| (1000.0 / p, 1000.0 / g))
        .collect();
    let m = inverse.len() as f64;
    let irmse = (!inverse.is_empty()).then(|| (inverse.iter().map(|(p, g)| (p - g).powi(2)).sum::<f64>() / m).sqrt());
    let imae = (!inverse.is_empty()).then(|| inverse.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / m);
    let ssim = oracle_ssim(
        pred.values(),
        gt.values(),
        h,
        w,
        profile.ssim_window,
        profile.ssim_sigma,
        profile.max_depth,
    )?;
    Ok(MetricReport {
        rmse,
        mae,
        rel,
        delta,
        ssim,
        irmse,
        imae,
        valid_pixel_count: valid.len(),
        inverse_excluded_count: valid.len() - inverse.len(),
    })
}

/// Graph-based segmentation without presmoothing, transcribed directly:
/// every pixel carries a component label, merging relabels the whole
/// smaller-id component, and each component tracks its own threshold.
pub fn oracle_segment(rgb: &RgbImage, k: f64, min_size: usize) -> Result<SegmentLabeling> {
    let (h, w) = rgb.dims();
    let n = h * w;
    guard(n)?;
    let color = |i: usize| rgb.get(i / w, i % w);
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (yi, xi) = ((i / w) as isize, (i % w) as isize);
            let (yj, xj) = ((j / w) as isize, (j % w) as isize);
            if (yi - yj).abs() <= 1 && (xi - xj).abs() <= 1 {
                let (p, q) = (color(i), color(j));
                let d2: f64 = (0..3).map(|c| ((p[c] - q[c]) * 255.0).powi(2)).sum();
                edges.push((d2.sqrt(), i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut label: Vec<usize> = (0..n).collect();
    let mut threshold: Vec<f64> = vec![k; n];
    let size_of = |label: &[usize], l: usize| label.iter().filter(|&&m| m == l).count();
    let relabel = |label: &mut Vec<usize>, from: usize, to: usize| {
        for m in label.iter_mut() {
            if *m == from {
                *m = to;
            }
        }
    };
    for &(wgt, i, j) in &edges {
        let (a, b) = (label[i], label[j]);
        if a != b && wgt <= threshold[a] && wgt <= threshold[b] {
            let keep = a.min(b);
            relabel(&mut label, a.max(b), keep);
            threshold[keep] = wgt + k / size_of(&label, keep) as f64;
        }
    }
    for &(_, i, j) in &edges {
        let (a, b) = (label[i], label[j]);
        if a != b && (size_of(&label, a) < min_size || size_of(&label, b) < min_size) {
            relabel(&mut label, a.max(b), a.min(b));
        }
    }
    Ok(SegmentLabeling::from_keys(h, w, &label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_is_zero() {
        let vs = ValidSet::from_residuals(vec![0.3]);
        assert_eq!(oracle_pairwise(&vs, LossKind::PairwiseLogL1).unwrap(), 0.0);
    }

    #[test]
    fn constant_image_is_one_segment() {
        let img = RgbImage::filled(6, 7, [0.2, 0.4, 0.9]);
        assert_eq!(oracle_segment(&img, 300.0, 1).unwrap().segment_count, 1);
    }

    #[test]
    fn size_guard() {
        let d = DepthMap::filled(65, 64, 1.0);
        assert!(matches!(
            oracle_metrics(&d, &d, &MetricProfile::default()),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn worked_metric_example() {
        let p = DepthMap::new(1, 2, vec![1.0, 3.0]).unwrap();
        let g = DepthMap::new(1, 2, vec![1.0, 1.0]).unwrap();
        let r = oracle_metrics(&p, &g, &MetricProfile::default()).unwrap();
        assert_eq!((r.rmse, r.mae, r.delta[2]), (2f64.sqrt(), 1.0, 0.5));
    }
}
