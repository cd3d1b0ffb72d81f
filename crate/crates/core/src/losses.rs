//! Single-term depth losses over the valid target set.
//!
//! The network predicts log-depth, so the `Log*` losses consume it directly
//! and `L1`/`L2` exponentiate first. Every loss also returns its gradient with
//! respect to the log-depth prediction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::DepthMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    L1,
    L2,
    LogL1,
    LogL2,
    PairwiseLogL1,
    PairwiseLogL2,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::L1,
        LossKind::L2,
        LossKind::LogL1,
        LossKind::LogL2,
        LossKind::PairwiseLogL1,
        LossKind::PairwiseLogL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "L1",
            LossKind::L2 => "L2",
            LossKind::LogL1 => "LOG_L1",
            LossKind::LogL2 => "LOG_L2",
            LossKind::PairwiseLogL1 => "PAIRWISE_LOG_L1",
            LossKind::PairwiseLogL2 => "PAIRWISE_LOG_L2",
        }
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, LossKind::PairwiseLogL1 | LossKind::PairwiseLogL2)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind {s:?}")))
    }
}

/// Pixels with nonzero ground truth and their log residuals
/// `d_i = pred_log_i − log y*_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidSet {
    pub indices: Vec<usize>,
    pub residuals: Vec<f64>,
    /// Predicted log-depth at each index.
    pub pred_log: Vec<f64>,
    /// Target depth at each index.
    pub target: Vec<f64>,
}

impl ValidSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// A valid set built directly from residuals, for losses that only need `d`.
    pub fn from_residuals(residuals: Vec<f64>) -> Self {
        let n = residuals.len();
        Self {
            indices: (0..n).collect(),
            pred_log: residuals.clone(),
            target: vec![1.0; n],
            residuals,
        }
    }
}

pub fn build_valid_set(pred_log: &[f64], gt: &DepthMap) -> Result<ValidSet> {
    if pred_log.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} pixels, target has {}",
            pred_log.len(),
            gt.len()
        )));
    }
    let mut vs = ValidSet {
        indices: Vec::new(),
        residuals: Vec::new(),
        pred_log: Vec::new(),
        target: Vec::new(),
    };
    for (i, (&p, &t)) in pred_log.iter().zip(gt.values()).enumerate() {
        if t > 0.0 {
            vs.indices.push(i);
            vs.residuals.push(p - t.ln());
            vs.pred_log.push(p);
            vs.target.push(t);
        }
    }
    if vs.is_empty() {
        return Err(Error::EmptyValidSet);
    }
    Ok(vs)
}

/// `(1/N²) Σ_{i,j} |d_i − d_j|` via the sorted-order identity
/// `Σ_{i<j} (d_(j) − d_(i)) = Σ_k (2k − N + 1) d_(k)`.
pub fn pairwise_log_l1(vs: &ValidSet) -> f64 {
    let n = vs.residuals.len();
    if n == 0 {
        return 0.0;
    }
    let mut d = vs.residuals.clone();
    d.sort_by(f64::total_cmp);
    let half: f64 = d
        .iter()
        .enumerate()
        .map(|(k, v)| (2.0 * k as f64 - n as f64 + 1.0) * v)
        .sum();
    2.0 * half / (n * n) as f64
}

/// `(1/N²) Σ_{i,j} (d_i − d_j)² = 2 (mean(d²) − mean(d)²)`.
pub fn pairwise_log_l2(vs: &ValidSet) -> f64 {
    let n = vs.residuals.len();
    if n == 0 {
        return 0.0;
    }
    let mean = vs.residuals.iter().sum::<f64>() / n as f64;
    // Centered form of the same identity; avoids cancellation.
    let var = vs.residuals.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    2.0 * var
}

/// Mean per-pixel loss for the non-pairwise kinds.
pub fn pixel_loss(kind: LossKind, vs: &ValidSet) -> Result<f64> {
    let n = vs.len();
    if n == 0 {
        return Err(Error::EmptyValidSet);
    }
    let sum: f64 = match kind {
        LossKind::L1 => vs.pred_log.iter().zip(&vs.target).map(|(p, t)| (p.exp() - t).abs()).sum(),
        LossKind::L2 => vs.pred_log.iter().zip(&vs.target).map(|(p, t)| (p.exp() - t).powi(2)).sum(),
        LossKind::LogL1 => vs.residuals.iter().map(|d| d.abs()).sum(),
        LossKind::LogL2 => vs.residuals.iter().map(|d| d * d).sum(),
        _ => {
            return Err(Error::InvalidArgument(format!("{kind} is not a per-pixel loss")));
        }
    };
    Ok(sum / n as f64)
}

pub fn loss_value(kind: LossKind, vs: &ValidSet) -> Result<f64> {
    if vs.is_empty() {
        return Err(Error::EmptyValidSet);
    }
    match kind {
        LossKind::PairwiseLogL1 => Ok(pairwise_log_l1(vs)),
        LossKind::PairwiseLogL2 => Ok(pairwise_log_l2(vs)),
        _ => pixel_loss(kind, vs),
    }
}

/// Loss value and its gradient with respect to `pred_log` at every entry of
/// the valid set (same order as `vs.indices`).
pub fn loss_and_grad(kind: LossKind, vs: &ValidSet) -> Result<(f64, Vec<f64>)> {
    let value = loss_value(kind, vs)?;
    let n = vs.len() as f64;
    let grad = match kind {
        LossKind::L1 => vs
            .pred_log
            .iter()
            .zip(&vs.target)
            .map(|(p, t)| {
                let y = p.exp();
                sign(y - t) * y / n
            })
            .collect(),
        LossKind::L2 => vs
            .pred_log
            .iter()
            .zip(&vs.target)
            .map(|(p, t)| {
                let y = p.exp();
                2.0 * (y - t) * y / n
            })
            .collect(),
        LossKind::LogL1 => vs.residuals.iter().map(|d| sign(*d) / n).collect(),
        LossKind::LogL2 => vs.residuals.iter().map(|d| 2.0 * d / n).collect(),
        LossKind::PairwiseLogL1 => pairwise_l1_grad(&vs.residuals),
        LossKind::PairwiseLogL2 => {
            let mean = vs.residuals.iter().sum::<f64>() / n;
            vs.residuals.iter().map(|d| 4.0 * (d - mean) / n).collect()
        }
    };
    Ok((value, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∂/∂d_k = (2/N²) (#{j: d_j < d_k} − #{j: d_j > d_k})`, with ties
/// contributing zero.
fn pairwise_l1_grad(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let scale = 2.0 / (n * n) as f64;
    let mut grad = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && d[order[end]].partial_cmp(&d[order[start]]) == Some(Ordering::Equal) {
            end += 1;
        }
        let less = start as f64;
        let greater = (n - end) as f64;
        for &i in &order[start..end] {
            grad[i] = scale * (less - greater);
        }
        start = end;
    }
    grad
}

/// Batch loss: mean of per-sample losses. Returns the value and the gradient
/// with respect to every pixel of every prediction (zero outside the valid sets).
pub fn batch_loss_and_grad(kind: LossKind, pred_log: &[f64], targets: &[&DepthMap]) -> Result<(f64, Vec<f64>)> {
    let b = targets.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let plane = pred_log.len() / b;
    if plane * b != pred_log.len() {
        return Err(Error::ShapeMismatch("prediction does not split into the batch".into()));
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; pred_log.len()];
    for (i, t) in targets.iter().enumerate() {
        let pred = &pred_log[i * plane..(i + 1) * plane];
        let vs = build_valid_set(pred, t)?;
        let (v, g) = loss_and_grad(kind, &vs)?;
        total += v;
        for (&idx, gv) in vs.indices.iter().zip(g) {
            grad[i * plane + idx] = gv / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}
