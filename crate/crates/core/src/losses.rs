//! Composite objective: cross-entropy, triplet and anchor-positive terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the true-class probability inside the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Triplet margin α.
    pub margin: f64,
    /// Weight λ1 of the triplet term.
    pub lambda_triplet: f64,
    /// Weight λ2 of the anchor-positive term.
    pub lambda_ap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lambda_triplet: 1.0,
            lambda_ap: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.lambda_triplet >= 0.0 && self.lambda_ap >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embedding dims {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `max(‖a − p‖ − ‖a − n‖ + α, 0)`.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    check_dims(anchor, positive)?;
    check_dims(anchor, negative)?;
    Ok((distance(anchor, positive) - distance(anchor, negative) + margin).max(0.0))
}

/// `‖a − p‖`.
pub fn anchor_positive_loss(anchor: &[f64], positive: &[f64]) -> Result<f64> {
    check_dims(anchor, positive)?;
    Ok(distance(anchor, positive))
}

/// `−ln p[y]`, with `p[y]` floored at [`LOG_CLAMP`].
pub fn classification_loss(y: usize, probs: &[f64]) -> Result<f64> {
    let py = *probs
        .get(y)
        .ok_or_else(|| Error::InvalidArgument(format!("label {y} out of range for {} classes", probs.len())))?;
    Ok(-py.max(LOG_CLAMP).ln())
}

/// `L_cls + λ1·L_tri + λ2·L_ap`.
pub fn total_loss(cls: f64, tri: f64, ap: f64, lambda_triplet: f64, lambda_ap: f64) -> f64 {
    cls + lambda_triplet * tri + lambda_ap * ap
}

/// Gradients of the triplet loss w.r.t. (anchor, positive, negative).
/// Zero when the hinge is inactive or sits exactly on its kink; a zero
/// distance contributes a zero subgradient.
pub fn triplet_grad(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> [Vec<f64>; 3] {
    let d = anchor.len();
    let mut ga = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gn = vec![0.0; d];
    let dap = distance(anchor, positive);
    let dan = distance(anchor, negative);
    if dap - dan + margin > 0.0 {
        for i in 0..d {
            if dap > 0.0 {
                let u = (anchor[i] - positive[i]) / dap;
                ga[i] += u;
                gp[i] -= u;
            }
            if dan > 0.0 {
                let u = (anchor[i] - negative[i]) / dan;
                ga[i] -= u;
                gn[i] += u;
            }
        }
    }
    [ga, gp, gn]
}

/// Gradients of `‖a − p‖` w.r.t. (anchor, positive).
pub fn anchor_positive_grad(anchor: &[f64], positive: &[f64]) -> [Vec<f64>; 2] {
    let dap = distance(anchor, positive);
    if dap == 0.0 {
        return [vec![0.0; anchor.len()], vec![0.0; anchor.len()]];
    }
    let ga: Vec<f64> = anchor.iter().zip(positive).map(|(a, p)| (a - p) / dap).collect();
    let gp = ga.iter().map(|g| -g).collect();
    [ga, gp]
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Cross-entropy on logits: returns `(loss, ∂loss/∂logits)`.
pub fn cross_entropy_with_logits(y: usize, logits: &[f64]) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    if p[y] < LOG_CLAMP {
        // clamped region: loss is constant
        return (-LOG_CLAMP.ln(), vec![0.0; logits.len()]);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[y];
    let grad = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| pk - if k == y { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}
