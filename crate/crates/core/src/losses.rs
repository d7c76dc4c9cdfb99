//! Set-level triplet loss and per-sample softmax cross-entropy.

use crate::error::{QanError, Result};
use crate::netcore::DenseLayer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub margin: f64,
    pub lambda_class: f64,
    /// `max(0, ·)` on the triplet term. Disabling it reproduces the raw
    /// unbounded form and is only meant for diagnostics.
    pub hinge: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            margin: 0.5,
            lambda_class: 1.0,
            hinge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutcome {
    pub loss: f64,
    /// `|a-p|^2 - |a-n|^2 + margin` before the hinge.
    pub raw: f64,
    pub active: bool,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// Squared-Euclidean triplet loss on pooled set vectors.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64, hinge: bool) -> Result<TripletOutcome> {
    if a.len() != p.len() || a.len() != n.len() {
        return Err(QanError::ShapeMismatch {
            context: "triplet_loss",
            detail: format!("anchor {}, positive {}, negative {}", a.len(), p.len(), n.len()),
        });
    }
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let raw = sq(a, p) - sq(a, n) + margin;
    let active = !hinge || raw > 0.0;
    let zeros = || vec![0.0; a.len()];
    if !active {
        return Ok(TripletOutcome {
            loss: 0.0,
            raw,
            active,
            grad_anchor: zeros(),
            grad_positive: zeros(),
            grad_negative: zeros(),
        });
    }
    Ok(TripletOutcome {
        loss: raw,
        raw,
        active,
        grad_anchor: n.iter().zip(p).map(|(n, p)| 2.0 * (n - p)).collect(),
        grad_positive: a.iter().zip(p).map(|(a, p)| -2.0 * (a - p)).collect(),
        grad_negative: a.iter().zip(n).map(|(a, n)| 2.0 * (a - n)).collect(),
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `classifier · r` against `label`.
///
/// Gradients are multiplied by `weight` before being accumulated into the
/// classifier and returned as `dL/dr`; the returned loss is unweighted.
pub fn softmax_xent(classifier: &mut DenseLayer, r: &[f64], label: usize, weight: f64) -> Result<(f64, Vec<f64>)> {
    let n_classes = classifier.output_size();
    if label >= n_classes {
        return Err(QanError::InvalidLabel { label, n_classes });
    }
    let (logits, cache) = classifier.forward(r)?;
    let loss = xent_from_logits(&logits, label);
    let mut dlogits = softmax(&logits);
    dlogits[label] -= 1.0;
    dlogits.iter_mut().for_each(|d| *d *= weight);
    let dr = classifier.backward(&cache, &dlogits)?;
    Ok((loss, dr))
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn xent_from_logits(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub l_veri: f64,
    /// Mean per-sample classification loss.
    pub l_class: f64,
    pub total: f64,
    pub active: bool,
}

pub fn combine_losses(l_veri: f64, class_losses: &[f64], lambda_class: f64, active: bool) -> LossValue {
    let l_class = if class_losses.is_empty() {
        0.0
    } else {
        class_losses.iter().sum::<f64>() / class_losses.len() as f64
    };
    LossValue {
        l_veri,
        l_class,
        total: l_veri + lambda_class * l_class,
        active,
    }
}
