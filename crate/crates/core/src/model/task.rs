//! Task losses, metrics and the anomaly threshold rule.

use crate::error::{CabError, Result};
use crate::numerics::Matrix;
use crate::synthdata::Task;

/// Mean squared error over the entries where `weights` is 1 (all entries
/// when `weights` is `None`), with its gradient w.r.t. `pred`.
pub fn masked_mse(pred: &Matrix, target: &Matrix, weights: Option<&Matrix>) -> Result<(f64, Matrix)> {
    pred.ensure_same_shape(target, "mse(pred, target)")?;
    if let Some(w) = weights {
        pred.ensure_same_shape(w, "mse(pred, weights)")?;
    }
    let count = weights.map_or(pred.len() as f64, |w| w.sum());
    if count <= 0.0 {
        return Err(CabError::DegenerateTask("loss mask selects no entries".into()));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for (i, g) in grad.as_mut_slice().iter_mut().enumerate() {
        let w = weights.map_or(1.0, |w| w.as_slice()[i]);
        let diff = pred.as_slice()[i] - target.as_slice()[i];
        loss += w * diff * diff;
        *g = 2.0 * w * diff / count;
    }
    Ok((loss / count, grad))
}

/// Cross-entropy of `logits` against class `label`, with its gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(CabError::DegenerateTask(format!(
            "label {label} outside 0..{}",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// What the loss is computed against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Series(&'a Matrix),
    Class(usize),
}

/// Loss of a model output for `task`. For imputation `mask` uses 1 for
/// observed entries and the loss covers the hidden ones only.
pub fn task_loss(output: &Matrix, target: Target, task: Task, mask: Option<&Matrix>) -> Result<f64> {
    match (task, target) {
        (Task::Imputation, Target::Series(t)) => {
            let mask = mask.ok_or_else(|| CabError::DegenerateTask("imputation needs a mask".into()))?;
            Ok(masked_mse(output, t, Some(&hidden_weights(mask)))?.0)
        }
        (Task::Anomaly, Target::Series(t)) => Ok(masked_mse(output, t, None)?.0),
        (Task::Classification, Target::Class(label)) => Ok(cross_entropy(output.row(0), label)?.0),
        (task, _) => Err(CabError::DegenerateTask(format!("target kind does not match task {task}"))),
    }
}

/// 1 where the mask hides an entry.
pub fn hidden_weights(mask: &Matrix) -> Matrix {
    mask.map(|m| if m == 0.0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1. When nothing is flagged precision is 1 if
/// nothing was there to find and 0 otherwise; recall is treated the same way
/// when the truth is empty. F1 is 0 when precision and recall are both 0.
pub fn detection_scores(predicted: &[bool], truth: &[bool]) -> DetectionScores {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        if fn_ == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        if fp == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionScores {
        precision,
        recall,
        f1,
    }
}

/// Linearly interpolated quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CabError::DegenerateTask("quantile of no values".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(CabError::Param(format!("quantile must lie in [0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyDecision {
    pub threshold: f64,
    /// All reference errors were equal, so the threshold separates nothing.
    pub degenerate: bool,
    pub labels: Vec<bool>,
    pub scores: DetectionScores,
}

/// Flags steps whose error exceeds the `threshold_quantile` quantile of
/// `reference` (the validation errors; `errors` itself when `None`) and
/// scores the flags against `truth`.
pub fn anomaly_decision(
    errors: &[f64],
    truth: &[bool],
    threshold_quantile: f64,
    reference: Option<&[f64]>,
) -> Result<AnomalyDecision> {
    if errors.len() != truth.len() {
        return Err(CabError::Shape {
            op: "anomaly_decision",
            left: (errors.len(), 1),
            right: (truth.len(), 1),
        });
    }
    if !(threshold_quantile > 0.0 && threshold_quantile < 1.0) {
        return Err(CabError::Param(format!(
            "threshold quantile must lie in (0, 1), got {threshold_quantile}"
        )));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(CabError::NonFinite("reconstruction error".into()));
    }
    let reference = reference.unwrap_or(errors);
    let threshold = quantile(reference, threshold_quantile)?;
    let degenerate = reference.iter().all(|&e| e == reference[0]);
    let labels: Vec<bool> = errors.iter().map(|&e| e > threshold).collect();
    let scores = detection_scores(&labels, truth);
    Ok(AnomalyDecision {
        threshold,
        degenerate,
        labels,
        scores,
    })
}
