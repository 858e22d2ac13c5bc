use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Rmse,
    Psnr,
    MIoU,
    FMeasure,
    Accuracy,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::Psnr => "psnr",
            MetricKind::MIoU => "miou",
            MetricKind::FMeasure => "f-measure",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// Extra inputs some metrics need.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricParams {
    /// PSNR peak; the largest absolute target when unset.
    pub peak: Option<f64>,
    /// Class count for mIoU; inferred from the data when unset.
    pub num_classes: Option<usize>,
    /// Binarization threshold for F-measure; values at or above are positive.
    pub threshold: f64,
}

fn check(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    Ok(())
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

fn as_class(x: f64) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x.is_finite() {
        Ok(x as usize)
    } else {
        Err(Error::InvalidInput(format!("{x} is not a class index")))
    }
}

/// Evaluates a metric over flattened predictions and targets. Class metrics
/// expect class indices stored as whole numbers.
pub fn task_metric(kind: MetricKind, pred: &[f64], target: &[f64], params: &MetricParams) -> Result<f64> {
    check(pred, target)?;
    match kind {
        MetricKind::Rmse => Ok(mse(pred, target).sqrt()),
        MetricKind::Psnr => {
            let peak = params
                .peak
                .unwrap_or_else(|| target.iter().fold(0.0f64, |m, t| m.max(t.abs())));
            if !(peak > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "PSNR peak must be positive, got {peak}"
                )));
            }
            let e = mse(pred, target);
            if e == 0.0 {
                return Ok(f64::INFINITY);
            }
            Ok(10.0 * (peak * peak / e).log10())
        }
        MetricKind::MIoU => {
            let p: Vec<usize> = pred.iter().map(|&x| as_class(x)).collect::<Result<_>>()?;
            let t: Vec<usize> = target.iter().map(|&x| as_class(x)).collect::<Result<_>>()?;
            let k = params
                .num_classes
                .unwrap_or_else(|| p.iter().chain(&t).max().map_or(0, |m| m + 1));
            mean_iou(&p, &t, k)
        }
        MetricKind::FMeasure => {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (&p, &t) in pred.iter().zip(target) {
                match (p >= params.threshold, t >= params.threshold) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
            let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let recall = if tp + fneg > 0 {
                tp as f64 / (tp + fneg) as f64
            } else {
                0.0
            };
            Ok(f_measure(precision, recall))
        }
        MetricKind::Accuracy => {
            let mut hits = 0usize;
            for (&p, &t) in pred.iter().zip(target) {
                if as_class(p)? == as_class(t)? {
                    hits += 1;
                }
            }
            Ok(hits as f64 / pred.len() as f64)
        }
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean intersection-over-union across classes present in either labeling.
pub fn mean_iou(pred: &[usize], target: &[usize], num_classes: usize) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut inter = vec![0usize; num_classes];
    let mut union = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(target) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidInput(format!("class index beyond {num_classes}")));
        }
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let present: Vec<f64> = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .map(|(&i, &u)| i as f64 / u as f64)
        .collect();
    if present.is_empty() {
        return Err(Error::InvalidInput("no classes present".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}
