use serde::{Deserialize, Serialize};

use crate::datasets::{Target, TaskKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    L1,
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::RegressionL1 => LossKind::L1,
            TaskKind::RegressionMse => LossKind::Mse,
            TaskKind::ClassificationCe => LossKind::CrossEntropy,
        }
    }
}

fn check(output: &[f64], target: &Target, kind: LossKind) -> Result<()> {
    if output.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Class(c)) if *c < output.len() => Ok(()),
        (LossKind::CrossEntropy, Target::Class(c)) => Err(Error::Shape(format!(
            "class {c} out of range for {} logits",
            output.len()
        ))),
        (LossKind::L1 | LossKind::Mse, Target::Values(t)) if t.len() == output.len() => {
            if t.iter().any(|x| !x.is_finite()) {
                Err(Error::Numeric("non-finite target".into()))
            } else {
                Ok(())
            }
        }
        (LossKind::L1 | LossKind::Mse, Target::Values(t)) => Err(Error::Shape(format!(
            "output width {} vs target width {}",
            output.len(),
            t.len()
        ))),
        _ => Err(Error::InvalidInput(format!("{kind:?} loss does not match target type"))),
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn loss(kind: LossKind, output: &[f64], target: &Target) -> Result<f64> {
    check(output, target, kind)?;
    Ok(match (kind, target) {
        (LossKind::L1, Target::Values(t)) => {
            output.iter().zip(t).map(|(o, y)| (o - y).abs()).sum::<f64>() / t.len() as f64
        }
        (LossKind::Mse, Target::Values(t)) => {
            output.iter().zip(t).map(|(o, y)| (o - y) * (o - y)).sum::<f64>() / t.len() as f64
        }
        (LossKind::CrossEntropy, Target::Class(c)) => log_sum_exp(output) - output[*c],
        _ => unreachable!("checked above"),
    })
}

/// Derivative of [`loss`] with respect to the output vector. For L1 the
/// subgradient at zero residual is taken as zero.
pub fn loss_gradient(kind: LossKind, output: &[f64], target: &Target) -> Result<Vec<f64>> {
    check(output, target, kind)?;
    Ok(match (kind, target) {
        (LossKind::L1, Target::Values(t)) => {
            let m = t.len() as f64;
            output
                .iter()
                .zip(t)
                .map(|(o, y)| {
                    let r = o - y;
                    if r > 0.0 {
                        1.0 / m
                    } else if r < 0.0 {
                        -1.0 / m
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        (LossKind::Mse, Target::Values(t)) => {
            let m = t.len() as f64;
            output.iter().zip(t).map(|(o, y)| 2.0 * (o - y) / m).collect()
        }
        (LossKind::CrossEntropy, Target::Class(c)) => {
            let lse = log_sum_exp(output);
            let mut g: Vec<f64> = output.iter().map(|o| (o - lse).exp()).collect();
            g[*c] -= 1.0;
            g
        }
        _ => unreachable!("checked above"),
    })
}
