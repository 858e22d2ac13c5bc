use serde::{Deserialize, Serialize};

use crate::datasets::{DataPoint, GroupedDataset};
use crate::error::{Error, Result};
use crate::models::{backward, init_params, mean_loss, Architecture, LossKind, ModelParams};
use crate::numerics::{random_permutation, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_points: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 16,
            lr: 0.01,
            patience: 5,
            validation_points: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub val_history: Vec<f64>,
}

/// Centralized mini-batch SGD with early stopping on a held-out sample.
pub fn pretrain_centralized(
    dataset: &GroupedDataset,
    arch: &Architecture,
    config: &PretrainConfig,
) -> Result<PretrainOutcome> {
    arch.validate()?;
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidParameter(
            "batch_size and max_epochs must be at least 1".into(),
        ));
    }
    if !(config.lr > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lr must be positive, got {}",
            config.lr
        )));
    }
    if config.validation_points == 0 || config.validation_points >= dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "need between 1 and {} validation points, got {}",
            dataset.len().saturating_sub(1),
            config.validation_points
        )));
    }
    let kind = LossKind::for_task(dataset.task_kind());
    let points = dataset.points();
    let mut rng = RngStream::derive(config.seed, "pretrain", 0, 0);
    let order = random_permutation(points.len(), &mut rng);
    let (val_idx, train_idx) = order.split_at(config.validation_points);
    let val: Vec<&DataPoint> = val_idx.iter().map(|&i| &points[i]).collect();

    let mut w = init_params(arch, &mut rng)?;
    let mut best = w.clone();
    let mut best_loss = mean_loss(&w, arch, val.iter().copied(), kind)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let perm = random_permutation(train_idx.len(), &mut rng);
        for chunk in perm.chunks(config.batch_size) {
            let batch: Vec<&DataPoint> = chunk.iter().map(|&i| &points[train_idx[i]]).collect();
            let (g, l) = backward(&w, arch, &batch, kind)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("pretraining diverged in epoch {epoch}")));
            }
            w.add_scaled(&g, -config.lr)?;
        }
        let v = mean_loss(&w, arch, val.iter().copied(), kind)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("pretraining diverged in epoch {epoch}")));
        }
        history.push(v);
        if v < best_loss {
            best_loss = v;
            best = w.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(PretrainOutcome {
        params: best,
        best_epoch,
        val_history: history,
    })
}
