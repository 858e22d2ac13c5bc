use serde::{Deserialize, Serialize};

use super::{DataPoint, GroupedDataset, Target, TaskKind};
use crate::error::{Error, Result};
use crate::numerics::{sq_dist, standard_normal, RngStream};

/// Parameters of the synthetic grouped task.
///
/// Each point belongs to a hidden group `g`. Features scatter around a group
/// center, and the regression target is a group-specific affine map of the
/// features. The class label equals the group with probability
/// `label_correlation`, otherwise it is uniform, so `0.0` gives labels that
/// carry no information about the learning target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub groups: usize,
    pub feature_dim: usize,
    pub target_dim: usize,
    pub points: usize,
    pub feature_noise: f64,
    pub target_noise: f64,
    /// Standard deviation of the group-center prior.
    pub center_scale: f64,
    pub label_correlation: f64,
    /// Number of label classes; defaults to `groups`.
    pub num_classes: Option<usize>,
    pub task: TaskKind,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            groups: 16,
            feature_dim: 8,
            target_dim: 4,
            points: 8000,
            feature_noise: 1.0,
            target_noise: 0.1,
            center_scale: 3.0,
            label_correlation: 0.0,
            num_classes: None,
            task: TaskKind::RegressionMse,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.groups < 2 {
            return bad(format!("need at least 2 groups, got {}", self.groups));
        }
        if self.points < self.groups {
            return bad(format!("{} points cannot cover {} groups", self.points, self.groups));
        }
        if self.feature_dim == 0 || (self.target_dim == 0 && !self.task.is_classification()) {
            return bad("feature and target dimensions must be positive".into());
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("target_noise", self.target_noise),
            ("center_scale", self.center_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.label_correlation) {
            return bad(format!(
                "label_correlation must lie in [0,1], got {}",
                self.label_correlation
            ));
        }
        if self.num_classes == Some(0) {
            return bad("num_classes must be positive".into());
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.num_classes.unwrap_or(self.groups)
    }
}

struct GroupModel {
    center: Vec<f64>,
    weights: Vec<f64>, // target_dim x feature_dim, row-major
    bias: Vec<f64>,
}

const CENTER_ATTEMPTS: usize = 10_000;

fn draw_groups(cfg: &SyntheticConfig, rng: &mut RngStream) -> Result<Vec<GroupModel>> {
    let d = cfg.feature_dim;
    let m = cfg.target_dim;
    let min_sq = (4.0 * cfg.feature_noise).powi(2);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.groups);
    while centers.len() < cfg.groups {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS {
            let c: Vec<f64> = (0..d).map(|_| cfg.center_scale * standard_normal(rng)).collect();
            let far = centers.iter().all(|o| {
                let dist = sq_dist(o, &c);
                dist >= min_sq && dist > 0.0
            });
            if far {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidParameter(format!(
                "could not place {} centers {}x the feature noise apart; raise center_scale",
                cfg.groups, 4
            )));
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    Ok(centers
        .into_iter()
        .map(|center| GroupModel {
            center,
            weights: (0..m * d).map(|_| scale * standard_normal(rng)).collect(),
            bias: (0..m).map(|_| standard_normal(rng)).collect(),
        })
        .collect())
}

pub fn generate_synthetic_grouped(cfg: &SyntheticConfig, rng: &mut RngStream) -> Result<GroupedDataset> {
    cfg.validate()?;
    let groups = draw_groups(cfg, rng)?;
    let classes = cfg.classes();
    let d = cfg.feature_dim;
    let points = (0..cfg.points)
        .map(|i| {
            let g = rng.below(cfg.groups);
            let model = &groups[g];
            let features: Vec<f64> = model
                .center
                .iter()
                .map(|mu| mu + cfg.feature_noise * standard_normal(rng))
                .collect();
            let class_label = if rng.uniform() < cfg.label_correlation {
                g % classes
            } else {
                rng.below(classes)
            };
            let target = if cfg.task.is_classification() {
                Target::Class(class_label)
            } else {
                Target::Values(
                    model
                        .weights
                        .chunks_exact(d)
                        .zip(&model.bias)
                        .map(|(w, b)| {
                            let clean: f64 = w.iter().zip(&features).map(|(a, x)| a * x).sum::<f64>() + b;
                            clean + cfg.target_noise * standard_normal(rng)
                        })
                        .collect(),
                )
            };
            DataPoint {
                id: i as u64,
                features,
                target,
                class_label: Some(class_label),
                latent_group: Some(g),
            }
        })
        .collect();
    GroupedDataset::new(points, cfg.task, Some(classes))
}
