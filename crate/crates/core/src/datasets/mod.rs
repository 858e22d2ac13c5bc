//! Datasets: in-memory representation, label preprocessing, the synthetic
//! grouped-task generator and the tabular file formats.

mod io;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_label_probabilities, save_dataset, save_label_probabilities};
pub use synthetic::{generate_synthetic_grouped, SyntheticConfig};

/// Learning objective attached to a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    RegressionL1,
    RegressionMse,
    ClassificationCe,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::RegressionL1 => "regression-l1",
            TaskKind::RegressionMse => "regression-mse",
            TaskKind::ClassificationCe => "classification-ce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regression-l1" => Some(TaskKind::RegressionL1),
            "regression-mse" => Some(TaskKind::RegressionMse),
            "classification-ce" => Some(TaskKind::ClassificationCe),
            _ => None,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::ClassificationCe)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

impl Target {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Target::Values(v) => Some(v),
            Target::Class(_) => None,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Values(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: u64,
    pub features: Vec<f64>,
    pub target: Target,
    pub class_label: Option<usize>,
    /// Generator provenance; never read by training code.
    pub latent_group: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedDataset {
    points: Vec<DataPoint>,
    task_kind: TaskKind,
    num_classes: Option<usize>,
}

impl GroupedDataset {
    /// Validates id uniqueness, uniform dimensions and class bounds.
    pub fn new(points: Vec<DataPoint>, task_kind: TaskKind, num_classes: Option<usize>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset is empty".into()))?;
        let d = first.features.len();
        let m = target_width(&first.target);
        let mut ids = HashSet::with_capacity(points.len());
        for p in &points {
            if !ids.insert(p.id) {
                return Err(Error::InvalidInput(format!("duplicate id {}", p.id)));
            }
            if p.features.len() != d {
                return Err(Error::Shape(format!(
                    "point {} has {} features, expected {d}",
                    p.id,
                    p.features.len()
                )));
            }
            if target_width(&p.target) != m {
                return Err(Error::Shape(format!("point {} has a mismatched target", p.id)));
            }
            if task_kind.is_classification() != matches!(p.target, Target::Class(_)) {
                return Err(Error::InvalidInput(format!(
                    "point {} target does not match task kind {}",
                    p.id,
                    task_kind.as_str()
                )));
            }
        }
        if task_kind.is_classification() {
            let k =
                num_classes.ok_or_else(|| Error::InvalidInput("classification dataset needs num_classes".into()))?;
            for p in &points {
                let label = p.class_label.into_iter().chain(p.target.class());
                if let Some(c) = label.into_iter().find(|&c| c >= k) {
                    return Err(Error::InvalidInput(format!(
                        "point {} has class {c} >= num_classes {k}",
                        p.id
                    )));
                }
            }
        }
        Ok(Self {
            points,
            task_kind,
            num_classes,
        })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.points[0].features.len()
    }

    /// Output width a model needs: target dimension, or class count.
    pub fn output_dim(&self) -> usize {
        match &self.points[0].target {
            Target::Values(v) => v.len(),
            Target::Class(_) => self.num_classes.unwrap_or(0),
        }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.id).collect()
    }

    /// Class labels for every point, or an error if any is missing.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.points
            .iter()
            .map(|p| {
                p.class_label
                    .ok_or_else(|| Error::InvalidInput(format!("point {} has no class label", p.id)))
            })
            .collect()
    }

    pub fn latent_groups(&self) -> Option<Vec<usize>> {
        self.points.iter().map(|p| p.latent_group).collect()
    }

    /// Replaces class labels with the argmax of each probability row.
    pub fn with_label_probabilities(mut self, table: &LabelProbabilityTable) -> Result<Self> {
        if table.ids.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "label table has {} rows for {} points",
                table.ids.len(),
                self.points.len()
            )));
        }
        let by_id: std::collections::HashMap<u64, usize> =
            table.ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        for p in &mut self.points {
            let row = by_id
                .get(&p.id)
                .ok_or_else(|| Error::InvalidInput(format!("label table misses id {}", p.id)))?;
            p.class_label = Some(argmax_label(&table.rows[*row])?);
        }
        self.num_classes = Some(table.width());
        Ok(self)
    }
}

fn target_width(t: &Target) -> usize {
    match t {
        Target::Values(v) => v.len(),
        Target::Class(_) => 1,
    }
}

/// Per-datapoint class-probability rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelProbabilityTable {
    pub ids: Vec<u64>,
    pub rows: Vec<Vec<f64>>,
}

impl LabelProbabilityTable {
    pub fn new(ids: Vec<u64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Shape("ids and rows differ in length".into()));
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput("probabilities must be non-negative".into()));
        }
        Ok(Self { ids, rows })
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_label(beta: &[f64]) -> Result<usize> {
    let (first, rest) = beta
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty probability row".into()))?;
    let mut best = (0, *first);
    for (i, &x) in rest.iter().enumerate() {
        if x > best.1 {
            best = (i + 1, x);
        }
    }
    Ok(best.0)
}

/// Keeps the `k` most populated classes and re-indexes them densely by
/// descending count (ties: lower original index first).
pub fn filter_top_k_classes(dataset: &GroupedDataset, k: usize) -> Result<GroupedDataset> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let labels = dataset.class_labels()?;
    let width = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; width];
    for &c in &labels {
        counts[c] += 1;
    }
    let mut present: Vec<usize> = (0..width).filter(|&c| counts[c] > 0).collect();
    if present.len() < k {
        return Err(Error::InvalidInput(format!(
            "only {} distinct classes present, cannot keep {k}",
            present.len()
        )));
    }
    present.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    let mut remap = vec![None; width];
    for (new, &old) in present.iter().take(k).enumerate() {
        remap[old] = Some(new);
    }
    let points = dataset
        .points
        .iter()
        .zip(&labels)
        .filter_map(|(p, &c)| {
            let new = remap[c]?;
            let mut q = p.clone();
            q.class_label = Some(new);
            if let Target::Class(_) = q.target {
                q.target = Target::Class(new);
            }
            Some(q)
        })
        .collect();
    GroupedDataset::new(points, dataset.task_kind, Some(k))
}
