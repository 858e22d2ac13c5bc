use std::collections::HashSet;
use std::path::Path;

use super::{DataPoint, GroupedDataset, LabelProbabilityTable, Target, TaskKind};
use crate::error::{Error, Result};
use crate::tabular::{fmt_f64, numbered, write_atomic, Table, Writer};

fn dataset_header(d: usize, m: usize) -> Vec<String> {
    std::iter::once("id".to_string())
        .chain(numbered("feat", d))
        .chain(numbered("tgt", m))
        .chain(["class".to_string(), "group".to_string()])
        .collect()
}

fn opt(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Serializes a dataset as `id,feat*,tgt*,class,group` with a `# task=...`
/// metadata line. Classification targets occupy a single `tgt0` column.
pub fn dataset_to_string(ds: &GroupedDataset) -> String {
    let d = ds.feature_dim();
    let m = match &ds.points()[0].target {
        Target::Values(v) => v.len(),
        Target::Class(_) => 1,
    };
    let mut w = Writer::new();
    let mut meta = format!("task={}", ds.task_kind().as_str());
    if let Some(k) = ds.num_classes() {
        meta.push_str(&format!(" classes={k}"));
    }
    w.meta(&meta);
    w.row(dataset_header(d, m));
    for p in ds.points() {
        let mut cells = Vec::with_capacity(d + m + 3);
        cells.push(p.id.to_string());
        cells.extend(p.features.iter().map(|x| fmt_f64(*x)));
        match &p.target {
            Target::Values(v) => cells.extend(v.iter().map(|x| fmt_f64(*x))),
            Target::Class(c) => cells.push(c.to_string()),
        }
        cells.push(opt(p.class_label));
        cells.push(opt(p.latent_group));
        w.row(cells);
    }
    w.finish()
}

pub fn save_dataset(ds: &GroupedDataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset_to_string(ds).as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<GroupedDataset> {
    let table = Table::read(path)?;
    let h = &table.header;
    let d = h.iter().filter(|c| c.starts_with("feat")).count();
    let m = h.iter().filter(|c| c.starts_with("tgt")).count();
    table.expect_header(&dataset_header(d, m))?;
    if d == 0 || m == 0 {
        return Err(table.err(table.header_line, "header needs at least one feat and one tgt column"));
    }
    let task = match table.meta_value("task") {
        Some(t) => TaskKind::parse(t).ok_or_else(|| table.err(1, format!("unknown task kind `{t}`")))?,
        None => TaskKind::RegressionMse,
    };
    let classes = table
        .meta_value("classes")
        .map(|c| {
            c.parse::<usize>()
                .map_err(|_| table.err(1, format!("bad class count `{c}`")))
        })
        .transpose()?;
    if task.is_classification() && m != 1 {
        return Err(table.err(table.header_line, "classification files carry exactly one tgt column"));
    }

    let mut seen = HashSet::new();
    let mut points = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let id = table.u64_at(row, 0)?;
        if !seen.insert(id) {
            return Err(table.err(row.line, format!("duplicate id {id}")));
        }
        let features = (1..=d).map(|c| table.f64_at(row, c)).collect::<Result<Vec<_>>>()?;
        let target = if task.is_classification() {
            let c = table
                .opt_usize_at(row, d + 1)?
                .ok_or_else(|| table.err(row.line, "missing class target"))?;
            Target::Class(c)
        } else {
            Target::Values((d + 1..=d + m).map(|c| table.f64_at(row, c)).collect::<Result<_>>()?)
        };
        points.push(DataPoint {
            id,
            features,
            target,
            class_label: table.opt_usize_at(row, d + m + 1)?,
            latent_group: table.opt_usize_at(row, d + m + 2)?,
        });
    }
    if points.is_empty() {
        return Err(table.err(table.header_line, "dataset has no rows"));
    }
    GroupedDataset::new(points, task, classes).map_err(|e| match e {
        Error::InvalidInput(msg) | Error::Shape(msg) => table.err(table.header_line, msg),
        other => other,
    })
}

pub fn save_label_probabilities(t: &LabelProbabilityTable, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.row(std::iter::once("id".to_string()).chain(numbered("p", t.width())));
    for (id, row) in t.ids.iter().zip(&t.rows) {
        w.row(std::iter::once(id.to_string()).chain(row.iter().map(|x| fmt_f64(*x))));
    }
    write_atomic(path, w.finish().as_bytes())
}

/// Reads `id,p0..p{J-1}`.
pub fn load_label_probabilities(path: &Path) -> Result<LabelProbabilityTable> {
    let table = Table::read(path)?;
    let j = table.header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("id".to_string()).chain(numbered("p", j)).collect();
    table.expect_header(&expected)?;
    if j == 0 {
        return Err(table.err(table.header_line, "no probability columns"));
    }
    let mut seen = HashSet::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for row in &table.rows {
        let id = table.u64_at(row, 0)?;
        if !seen.insert(id) {
            return Err(table.err(row.line, format!("duplicate id {id}")));
        }
        let probs = (1..=j).map(|c| table.f64_at(row, c)).collect::<Result<Vec<_>>>()?;
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(table.err(row.line, "probabilities must be finite and non-negative"));
        }
        ids.push(id);
        rows.push(probs);
    }
    LabelProbabilityTable::new(ids, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_grouped, SyntheticConfig};
    use crate::numerics::RngStream;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn round_trip_regression_and_classification() {
        let dir = tempfile::tempdir().unwrap();
        for task in [TaskKind::RegressionL1, TaskKind::ClassificationCe] {
            let cfg = SyntheticConfig {
                points: 120,
                groups: 3,
                task,
                ..Default::default()
            };
            let ds = generate_synthetic_grouped(&cfg, &mut RngStream::new(1, 2)).unwrap();
            let path = dir.path().join(format!("{}.csv", task.as_str()));
            save_dataset(&ds, &path).unwrap();
            assert_eq!(load_dataset(&path).unwrap(), ds);
        }
    }

    #[test]
    fn duplicate_id_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "id,feat0,tgt0,class,group\n0,1,2,,\n1,1,2,,\n0,3,4,,\n");
        match load_dataset(&p).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("duplicate"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn empty_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(&write(&dir, "e.csv", "")).is_err());
        assert!(load_dataset(&write(&dir, "h.csv", "id,x0,tgt0,class,group\n0,1,2,,\n")).is_err());
        assert!(load_dataset(&write(&dir, "r.csv", "id,feat0,tgt0,class,group\n0,1,2\n")).is_err());
        assert!(load_dataset(&write(&dir, "n.csv", "id,feat0,tgt0,class,group\n")).is_err());
    }

    #[test]
    fn label_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = LabelProbabilityTable::new(vec![3, 1], vec![vec![0.2, 0.8], vec![1.0, 0.0]]).unwrap();
        let p = dir.path().join("labels.csv");
        save_label_probabilities(&t, &p).unwrap();
        assert_eq!(load_label_probabilities(&p).unwrap(), t);
        let bad = write(&dir, "b.csv", "id,p0,p1\n0,0.5,-1\n");
        assert!(load_label_probabilities(&bad).is_err());
    }
}
