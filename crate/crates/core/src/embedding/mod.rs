//! Penultimate-layer embeddings, k-means clustering and cluster validity.

mod kmeans;
mod pretrain;
mod silhouette;

use std::collections::HashSet;
use std::path::Path;

use crate::datasets::GroupedDataset;
use crate::error::{Error, Result};
use crate::models::{forward, Architecture, ModelParams};
use crate::numerics::Matrix;
use crate::tabular::{fmt_f64, numbered, write_atomic, Table, Writer};

pub use kmeans::{kmeans_assign, kmeans_fit, ClusterModel, DEFAULT_K, DEFAULT_MAX_ITERS};
pub use pretrain::{pretrain_centralized, PretrainConfig, PretrainOutcome};
pub use silhouette::{silhouette_score, silhouette_sweep, DEFAULT_SWEEP_KS};

/// Row `i` is the embedding of datapoint `ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<u64>,
    vectors: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<u64>, vectors: Matrix) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), vectors.rows())));
        }
        if vectors.cols() == 0 {
            return Err(Error::Shape("embedding width must be at least 1".into()));
        }
        Ok(Self { ids, vectors })
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn width(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows at the given positions, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        let data = rows.iter().flat_map(|&r| self.vectors.row(r).iter().copied()).collect();
        Self {
            ids,
            vectors: Matrix::from_flat(rows.len(), self.width(), data),
        }
    }
}

/// Penultimate activation of every datapoint, in dataset order.
pub fn extract_embeddings(
    params: &ModelParams,
    arch: &Architecture,
    dataset: &GroupedDataset,
) -> Result<EmbeddingMatrix> {
    let h = arch.penultimate_width();
    let mut data = Vec::with_capacity(dataset.len() * h);
    for p in dataset.points() {
        let (_, pen) = forward(params, arch, &p.features)?;
        data.extend_from_slice(&pen);
    }
    EmbeddingMatrix::new(dataset.ids(), Matrix::from_flat(dataset.len(), h, data))
}

pub fn save_embeddings(emb: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.row(std::iter::once("id".to_string()).chain(numbered("e", emb.width())));
    for (id, row) in emb.ids.iter().zip(emb.vectors.iter_rows()) {
        w.row(std::iter::once(id.to_string()).chain(row.iter().map(|x| fmt_f64(*x))));
    }
    write_atomic(path, w.finish().as_bytes())
}

/// Reads `id,e0..e{h-1}`; externally produced embeddings enter here.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let table = Table::read(path)?;
    let h = table.header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("id".to_string()).chain(numbered("e", h)).collect();
    table.expect_header(&expected)?;
    if h == 0 {
        return Err(table.err(table.header_line, "no embedding columns"));
    }
    let mut seen = HashSet::new();
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut data = Vec::with_capacity(table.rows.len() * h);
    for row in &table.rows {
        let id = table.u64_at(row, 0)?;
        if !seen.insert(id) {
            return Err(table.err(row.line, format!("duplicate id {id}")));
        }
        ids.push(id);
        for c in 1..=h {
            data.push(table.f64_at(row, c)?);
        }
    }
    let n = ids.len();
    EmbeddingMatrix::new(ids, Matrix::from_flat(n, h, data))
}

pub fn save_clusters(ids: &[u64], clusters: &[usize], path: &Path) -> Result<()> {
    if ids.len() != clusters.len() {
        return Err(Error::Shape("ids and clusters differ in length".into()));
    }
    let mut w = Writer::new();
    w.row(["id", "cluster"]);
    for (id, c) in ids.iter().zip(clusters) {
        w.row([id.to_string(), c.to_string()]);
    }
    write_atomic(path, w.finish().as_bytes())
}

/// Reads `id,cluster` as `(id, cluster)` pairs in file order.
pub fn load_clusters(path: &Path) -> Result<Vec<(u64, usize)>> {
    let table = Table::read(path)?;
    table.expect_header(&["id".to_string(), "cluster".to_string()])?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let id = table.u64_at(row, 0)?;
        if !seen.insert(id) {
            return Err(table.err(row.line, format!("duplicate id {id}")));
        }
        let c = table
            .opt_usize_at(row, 1)?
            .ok_or_else(|| table.err(row.line, "missing cluster"))?;
        out.push((id, c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DataPoint, Target, TaskKind};
    use std::sync::Arc;

    #[test]
    fn embeddings_follow_dataset_rows() {
        let arch = Architecture::desk(2, 1);
        let pts = [vec![0.5, 0.5], vec![0.5, 0.5], vec![-1.0, 2.0]]
            .into_iter()
            .enumerate()
            .map(|(i, f)| DataPoint {
                id: 10 + i as u64,
                features: f,
                target: Target::Values(vec![0.0]),
                class_label: None,
                latent_group: None,
            })
            .collect();
        let ds = GroupedDataset::new(pts, TaskKind::RegressionMse, None).unwrap();
        let params = crate::models::init_params(&arch, &mut crate::numerics::RngStream::new(1, 1)).unwrap();
        let emb = extract_embeddings(&params, &arch, &ds).unwrap();
        assert_eq!(emb.ids(), &[10, 11, 12]);
        assert_eq!(emb.width(), 32);
        assert_eq!(emb.vectors().row(0), emb.vectors().row(1));

        let zero = ModelParams::zeros(Arc::new(arch.layout()));
        let z = extract_embeddings(&zero, &arch, &ds).unwrap();
        assert!(z.vectors().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let emb = EmbeddingMatrix::new(
            vec![4, 2],
            Matrix::from_rows(&[vec![0.25, -1.5], vec![1.0 / 3.0, 7.0]]).unwrap(),
        )
        .unwrap();
        let p = dir.path().join("emb.csv");
        save_embeddings(&emb, &p).unwrap();
        assert_eq!(load_embeddings(&p).unwrap(), emb);

        let c = dir.path().join("clusters.csv");
        save_clusters(&[4, 2], &[1, 0], &c).unwrap();
        assert_eq!(load_clusters(&c).unwrap(), vec![(4, 1), (2, 0)]);

        std::fs::write(&c, "id,cluster\n1,0\n1,1\n").unwrap();
        assert!(load_clusters(&c).is_err());
    }
}
