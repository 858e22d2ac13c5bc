use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{categorical_sample, sq_dist, Matrix, RngStream};

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Inertia after each centroid update, in order.
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

/// Nearest centroid by squared distance; ties resolve to the lowest index.
fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(data: &Matrix, k: usize, rng: &mut RngStream) -> Result<Matrix> {
    let n = data.rows();
    let mut centroids = Matrix::zeros(k, data.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(data.row(first));
    let mut d2: Vec<f64> = data.iter_rows().map(|x| sq_dist(x, data.row(first))).collect();
    for j in 1..k {
        // all remaining points coincide with chosen centers: pick uniformly
        let pick = if d2.iter().all(|d| *d == 0.0) {
            rng.below(n)
        } else {
            categorical_sample(&d2, rng)?
        };
        centroids.row_mut(j).copy_from_slice(data.row(pick));
        for (i, x) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centroids.row(j)));
        }
    }
    Ok(centroids)
}

/// Gives each empty cluster the point farthest from its current centroid,
/// taken from a cluster that still has more than one member.
fn repair_empty(data: &Matrix, centroids: &mut Matrix, assign: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None::<(usize, f64)>;
        for (i, x) in data.iter_rows().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = sq_dist(x, centroids.row(assign[i]));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { return };
        assign[i] = empty;
        centroids.row_mut(empty).copy_from_slice(data.row(i));
    }
}

fn update_centroids(data: &Matrix, assign: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, data.cols());
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter_rows().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(x) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c.max(1) as f64;
        for s in sums.row_mut(j) {
            *s *= inv;
        }
    }
    sums
}

fn inertia(data: &Matrix, centroids: &Matrix, assign: &[usize]) -> f64 {
    data.iter_rows()
        .zip(assign)
        .map(|(x, &a)| sq_dist(x, centroids.row(a)))
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` updates have run.
pub fn kmeans_fit(emb: &EmbeddingMatrix, k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    let data = emb.vectors();
    let n = data.rows();
    if k == 0 || n < k {
        return Err(Error::InvalidParameter(format!(
            "cannot fit k={k} clusters to {n} points"
        )));
    }
    let mut rng = RngStream::derive(seed, "kmeans-init", k as u64, 0);
    let mut centroids = plus_plus_init(data, k, &mut rng)?;
    let mut assign: Vec<usize> = data.iter_rows().map(|x| nearest(&centroids, x).0).collect();
    repair_empty(data, &mut centroids, &mut assign, k);
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters {
        centroids = update_centroids(data, &assign, k);
        iterations += 1;
        trace.push(inertia(data, &centroids, &assign));
        let mut next: Vec<usize> = data.iter_rows().map(|x| nearest(&centroids, x).0).collect();
        repair_empty(data, &mut centroids, &mut next, k);
        if next == assign {
            break;
        }
        assign = next;
    }
    let inertia = inertia(data, &centroids, &assign);
    Ok(ClusterModel {
        centroids,
        assignments: assign,
        inertia,
        seed,
        iterations,
        inertia_trace: trace,
    })
}

/// Nearest-centroid assignment for (possibly new) embeddings.
pub fn kmeans_assign(model: &ClusterModel, emb: &EmbeddingMatrix) -> Result<Vec<usize>> {
    if emb.width() != model.centroids.cols() {
        return Err(Error::Shape(format!(
            "embedding width {} vs centroid width {}",
            emb.width(),
            model.centroids.cols()
        )));
    }
    Ok(emb
        .vectors()
        .iter_rows()
        .map(|x| nearest(&model.centroids, x).0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix::new((0..rows.len() as u64).collect(), Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn exact_two_clusters() {
        let e = emb(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![4.0, 4.0], vec![4.0, 4.0]]);
        let m = kmeans_fit(&e, 2, 1, 300).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut cs: Vec<Vec<f64>> = m.centroids.iter_rows().map(<[f64]>::to_vec).collect();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(cs, vec![vec![0.0, 0.0], vec![4.0, 4.0]]);
        assert_eq!(m.assignments[0], m.assignments[1]);
        assert_ne!(m.assignments[0], m.assignments[2]);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let rows = vec![vec![1.0], vec![2.0], vec![6.0]];
        let m = kmeans_fit(&emb(&rows), 1, 0, 300).unwrap();
        assert!((m.centroids.row(0)[0] - 3.0).abs() < 1e-12);
        // total variance * n = sum of squared deviations
        assert!((m.inertia - 14.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = kmeans_fit(&emb(&rows), 6, 3, 300).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut a = m.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let rows = vec![vec![0.0]; 5];
        let m = kmeans_fit(&emb(&rows), 3, 9, 300).unwrap();
        let mut seen = [false; 3];
        for a in &m.assignments {
            seen[*a] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            kmeans_fit(&emb(&[vec![0.0]]), 2, 0, 10),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn assign_rules() {
        let e = emb(&[vec![0.0], vec![2.0], vec![10.0], vec![12.0]]);
        let m = kmeans_fit(&e, 2, 4, 300).unwrap();
        assert_eq!(kmeans_assign(&m, &e).unwrap(), m.assignments);
        let c0 = m.centroids.row(0).to_vec();
        assert_eq!(kmeans_assign(&m, &emb(&[c0])).unwrap(), vec![0]);

        let tie = ClusterModel {
            centroids: Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            assignments: vec![],
            inertia: 0.0,
            seed: 0,
            iterations: 0,
            inertia_trace: vec![],
        };
        assert_eq!(kmeans_assign(&tie, &emb(&[vec![0.0]])).unwrap(), vec![0]);
        assert!(kmeans_assign(&tie, &emb(&[vec![0.0, 1.0]])).is_err());
    }
}
