use rayon::prelude::*;

use super::kmeans::{kmeans_fit, DEFAULT_MAX_ITERS};
use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, sq_dist};

/// Cluster sizes used by the sweep when none are given.
pub const DEFAULT_SWEEP_KS: [usize; 5] = [2, 4, 10, 16, 32];

/// Mean silhouette coefficient with Euclidean distance.
///
/// Points in singleton clusters score zero.
pub fn silhouette_score(emb: &EmbeddingMatrix, assignments: &[usize]) -> Result<f64> {
    let data = emb.vectors();
    let n = data.rows();
    if assignments.len() != n {
        return Err(Error::Shape(format!(
            "{} assignments for {n} points",
            assignments.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two clusters".into()));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            let xi = data.row(i);
            for (j, xj) in data.iter_rows().enumerate() {
                if j != i {
                    sums[assignments[j]] += sq_dist(xi, xj).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// Fits k-means at each `k` (each with its own seed-derived stream) and
/// scores the resulting clustering.
pub fn silhouette_sweep(emb: &EmbeddingMatrix, k_values: &[usize], seed: u64) -> Result<Vec<(usize, f64)>> {
    k_values
        .iter()
        .map(|&k| {
            let model = kmeans_fit(
                emb,
                k,
                derive_seed(seed, "silhouette-sweep", k as u64),
                DEFAULT_MAX_ITERS,
            )?;
            Ok((k, silhouette_score(emb, &model.assignments)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{standard_normal, Matrix, RngStream};

    fn emb(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        EmbeddingMatrix::new((0..rows.len() as u64).collect(), Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn hand_computed_two_clusters() {
        let e = emb(vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]]);
        let s = silhouette_score(&e, &[0, 0, 1, 1]).unwrap();
        // a = 0.1 everywhere; outer points see b = 10.05, inner points b = 9.95
        let expect = ((10.05 - 0.1) / 10.05 + (9.95 - 0.1) / 9.95) / 2.0;
        assert!((s - expect).abs() < 1e-12);
        assert!((s - 0.9900).abs() < 1e-4);
    }

    #[test]
    fn random_split_of_one_blob_is_near_zero() {
        let mut r = RngStream::new(17, 0);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![standard_normal(&mut r), standard_normal(&mut r)])
            .collect();
        let assign: Vec<usize> = (0..500).map(|_| r.below(2)).collect();
        let s = silhouette_score(&emb(rows), &assign).unwrap();
        assert!(s.abs() < 0.1, "s {s}");
    }

    #[test]
    fn coincident_clusters_are_non_positive() {
        let e = emb(vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]]);
        assert!(silhouette_score(&e, &[0, 1, 0, 1]).unwrap() <= 0.0);
    }

    #[test]
    fn singleton_and_single_cluster() {
        let e = emb(vec![vec![0.0], vec![1.0], vec![5.0]]);
        // the singleton contributes 0
        let s = silhouette_score(&e, &[0, 0, 1]).unwrap();
        let p0 = (5.0 - 1.0) / 5.0;
        let p1 = (4.0 - 1.0) / 4.0;
        assert!((s - (p0 + p1) / 3.0).abs() < 1e-12);
        assert!(matches!(silhouette_score(&e, &[2, 2, 2]), Err(Error::InvalidInput(_))));
    }
}
