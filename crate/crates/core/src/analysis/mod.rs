//! Clustering agreement, cross-seed summaries and task metrics.

mod ari;
mod metrics;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std, RngStream};
use crate::tabular::{fmt_f64, Writer};

pub use ari::{adjusted_rand_index, ari_labels, permutation_p_value, Clustering};
pub use metrics::{f_measure, mean_iou, task_metric, MetricKind, MetricParams};

/// One heatmap entry. The diagonal carries no p-value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityCell {
    pub ari: f64,
    pub p_value: Option<f64>,
}

/// A task and its clusterings, one per seed. A task with a single clustering
/// (fixed labels, say) is compared against every seed of the other task.
#[derive(Clone, Debug)]
pub struct TaskClusterings {
    pub name: String,
    pub runs: Vec<Clustering>,
}

fn seed_pairs<'a>(a: &'a TaskClusterings, b: &'a TaskClusterings) -> Result<Vec<(&'a Clustering, &'a Clustering)>> {
    match (a.runs.len(), b.runs.len()) {
        (0, _) | (_, 0) => Err(Error::InvalidInput(format!(
            "task {} or {} has no clusterings",
            a.name, b.name
        ))),
        (1, _) => Ok(b.runs.iter().map(|y| (&a.runs[0], y)).collect()),
        (_, 1) => Ok(a.runs.iter().map(|x| (x, &b.runs[0])).collect()),
        (m, n) if m == n => Ok(a.runs.iter().zip(&b.runs).collect()),
        (m, n) => Err(Error::InvalidInput(format!(
            "tasks {} and {} have {m} and {n} seeds",
            a.name, b.name
        ))),
    }
}

/// Pairwise mean ARI over seeds, with the largest per-seed permutation
/// p-value as the reported significance.
pub fn similarity_heatmap(
    tasks: &[TaskClusterings],
    permutations: usize,
    seed: u64,
) -> Result<Vec<Vec<SimilarityCell>>> {
    let n = tasks.len();
    if n < 2 {
        return Err(Error::InvalidInput("heatmap needs at least 2 tasks".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let cells: Vec<SimilarityCell> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let runs = seed_pairs(&tasks[i], &tasks[j])?;
            let mut aris = Vec::with_capacity(runs.len());
            let mut p_max = 0.0f64;
            for (s, (a, b)) in runs.into_iter().enumerate() {
                aris.push(adjusted_rand_index(a, b)?);
                let mut rng = RngStream::derive(seed, "heatmap", k as u64, s as u64);
                p_max = p_max.max(permutation_p_value(a, b, permutations, &mut rng)?);
            }
            Ok(SimilarityCell {
                ari: mean(&aris),
                p_value: Some(p_max),
            })
        })
        .collect::<Result<_>>()?;
    let diag = SimilarityCell {
        ari: 1.0,
        p_value: None,
    };
    let mut out = vec![vec![diag; n]; n];
    for (&(i, j), c) in pairs.iter().zip(cells) {
        out[i][j] = c;
        out[j][i] = c;
    }
    Ok(out)
}

/// Rows of `task,<t>_ari,<t>_p,...`; diagonal p-values are left empty.
pub fn heatmap_to_string(names: &[String], cells: &[Vec<SimilarityCell>]) -> String {
    let mut w = Writer::new();
    w.row(std::iter::once("task".to_string()).chain(names.iter().flat_map(|t| [format!("{t}_ari"), format!("{t}_p")])));
    for (name, row) in names.iter().zip(cells) {
        w.row(
            std::iter::once(name.clone()).chain(
                row.iter()
                    .flat_map(|c| [fmt_f64(c.ari), c.p_value.map(|p| format!("{p:.4}")).unwrap_or_default()]),
            ),
        );
    }
    w.finish()
}

/// Sample mean and sample standard deviation (n - 1).
pub fn cross_seed_aggregate(losses: &[f64]) -> Result<(f64, f64)> {
    let std = sample_std(losses)
        .ok_or_else(|| Error::InvalidInput(format!("need at least 2 seeds, got {}", losses.len())))?;
    Ok((mean(losses), std))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub task: String,
    pub alpha: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate_table_to_string(rows: &[AggregateRow]) -> String {
    let mut w = Writer::new();
    w.row(["task", "alpha", "mean", "std"]);
    for r in rows {
        w.row([r.task.clone(), fmt_f64(r.alpha), fmt_f64(r.mean), fmt_f64(r.std)]);
    }
    w.finish()
}

/// Loss-per-round columns, one per alpha: `round,loss_alpha<a>,...`.
/// Shorter series leave trailing cells empty.
pub fn plot_data_to_string(series: &[(f64, Vec<f64>)]) -> String {
    let mut w = Writer::new();
    w.row(std::iter::once("round".to_string()).chain(series.iter().map(|(a, _)| format!("loss_alpha{}", fmt_f64(*a)))));
    let rounds = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    for t in 0..rounds {
        w.row(
            std::iter::once(t.to_string()).chain(
                series
                    .iter()
                    .map(|(_, s)| s.get(t).map(|x| fmt_f64(*x)).unwrap_or_default()),
            ),
        );
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(name: &str, labels: &[&[usize]]) -> TaskClusterings {
        TaskClusterings {
            name: name.into(),
            runs: labels
                .iter()
                .map(|l| Clustering::new((0..l.len() as u64).collect(), l.to_vec()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn aggregate_matches_two_pass() {
        let (m, s) = cross_seed_aggregate(&[0.071, 0.072, 0.073]).unwrap();
        assert!((m - 0.072).abs() < 1e-12 && (s - 0.001).abs() < 1e-12);
        assert_eq!(cross_seed_aggregate(&[0.3, 0.3]).unwrap().1, 0.0);
        assert!(cross_seed_aggregate(&[0.3]).is_err());

        let xs = [3.5, 1.25, -0.75, 9.0, 2.0];
        let mu = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / 4.0;
        let (m, s) = cross_seed_aggregate(&xs).unwrap();
        assert!((m - mu).abs() < 1e-12 && (s - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heatmap_is_symmetric_with_unit_diagonal() {
        let a: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let b: Vec<usize> = (0..30).map(|i| (i / 3) % 2).collect();
        let tasks = vec![task("x", &[&a, &a]), task("y", &[&a]), task("z", &[&b, &a])];
        let h = similarity_heatmap(&tasks, 20, 1).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h[0][1].ari, 1.0);
        for (i, row) in h.iter().enumerate() {
            assert_eq!(
                row[i],
                SimilarityCell {
                    ari: 1.0,
                    p_value: None
                }
            );
            for (j, cell) in row.iter().enumerate() {
                assert_eq!(cell.ari, h[j][i].ari);
            }
        }
        let text = heatmap_to_string(&["x".into(), "y".into(), "z".into()], &h);
        assert!(text.starts_with("task,x_ari,x_p,y_ari,y_p,z_ari,z_p\nx,1,,1,0.0476,"));
        assert!(similarity_heatmap(&tasks[..1], 20, 1).is_err());
    }

    #[test]
    fn table_layouts() {
        let rows = [AggregateRow {
            task: "depth".into(),
            alpha: 0.1,
            mean: 0.072,
            std: 0.001,
        }];
        assert_eq!(
            aggregate_table_to_string(&rows),
            "task,alpha,mean,std\ndepth,0.1,0.072,0.001\n"
        );
        let plot = plot_data_to_string(&[(0.1, vec![3.0, 2.0]), (10.0, vec![1.0, 0.5]), (1000.0, vec![0.9])]);
        assert_eq!(
            plot,
            "round,loss_alpha0.1,loss_alpha10,loss_alpha1000\n0,3,1,0.9\n1,2,0.5,\n"
        );
    }
}
