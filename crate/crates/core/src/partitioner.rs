//! Dirichlet allocation of datapoints to clients.
//!
//! Both partitioning modes share one mechanism: a group label per datapoint
//! (its class for class-based splits, its k-means cluster for
//! embedding-based splits), one Dirichlet ratio vector per client drawn
//! around the global group prior, and a per-point categorical draw over
//! clients weighted by each client's appetite for the point's group.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::GroupedDataset;
use crate::error::{Error, Result};
use crate::numerics::{categorical_sample, dirichlet_sample, top2, RngStream, Simplex};
use crate::tabular::{fmt_f64, numbered, write_atomic, Table, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    ClassBased,
    EmbeddingBased,
}

impl PartitionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionMode::ClassBased => "class",
            PartitionMode::EmbeddingBased => "embedding",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub alpha: f64,
    pub mode: PartitionMode,
    pub seed: u64,
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 clients, got {}",
                self.num_clients
            )));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One ratio vector over groups per client.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRatios {
    pub rows: Vec<Simplex>,
}

impl GroupRatios {
    pub fn num_clients(&self) -> usize {
        self.rows.len()
    }

    pub fn num_groups(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    fn column(&self, g: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[g]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub ids: Vec<u64>,
    pub client_of: Vec<usize>,
    pub group_of: Vec<usize>,
    pub ratios: Option<GroupRatios>,
    pub num_clients: usize,
}

impl PartitionPlan {
    pub fn num_groups(&self) -> usize {
        self.group_of.iter().max().map_or(0, |m| m + 1)
    }

    /// Positions (into `ids`) owned by each client, in datapoint order.
    pub fn client_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clients];
        for (i, &c) in self.client_of.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clients];
        for &c in &self.client_of {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Fraction of datapoints in each group.
pub fn group_prior(group_of: &[usize]) -> Result<Simplex> {
    if group_of.is_empty() {
        return Err(Error::InvalidInput("no datapoints to build a group prior".into()));
    }
    let g = group_of.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0.0; g];
    for &x in group_of {
        counts[x] += 1.0;
    }
    Simplex::from_weights(&counts)
}

/// `N` independent draws of `Dir(alpha * prior)`. Groups with zero prior are
/// left out of the draw and come back as exact zeros.
pub fn client_group_ratios(
    prior: &Simplex,
    alpha: f64,
    num_clients: usize,
    rng: &mut RngStream,
) -> Result<GroupRatios> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let live: Vec<usize> = (0..prior.len()).filter(|&g| prior[g] > 0.0).collect();
    if live.is_empty() {
        return Err(Error::InvalidParameter("all-zero group prior".into()));
    }
    let conc: Vec<f64> = live.iter().map(|&g| alpha * prior[g]).collect();
    let rows = (0..num_clients)
        .map(|_| {
            let draw = dirichlet_sample(&conc, rng)?;
            let mut full = vec![0.0; prior.len()];
            for (&g, &q) in live.iter().zip(draw.iter()) {
                full[g] = q;
            }
            Simplex::new(full)
        })
        .collect::<Result<_>>()?;
    Ok(GroupRatios { rows })
}

/// Assigns each point of group `g` to client `n` with probability
/// `ratios[n][g] / sum_m ratios[m][g]`, then repairs empty clients by moving
/// the last point of the largest client.
pub fn assign_datapoints(
    group_of: &[(u64, usize)],
    ratios: &GroupRatios,
    rng: &mut RngStream,
) -> Result<PartitionPlan> {
    let num_clients = ratios.num_clients();
    let num_groups = ratios.num_groups();
    let columns: Vec<Vec<f64>> = (0..num_groups).map(|g| ratios.column(g)).collect();
    let mut client_of = Vec::with_capacity(group_of.len());
    for &(id, g) in group_of {
        let col = columns.get(g).ok_or_else(|| {
            Error::Allocation(format!(
                "point {id} has group {g} outside the {num_groups} ratio columns"
            ))
        })?;
        if col.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Allocation(format!(
                "group {g} is populated but no client wants it"
            )));
        }
        client_of.push(categorical_sample(col, rng)?);
    }
    if group_of.len() < num_clients {
        return Err(Error::Allocation(format!(
            "{} points cannot fill {num_clients} clients",
            group_of.len()
        )));
    }
    repair_empty_clients(&mut client_of, num_clients);
    Ok(PartitionPlan {
        ids: group_of.iter().map(|(id, _)| *id).collect(),
        client_of,
        group_of: group_of.iter().map(|(_, g)| *g).collect(),
        ratios: Some(ratios.clone()),
        num_clients,
    })
}

fn repair_empty_clients(client_of: &mut [usize], num_clients: usize) {
    loop {
        let mut sizes = vec![0usize; num_clients];
        for &c in client_of.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..num_clients).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let victim = client_of
            .iter()
            .rposition(|&c| c == largest)
            .expect("largest client has members");
        client_of[victim] = empty;
    }
}

/// Shared path for both modes; the stream depends only on the seed so that
/// identical group labels yield identical plans.
fn partition_by_groups(group_of: Vec<(u64, usize)>, config: &PartitionConfig) -> Result<PartitionPlan> {
    config.validate()?;
    let labels: Vec<usize> = group_of.iter().map(|(_, g)| *g).collect();
    let prior = group_prior(&labels)?;
    let mut rng = RngStream::derive(config.seed, "partition", 0, 0);
    let ratios = client_group_ratios(&prior, config.alpha, config.num_clients, &mut rng)?;
    assign_datapoints(&group_of, &ratios, &mut rng)
}

pub fn class_based_partition(dataset: &GroupedDataset, config: &PartitionConfig) -> Result<PartitionPlan> {
    let labels = dataset.class_labels()?;
    partition_by_groups(dataset.ids().into_iter().zip(labels).collect(), config)
}

/// `clusters` maps every datapoint id to its cluster index.
pub fn embedding_based_partition(
    dataset: &GroupedDataset,
    clusters: &[(u64, usize)],
    config: &PartitionConfig,
) -> Result<PartitionPlan> {
    let lookup: HashMap<u64, usize> = clusters.iter().copied().collect();
    if lookup.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} cluster ids for {} datapoints",
            lookup.len(),
            dataset.len()
        )));
    }
    let group_of = dataset
        .ids()
        .into_iter()
        .map(|id| {
            lookup
                .get(&id)
                .map(|&c| (id, c))
                .ok_or_else(|| Error::InvalidInput(format!("datapoint {id} has no cluster")))
        })
        .collect::<Result<Vec<_>>>()?;
    partition_by_groups(group_of, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub size: usize,
    pub histogram: Vec<usize>,
    pub top2_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySummary {
    pub clients: Vec<ClientStats>,
    pub mean_top2: f64,
    pub min_top2: f64,
    pub max_top2: f64,
    pub mean_size: f64,
    pub min_size: usize,
    pub max_size: usize,
}

pub fn heterogeneity_summary(plan: &PartitionPlan) -> HeterogeneitySummary {
    let g = plan.num_groups();
    let mut hist = vec![vec![0usize; g]; plan.num_clients];
    for (&c, &grp) in plan.client_of.iter().zip(&plan.group_of) {
        hist[c][grp] += 1;
    }
    let clients: Vec<ClientStats> = hist
        .into_iter()
        .map(|h| {
            let size: usize = h.iter().sum();
            let as_f: Vec<f64> = h.iter().map(|&x| x as f64).collect();
            let top2_mass = if size == 0 { 0.0 } else { top2(&as_f) / size as f64 };
            ClientStats {
                size,
                histogram: h,
                top2_mass,
            }
        })
        .collect();
    let n = clients.len() as f64;
    let tops = clients.iter().map(|c| c.top2_mass);
    HeterogeneitySummary {
        mean_top2: tops.clone().sum::<f64>() / n,
        min_top2: tops.clone().fold(f64::INFINITY, f64::min),
        max_top2: tops.fold(f64::NEG_INFINITY, f64::max),
        mean_size: clients.iter().map(|c| c.size as f64).sum::<f64>() / n,
        min_size: clients.iter().map(|c| c.size).min().unwrap_or(0),
        max_size: clients.iter().map(|c| c.size).max().unwrap_or(0),
        clients,
    }
}

pub fn save_plan(plan: &PartitionPlan, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.meta(&format!("clients={}", plan.num_clients));
    w.row(["id", "client", "group"]);
    for i in 0..plan.ids.len() {
        w.row([
            plan.ids[i].to_string(),
            plan.client_of[i].to_string(),
            plan.group_of[i].to_string(),
        ]);
    }
    write_atomic(path, w.finish().as_bytes())
}

/// Reads `id,client,group`. Ratio vectors are not stored, so the loaded plan
/// carries none.
pub fn load_plan(path: &Path) -> Result<PartitionPlan> {
    let table = Table::read(path)?;
    table.expect_header(&["id".into(), "client".into(), "group".into()])?;
    let mut ids = Vec::new();
    let mut client_of = Vec::new();
    let mut group_of = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in &table.rows {
        let id = table.u64_at(row, 0)?;
        if !seen.insert(id) {
            return Err(table.err(row.line, format!("id {id} assigned twice")));
        }
        ids.push(id);
        client_of.push(table.u64_at(row, 1)? as usize);
        group_of.push(table.u64_at(row, 2)? as usize);
    }
    let declared = table.meta_value("clients").and_then(|c| c.parse::<usize>().ok());
    let num_clients = declared.unwrap_or_else(|| client_of.iter().max().map_or(0, |m| m + 1));
    Ok(PartitionPlan {
        ids,
        client_of,
        group_of,
        ratios: None,
        num_clients,
    })
}

/// Per-client stacked-histogram table: `client,size,top2_mass,g0..`.
pub fn summary_to_string(summary: &HeterogeneitySummary) -> String {
    let g = summary.clients.first().map_or(0, |c| c.histogram.len());
    let mut w = Writer::new();
    w.meta(&format!(
        "mean_top2={} min_top2={} max_top2={} mean_size={} min_size={} max_size={}",
        fmt_f64(summary.mean_top2),
        fmt_f64(summary.min_top2),
        fmt_f64(summary.max_top2),
        fmt_f64(summary.mean_size),
        summary.min_size,
        summary.max_size
    ));
    w.row(
        ["client".to_string(), "size".into(), "top2_mass".into()]
            .into_iter()
            .chain(numbered("g", g)),
    );
    for (i, c) in summary.clients.iter().enumerate() {
        w.row(
            [i.to_string(), c.size.to_string(), fmt_f64(c.top2_mass)]
                .into_iter()
                .chain(c.histogram.iter().map(|h| h.to_string())),
        );
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(s: u64) -> RngStream {
        RngStream::derive(s, "partition-test", 0, 0)
    }

    #[test]
    fn prior_cases() {
        assert_eq!(
            &*group_prior(&[0; 8].iter().chain(&[1; 8]).copied().collect::<Vec<_>>()).unwrap(),
            &[0.5, 0.5]
        );
        assert_eq!(&*group_prior(&[0, 0]).unwrap(), &[1.0]);
        let p = group_prior(&[0, 1, 1, 2, 2, 2]).unwrap();
        assert!((p[0] - 1.0 / 6.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15 && p[2] == 0.5);
        assert!(group_prior(&[]).is_err());
    }

    #[test]
    fn homogeneous_ratios_at_huge_alpha() {
        let r = client_group_ratios(&Simplex::uniform(16), 1e6, 25, &mut rng(1)).unwrap();
        for row in &r.rows {
            assert!(row.iter().all(|q| (q - 1.0 / 16.0).abs() < 0.005));
        }
    }

    #[test]
    fn zero_prior_entries_stay_zero() {
        let prior = Simplex::new(vec![0.5, 0.0, 0.5]).unwrap();
        let r = client_group_ratios(&prior, 0.5, 30, &mut rng(2)).unwrap();
        assert!(r.rows.iter().all(|row| row[1] == 0.0));
    }

    #[test]
    fn point_mass_column() {
        let ratios = GroupRatios {
            rows: vec![
                Simplex::new(vec![1.0, 0.0]).unwrap(),
                Simplex::new(vec![0.0, 1.0]).unwrap(),
            ],
        };
        let pts: Vec<(u64, usize)> = (0..20).map(|i| (i, (i % 2 == 1) as usize)).collect();
        let plan = assign_datapoints(&pts, &ratios, &mut rng(3)).unwrap();
        for (i, &c) in plan.client_of.iter().enumerate() {
            assert_eq!(c, i % 2);
        }
    }

    #[test]
    fn zero_column_mass_is_allocation_error() {
        let ratios = GroupRatios {
            rows: vec![
                Simplex::new(vec![1.0, 0.0]).unwrap(),
                Simplex::new(vec![1.0, 0.0]).unwrap(),
            ],
        };
        let pts = vec![(0, 0), (1, 1), (2, 0)];
        assert!(matches!(
            assign_datapoints(&pts, &ratios, &mut rng(0)),
            Err(Error::Allocation(_))
        ));
    }

    #[test]
    fn equal_ratios_split_evenly() {
        let ratios = GroupRatios {
            rows: vec![Simplex::new(vec![1.0]).unwrap(), Simplex::new(vec![1.0]).unwrap()],
        };
        let pts: Vec<(u64, usize)> = (0..10_000).map(|i| (i, 0)).collect();
        let plan = assign_datapoints(&pts, &ratios, &mut rng(4)).unwrap();
        let sizes = plan.client_sizes();
        assert!((sizes[0] as i64 - 5000).abs() <= 200, "{sizes:?}");
    }

    #[test]
    fn empty_clients_are_repaired() {
        let mut client_of = vec![0, 0, 0, 1, 0];
        repair_empty_clients(&mut client_of, 4);
        let mut sizes = [0; 4];
        for c in &client_of {
            sizes[*c] += 1;
        }
        assert!(sizes.iter().all(|s| *s >= 1));
        assert_eq!(client_of.len(), 5);
    }

    #[test]
    fn summary_conservation_and_top2() {
        let plan = PartitionPlan {
            ids: (0..6).collect(),
            client_of: vec![0, 0, 0, 1, 1, 1],
            group_of: vec![2, 2, 2, 0, 1, 2],
            ratios: None,
            num_clients: 2,
        };
        let s = heterogeneity_summary(&plan);
        assert_eq!(s.clients[0].top2_mass, 1.0);
        assert!((s.clients[1].top2_mass - 2.0 / 3.0).abs() < 1e-15);
        for c in &s.clients {
            assert_eq!(c.histogram.iter().sum::<usize>(), c.size);
        }
    }

    #[test]
    fn plan_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = PartitionPlan {
            ids: vec![5, 3, 9],
            client_of: vec![1, 0, 1],
            group_of: vec![0, 0, 2],
            ratios: None,
            num_clients: 3,
        };
        let p = dir.path().join("plan.csv");
        save_plan(&plan, &p).unwrap();
        assert_eq!(load_plan(&p).unwrap(), plan);
    }
}
