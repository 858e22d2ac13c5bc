//! End-to-end pipeline: generate, embed, partition, train, analyze, report.
//!
//! Stages talk to each other only through files under the output directory,
//! so each can be rerun on its own.

mod config;
mod manifest;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{
    aggregate_table_to_string, cross_seed_aggregate, heatmap_to_string, mean_iou, plot_data_to_string,
    similarity_heatmap, task_metric, AggregateRow, Clustering, MetricKind, MetricParams, TaskClusterings,
};
use crate::datasets::{
    filter_top_k_classes, generate_synthetic_grouped, load_dataset, load_label_probabilities, save_dataset,
    GroupedDataset, Target,
};
use crate::embedding::{
    extract_embeddings, kmeans_fit, load_clusters, pretrain_centralized, save_clusters, save_embeddings,
    silhouette_sweep, PretrainConfig,
};
use crate::error::{Error, Result};
use crate::fl::{round_log_to_string, run_federated, split_clients, FlOutcome, Method};
use crate::models::{forward, save_params, Architecture};
use crate::numerics::{derive_seed, random_permutation, RngStream};
use crate::partitioner::{
    class_based_partition, embedding_based_partition, heterogeneity_summary, load_plan, save_plan, summary_to_string,
    PartitionConfig, PartitionMode,
};
use crate::tabular::{fmt_f64, write_atomic, Table, Writer};

pub use config::{
    AnalysisSection, DatasetSection, EmbeddingSection, ExperimentConfig, ExtraClustering, ModelSection,
    PartitionSection, TrainSection,
};
pub use manifest::{build_manifest_run, Manifest, ManifestCell, ManifestFile, ManifestRun};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Embed,
    Partition,
    Train,
    Analyze,
    Report,
    All,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "generate" => Command::Generate,
            "embed" => Command::Embed,
            "partition" => Command::Partition,
            "train" => Command::Train,
            "analyze" => Command::Analyze,
            "report" => Command::Report,
            "all" => Command::All,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub reproducible: bool,
}

/// Something that went wrong in one cell without stopping the run.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

/// One (method, mode, alpha, seed) training job.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub mode: PartitionMode,
    pub alpha: f64,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_{}", self.method, partition_name(self.mode, self.alpha, self.seed))
    }
}

fn partition_name(mode: PartitionMode, alpha: f64, seed: u64) -> String {
    format!("{}_alpha{}_seed{seed}", mode.as_str(), fmt_f64(alpha))
}

/// File locations inside an output directory.
#[derive(Clone, Debug)]
pub struct OutputTree {
    root: PathBuf,
}

impl OutputTree {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }

    pub fn groups(&self) -> PathBuf {
        self.root.join("groups.csv")
    }

    pub fn embed_model(&self) -> PathBuf {
        self.root.join("embed/model.params")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.root.join("embed/pretrain.csv")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embed/embeddings.csv")
    }

    pub fn clusters(&self, seed: u64) -> PathBuf {
        self.root.join(format!("embed/clusters_seed{seed}.csv"))
    }

    pub fn silhouette(&self) -> PathBuf {
        self.root.join("embed/silhouette.csv")
    }

    pub fn plan(&self, mode: PartitionMode, alpha: f64, seed: u64) -> PathBuf {
        self.root
            .join(format!("partition/{}.csv", partition_name(mode, alpha, seed)))
    }

    pub fn plan_summary(&self, mode: PartitionMode, alpha: f64, seed: u64) -> PathBuf {
        self.root
            .join(format!("partition/{}.summary.csv", partition_name(mode, alpha, seed)))
    }

    pub fn round_log(&self, cell: &Cell) -> PathBuf {
        self.root.join(format!("train/{}.log.csv", cell.name()))
    }

    pub fn final_params(&self, cell: &Cell) -> PathBuf {
        self.root.join(format!("train/{}.params", cell.name()))
    }

    pub fn cell_metrics(&self, cell: &Cell) -> PathBuf {
        self.root.join(format!("train/{}.metrics.csv", cell.name()))
    }

    pub fn cell_error(&self, cell: &Cell) -> PathBuf {
        self.root.join(format!("train/{}.error.txt", cell.name()))
    }

    pub fn plot(&self, mode: PartitionMode, method: Method) -> PathBuf {
        self.root.join(format!("analysis/plot_{}_{method}.csv", mode.as_str()))
    }

    pub fn cross_seed(&self, mode: PartitionMode) -> PathBuf {
        self.root.join(format!("analysis/cross_seed_{}.csv", mode.as_str()))
    }

    pub fn metrics_table(&self, mode: PartitionMode) -> PathBuf {
        self.root.join(format!("analysis/metrics_{}.csv", mode.as_str()))
    }

    pub fn heatmap(&self) -> PathBuf {
        self.root.join("analysis/heatmap.csv")
    }

    pub fn gaps(&self) -> PathBuf {
        self.root.join("analysis/gaps.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// Every configured training cell, in a fixed order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &mode in &cfg.partition.modes {
        for &method in &cfg.train.methods {
            for &alpha in &cfg.partition.alphas {
                for &seed in &cfg.embedding.seeds {
                    out.push(Cell {
                        method,
                        mode,
                        alpha,
                        seed,
                    });
                }
            }
        }
    }
    out
}

/// The seed that drives k-means, the partition and FL for one seed entry.
pub fn cell_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    derive_seed(cfg.seed, "cell", seed)
}

/// Runs a command, inside a bounded thread pool when `jobs` is set.
/// Returns the cell failures recorded along the way.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<CellFailure>> {
    let body = || -> Result<Vec<CellFailure>> {
        let tree = OutputTree::new(&opts.out);
        let mut failures = Vec::new();
        let stages: &[Command] = match cmd {
            Command::All => &[
                Command::Generate,
                Command::Embed,
                Command::Partition,
                Command::Train,
                Command::Analyze,
                Command::Report,
            ],
            _ => std::slice::from_ref(&cmd),
        };
        for stage in stages {
            match stage {
                Command::Generate => cmd_generate(cfg, &tree)?,
                Command::Embed => cmd_embed(cfg, &tree)?,
                Command::Partition => cmd_partition(cfg, &tree)?,
                Command::Train => failures.extend(cmd_train(cfg, &tree)?),
                Command::Analyze => failures.extend(cmd_analyze(cfg, &tree)?),
                Command::Report => failures.extend(cmd_report(cfg, &tree, opts.reproducible)?),
                Command::All => unreachable!(),
            }
        }
        // later stages report the same cells again; keep the first cause
        let mut seen = std::collections::HashSet::new();
        failures.retain(|f| seen.insert(f.cell.clone()));
        Ok(failures)
    };
    match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<GroupedDataset> {
    let mut ds = match (&cfg.dataset.synthetic, &cfg.dataset.path) {
        (Some(syn), _) => generate_synthetic_grouped(syn, &mut RngStream::derive(cfg.seed, "dataset", 0, 0))?,
        (None, Some(path)) => load_dataset(path)?,
        (None, None) => return Err(Error::Config("no dataset configured".into())),
    };
    if let Some(p) = &cfg.dataset.label_probabilities {
        ds = ds.with_label_probabilities(&load_label_probabilities(p)?)?;
    }
    if let Some(k) = cfg.dataset.top_k_classes {
        ds = filter_top_k_classes(&ds, k)?;
    }
    Ok(ds)
}

/// Writes `dataset.csv` and, when the points carry latent groups, `groups.csv`.
pub fn cmd_generate(cfg: &ExperimentConfig, tree: &OutputTree) -> Result<()> {
    let ds = build_dataset(cfg)?;
    save_dataset(&ds, &tree.dataset())?;
    if let Some(groups) = ds.latent_groups() {
        save_clusters(&ds.ids(), &groups, &tree.groups())?;
    }
    Ok(())
}

fn pretrain_config(cfg: &ExperimentConfig) -> PretrainConfig {
    PretrainConfig {
        seed: derive_seed(cfg.seed, "pretrain", cfg.pretrain.seed),
        ..cfg.pretrain.clone()
    }
}

/// Centralized pretraining, embedding extraction, one k-means fit per seed
/// and a silhouette sweep on a subsample.
pub fn cmd_embed(cfg: &ExperimentConfig, tree: &OutputTree) -> Result<()> {
    let ds = load_dataset(&tree.dataset())?;
    let arch = cfg.architecture(ds.feature_dim(), ds.output_dim());
    let pre = pretrain_centralized(&ds, &arch, &pretrain_config(cfg))?;
    save_params(&pre.params, &tree.embed_model())?;
    let mut log = Writer::new();
    log.row(["epoch", "val_loss"]);
    for (e, v) in pre.val_history.iter().enumerate() {
        log.row([(e + 1).to_string(), fmt_f64(*v)]);
    }
    write_atomic(&tree.pretrain_log(), log.finish().as_bytes())?;

    let emb = extract_embeddings(&pre.params, &arch, &ds)?;
    save_embeddings(&emb, &tree.embeddings())?;
    let fits: Vec<_> = cfg
        .embedding
        .seeds
        .par_iter()
        .map(|&s| kmeans_fit(&emb, cfg.embedding.k, cell_seed(cfg, s), cfg.embedding.max_iters))
        .collect::<Result<_>>()?;
    for (&s, model) in cfg.embedding.seeds.iter().zip(&fits) {
        save_clusters(emb.ids(), &model.assignments, &tree.clusters(s))?;
    }

    let ks: Vec<usize> = cfg
        .embedding
        .silhouette_ks
        .iter()
        .copied()
        .filter(|&k| k < emb.len())
        .collect();
    let mut w = Writer::new();
    w.row(["k", "silhouette"]);
    if !ks.is_empty() {
        let mut rng = RngStream::derive(cfg.seed, "silhouette-sample", 0, 0);
        let mut rows = random_permutation(emb.len(), &mut rng);
        rows.truncate(cfg.embedding.silhouette_sample.min(emb.len()));
        rows.sort_unstable();
        let sample = emb.select(&rows);
        for (k, s) in silhouette_sweep(&sample, &ks, cfg.seed)? {
            w.row([k.to_string(), fmt_f64(s)]);
        }
    }
    write_atomic(&tree.silhouette(), w.finish().as_bytes())
}

/// One plan and summary per (mode, alpha, seed).
pub fn cmd_partition(cfg: &ExperimentConfig, tree: &OutputTree) -> Result<()> {
    let ds = load_dataset(&tree.dataset())?;
    let mut jobs = Vec::new();
    for &mode in &cfg.partition.modes {
        for &alpha in &cfg.partition.alphas {
            for &seed in &cfg.embedding.seeds {
                jobs.push((mode, alpha, seed));
            }
        }
    }
    jobs.par_iter()
        .map(|&(mode, alpha, seed)| {
            let pc = PartitionConfig {
                num_clients: cfg.partition.num_clients,
                alpha,
                mode,
                seed: cell_seed(cfg, seed),
            };
            let plan = match mode {
                PartitionMode::ClassBased => class_based_partition(&ds, &pc)?,
                PartitionMode::EmbeddingBased => {
                    embedding_based_partition(&ds, &load_clusters(&tree.clusters(seed))?, &pc)?
                }
            };
            save_plan(&plan, &tree.plan(mode, alpha, seed))?;
            write_atomic(
                &tree.plan_summary(mode, alpha, seed),
                summary_to_string(&heterogeneity_summary(&plan)).as_bytes(),
            )
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

/// Metrics of a finished run over every client's validation points, each
/// scored by the model that client would use.
pub fn cell_task_metrics(
    ds: &GroupedDataset,
    plan: &crate::partitioner::PartitionPlan,
    arch: &Architecture,
    outcome: &FlOutcome,
    validation_fraction: f64,
    seed: u64,
) -> Result<Vec<(MetricKind, f64)>> {
    let splits = split_clients(plan, validation_fraction, seed);
    let mut pred = Vec::new();
    let mut target = Vec::new();
    let mut pred_class = Vec::new();
    let mut target_class = Vec::new();
    for ((_, val), model) in splits.iter().zip(&outcome.client_models) {
        for &i in val {
            let p = &ds.points()[i];
            let (out, _) = forward(model, arch, &p.features)?;
            match &p.target {
                Target::Values(t) => {
                    pred.extend_from_slice(&out);
                    target.extend_from_slice(t);
                }
                Target::Class(c) => {
                    let best = crate::datasets::argmax_label(&out)?;
                    pred_class.push(best);
                    target_class.push(*c);
                }
            }
        }
    }
    let mut out = Vec::new();
    if !pred.is_empty() {
        let params = MetricParams::default();
        out.push((
            MetricKind::Rmse,
            task_metric(MetricKind::Rmse, &pred, &target, &params)?,
        ));
        out.push((
            MetricKind::Psnr,
            task_metric(MetricKind::Psnr, &pred, &target, &params)?,
        ));
    }
    if !pred_class.is_empty() {
        let hits = pred_class.iter().zip(&target_class).filter(|(a, b)| a == b).count();
        out.push((MetricKind::Accuracy, hits as f64 / pred_class.len() as f64));
        let k = ds.num_classes().unwrap_or(0).max(1);
        out.push((MetricKind::MIoU, mean_iou(&pred_class, &target_class, k)?));
    }
    Ok(out)
}

fn train_cell(cfg: &ExperimentConfig, tree: &OutputTree, ds: &GroupedDataset, cell: &Cell) -> Result<()> {
    let plan = load_plan(&tree.plan(cell.mode, cell.alpha, cell.seed))?;
    if plan.ids != ds.ids() {
        return Err(Error::InvalidInput(format!(
            "{} does not match the dataset",
            cell.name()
        )));
    }
    let arch = cfg.architecture(ds.feature_dim(), ds.output_dim());
    let seed = cell_seed(cfg, cell.seed);
    let fc = cfg.train.fl_config(cell.method, seed);
    let error_path = tree.cell_error(cell);
    match run_federated(ds, &plan, &arch, &fc) {
        Ok(outcome) => {
            write_atomic(&tree.round_log(cell), round_log_to_string(&outcome.records).as_bytes())?;
            save_params(&outcome.global, &tree.final_params(cell))?;
            let metrics = cell_task_metrics(ds, &plan, &arch, &outcome, fc.validation_fraction, seed)?;
            let mut w = Writer::new();
            w.row(["metric", "value"]);
            for (k, v) in metrics {
                w.row([k.as_str().to_string(), fmt_f64(v)]);
            }
            write_atomic(&tree.cell_metrics(cell), w.finish().as_bytes())?;
            if error_path.exists() {
                std::fs::remove_file(&error_path).map_err(|e| Error::io("removing stale error file", e))?;
            }
            Ok(())
        }
        Err(failure) => {
            write_atomic(&tree.round_log(cell), round_log_to_string(&failure.records).as_bytes())?;
            write_atomic(&error_path, format!("{}\n", failure.error).as_bytes())?;
            Err(failure.error)
        }
    }
}

/// Runs every cell; a failing cell is recorded and the rest continue.
pub fn cmd_train(cfg: &ExperimentConfig, tree: &OutputTree) -> Result<Vec<CellFailure>> {
    let ds = load_dataset(&tree.dataset())?;
    let all = cells(cfg);
    let results: Vec<Option<CellFailure>> = all
        .par_iter()
        .map(|cell| {
            train_cell(cfg, tree, &ds, cell).err().map(|e| CellFailure {
                cell: cell.name(),
                error: e.to_string(),
            })
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

/// Global validation losses per round, read back from a round log.
pub fn read_round_losses(path: &Path) -> Result<Vec<f64>> {
    let table = Table::read(path)?;
    let header: Vec<String> = [
        "round",
        "global_val_loss",
        "mean_train_loss",
        "min_client_val",
        "max_client_val",
        "lr",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    table.expect_header(&header)?;
    table.rows.iter().map(|r| table.f64_at(r, 1)).collect()
}

fn read_metrics(path: &Path) -> Result<Vec<(String, f64)>> {
    let table = Table::read(path)?;
    table.expect_header(&["metric".to_string(), "value".to_string()])?;
    table
        .rows
        .iter()
        .map(|r| Ok((r.cells[0].clone(), table.f64_at(r, 1)?)))
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    match cross_seed_aggregate(xs) {
        Ok(ms) => ms,
        Err(_) => (xs.iter().sum::<f64>() / xs.len() as f64, f64::NAN),
    }
}

/// Final loss of every cell that completed, `None` for missing or failed
/// cells.
pub fn final_losses(cfg: &ExperimentConfig, tree: &OutputTree) -> Vec<(Cell, Option<f64>)> {
    cells(cfg)
        .into_iter()
        .map(|c| {
            let ok = !tree.cell_error(&c).exists();
            let loss = ok
                .then(|| read_round_losses(&tree.round_log(&c)).ok())
                .flatten()
                .filter(|l| l.len() == cfg.train.rounds)
                .and_then(|l| l.last().copied());
            (c, loss)
        })
        .collect()
}

/// Plot data, cross-seed tables, metric tables and the clustering heatmap.
/// Cells without results are listed in `analysis/gaps.csv`.
pub fn cmd_analyze(cfg: &ExperimentConfig, tree: &OutputTree) -> Result<Vec<CellFailure>> {
    let mut gaps = Vec::new();
    let mut present: Vec<(Cell, Vec<f64>)> = Vec::new();
    for cell in cells(cfg) {
        if tree.cell_error(&cell).exists() {
            gaps.push((cell.name(), "training failed".to_string()));
            continue;
        }
        match read_round_losses(&tree.round_log(&cell)) {
            Ok(l) if l.len() == cfg.train.rounds => present.push((cell, l)),
            Ok(l) => gaps.push((cell.name(), format!("{} of {} rounds", l.len(), cfg.train.rounds))),
            Err(e) => gaps.push((cell.name(), e.to_string())),
        }
    }

    for &mode in &cfg.partition.modes {
        let mut agg = Vec::new();
        let mut metric_rows: Vec<(String, f64, String, f64, f64)> = Vec::new();
        for &method in &cfg.train.methods {
            let mut series = Vec::new();
            for &alpha in &cfg.partition.alphas {
                let runs: Vec<&(Cell, Vec<f64>)> = present
                    .iter()
                    .filter(|(c, _)| c.mode == mode && c.method == method && c.alpha == alpha)
                    .collect();
                if runs.is_empty() {
                    series.push((alpha, Vec::new()));
                    continue;
                }
                let rounds = runs[0].1.len();
                let mean_curve: Vec<f64> = (0..rounds)
                    .map(|t| runs.iter().map(|(_, l)| l[t]).sum::<f64>() / runs.len() as f64)
                    .collect();
                series.push((alpha, mean_curve));
                let finals: Vec<f64> = runs.iter().filter_map(|(_, l)| l.last().copied()).collect();
                let (mean, std) = mean_std(&finals);
                agg.push(AggregateRow {
                    task: method.to_string(),
                    alpha,
                    mean,
                    std,
                });

                let mut by_metric: Vec<(String, Vec<f64>)> = Vec::new();
                for (c, _) in &runs {
                    let Ok(ms) = read_metrics(&tree.cell_metrics(c)) else {
                        gaps.push((c.name(), "missing metrics".into()));
                        continue;
                    };
                    for (name, v) in ms {
                        match by_metric.iter_mut().find(|(n, _)| *n == name) {
                            Some((_, vs)) => vs.push(v),
                            None => by_metric.push((name, vec![v])),
                        }
                    }
                }
                for (name, vs) in by_metric {
                    let (m, s) = mean_std(&vs);
                    metric_rows.push((method.to_string(), alpha, name, m, s));
                }
            }
            write_atomic(&tree.plot(mode, method), plot_data_to_string(&series).as_bytes())?;
        }
        write_atomic(&tree.cross_seed(mode), aggregate_table_to_string(&agg).as_bytes())?;
        let mut w = Writer::new();
        w.row(["task", "alpha", "metric", "mean", "std"]);
        for (task, alpha, name, m, s) in metric_rows {
            w.row([task, fmt_f64(alpha), name, fmt_f64(m), fmt_f64(s)]);
        }
        write_atomic(&tree.metrics_table(mode), w.finish().as_bytes())?;
    }

    if let Err(e) = write_heatmap(cfg, tree) {
        gaps.push(("heatmap".into(), e.to_string()));
    }

    let mut w = Writer::new();
    w.row(["cell", "reason"]);
    for (c, r) in &gaps {
        w.row([c.clone(), r.replace(',', ";")]);
    }
    write_atomic(&tree.gaps(), w.finish().as_bytes())?;
    Ok(gaps
        .into_iter()
        .map(|(cell, error)| CellFailure { cell, error })
        .collect())
}

fn write_heatmap(cfg: &ExperimentConfig, tree: &OutputTree) -> Result<()> {
    let ds = load_dataset(&tree.dataset())?;
    let ids = ds.ids();
    let mut tasks = Vec::new();
    if let Ok(labels) = ds.class_labels() {
        tasks.push(TaskClusterings {
            name: "class".into(),
            runs: vec![Clustering::new(ids.clone(), labels)?],
        });
    }
    if let Some(groups) = ds.latent_groups() {
        tasks.push(TaskClusterings {
            name: "group".into(),
            runs: vec![Clustering::new(ids.clone(), groups)?],
        });
    }
    let runs = cfg
        .embedding
        .seeds
        .iter()
        .map(|&s| Ok(Clustering::from_pairs(&load_clusters(&tree.clusters(s))?)))
        .collect::<Result<Vec<_>>>()?;
    tasks.push(TaskClusterings {
        name: "kmeans".into(),
        runs,
    });
    for extra in &cfg.analysis.clusterings {
        tasks.push(TaskClusterings {
            name: extra.name.clone(),
            runs: vec![Clustering::from_pairs(&load_clusters(&extra.path)?)],
        });
    }
    if tasks.len() < 2 {
        return Err(Error::InvalidInput("fewer than two clusterings for the heatmap".into()));
    }
    let cells = similarity_heatmap(&tasks, cfg.analysis.permutations, cfg.seed)?;
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    write_atomic(&tree.heatmap(), heatmap_to_string(&names, &cells).as_bytes())
}

/// Appends a run to `manifest.json` describing every produced file.
pub fn cmd_report(cfg: &ExperimentConfig, tree: &OutputTree, reproducible: bool) -> Result<Vec<CellFailure>> {
    let mut manifest = Manifest::load_or_default(&tree.manifest())?;
    let run = build_manifest_run(cfg, tree, reproducible, manifest.runs.len() + 1)?;
    let failures = run
        .cells
        .iter()
        .filter(|c| c.status != "ok")
        .map(|c| CellFailure {
            cell: c.name.clone(),
            error: c.error.clone().unwrap_or_else(|| c.status.clone()),
        })
        .collect();
    manifest.runs.push(run);
    manifest.save(&tree.manifest())?;
    Ok(failures)
}
