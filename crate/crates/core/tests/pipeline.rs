use fedhet::analysis::adjusted_rand_index;
use fedhet::analysis::Clustering;
use fedhet::datasets::load_dataset;
use fedhet::embedding::load_clusters;
use fedhet::partitioner::{load_plan, PartitionMode};
use fedhet::runner::{
    cells, final_losses, read_round_losses, run_command, Command, ExperimentConfig, OutputTree, RunOptions,
};

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml(
        r#"
seed = 11
[dataset.synthetic]
groups = 4
feature_dim = 4
target_dim = 2
points = 320
feature_noise = 0.2
center_scale = 4.0
task = "regression-l1"
[model]
hidden = [8, 8]
[pretrain]
max_epochs = 10
validation_points = 30
[embedding]
k = 4
seeds = [0, 1]
silhouette_ks = [2, 4, 8]
[partition]
num_clients = 4
alphas = [0.1, 100.0]
[train]
methods = ["fedavg", "fedrep", "fedamp"]
rounds = 3
local_steps = 5
lr0 = 0.1
[analysis]
permutations = 10
"#,
    )
    .unwrap()
}

fn run(cfg: &ExperimentConfig, dir: &std::path::Path) -> OutputTree {
    let opts = RunOptions {
        out: dir.to_path_buf(),
        jobs: Some(2),
        reproducible: true,
    };
    let failures = run_command(Command::All, cfg, &opts).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    OutputTree::new(dir)
}

#[test]
fn pipeline_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let tree = run(&cfg, dir.path());
    let ds = load_dataset(&tree.dataset()).unwrap();
    assert_eq!(ds.len(), 320);

    // separable groups: the embedding k-means recovers them
    let groups = Clustering::from_pairs(&load_clusters(&tree.groups()).unwrap());
    for s in &cfg.embedding.seeds {
        let km = Clustering::from_pairs(&load_clusters(&tree.clusters(*s)).unwrap());
        assert!(adjusted_rand_index(&groups, &km).unwrap() > 0.5);
    }

    for mode in [PartitionMode::EmbeddingBased, PartitionMode::ClassBased] {
        for &alpha in &cfg.partition.alphas {
            let plan = load_plan(&tree.plan(mode, alpha, 0)).unwrap();
            assert_eq!(plan.ids, ds.ids());
            assert!(plan.client_sizes().iter().all(|&n| n > 0));
        }
    }

    let losses = final_losses(&cfg, &tree);
    assert_eq!(losses.len(), cells(&cfg).len());
    assert!(losses.iter().all(|(_, l)| l.is_some_and(f64::is_finite)));
    for c in cells(&cfg) {
        assert_eq!(read_round_losses(&tree.round_log(&c)).unwrap().len(), 3);
        let metrics = std::fs::read_to_string(tree.cell_metrics(&c)).unwrap();
        assert!(metrics.starts_with("metric,value\nrmse,"), "{metrics}");
    }

    let heat = std::fs::read_to_string(tree.heatmap()).unwrap();
    assert!(heat.starts_with("task,class_ari,class_p,group_ari,group_p,kmeans_ari,kmeans_p\n"));
    let table = std::fs::read_to_string(tree.cross_seed(PartitionMode::EmbeddingBased)).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 2);
    assert_eq!(std::fs::read_to_string(tree.gaps()).unwrap(), "cell,reason\n");
}

#[test]
fn rerunning_report_appends_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let tree = run(&cfg, dir.path());
    let opts = RunOptions {
        out: dir.path().to_path_buf(),
        jobs: None,
        reproducible: true,
    };
    run_command(Command::Report, &cfg, &opts).unwrap();
    let m = fedhet::runner::Manifest::load_or_default(&tree.manifest()).unwrap();
    assert_eq!(m.runs.len(), 2);
    assert_eq!(m.runs[1].version, 2);
    assert_eq!(m.runs[0].files, m.runs[1].files);
}

#[test]
fn missing_cells_show_up_as_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let tree = run(&cfg, dir.path());
    let victim = cells(&cfg)[0];
    std::fs::remove_file(tree.round_log(&victim)).unwrap();
    let opts = RunOptions {
        out: dir.path().to_path_buf(),
        jobs: None,
        reproducible: true,
    };
    let failures = run_command(Command::Analyze, &cfg, &opts).unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].cell, victim.name());
    let gaps = std::fs::read_to_string(tree.gaps()).unwrap();
    assert!(gaps.contains(&victim.name()));
}
