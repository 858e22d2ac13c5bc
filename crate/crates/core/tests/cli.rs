use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedhet::runner::Manifest;

const TINY: &str = r#"
seed = 3

[dataset.synthetic]
groups = 3
feature_dim = 3
target_dim = 2
points = 150
feature_noise = 0.3
task = "regression-mse"

[model]
hidden = [4]

[pretrain]
max_epochs = 2
validation_points = 20

[embedding]
k = 3
seeds = [0, 1]
silhouette_ks = [2, 3]

[partition]
num_clients = 3
alphas = [0.5, 50.0]

[train]
methods = ["fedavg", "scaffold"]
rounds = 2
local_steps = 3
lr0 = 0.05

[analysis]
permutations = 5
"#;

fn fedhet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedhet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn all_succeeds_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = fedhet(&["all", "--config", s(&cfg), "--out", s(&out), "--reproducible"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load_or_default(&out.join("manifest.json")).unwrap();
    assert_eq!(m.runs.len(), 1);
    let run = &m.runs[0];
    assert!(run.created_unix_secs.is_none());
    assert_eq!(run.cells.len(), 2 * 2 * 2 * 2);
    assert!(run.cells.iter().all(|c| c.status == "ok"));
    assert!(run.files.iter().any(|f| f.path == "analysis/heatmap.csv"));
    assert!(run.files.iter().all(|f| f.sha256.len() == 64));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        fedhet(&["generate", "--config", s(&cfg), "--out", s(&a)]).status.code(),
        Some(0)
    );
    assert_eq!(
        fedhet(&["generate", "--config", s(&cfg), "--out", s(&b), "--seed", "4"])
            .status
            .code(),
        Some(0)
    );
    let da = std::fs::read(a.join("dataset.csv")).unwrap();
    let db = std::fs::read(b.join("dataset.csv")).unwrap();
    assert_ne!(da, db);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "[dataset.synthetic]\npoints = 100\n[partition]\nalpha = [1.0]\n",
    );
    let o = fedhet(&["all", "--config", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    assert_eq!(
        fedhet(&["all", "--config", "/definitely/missing.toml"]).status.code(),
        Some(1)
    );
    assert_eq!(fedhet(&["frobnicate", "--config", s(&bad)]).status.code(), Some(1));
    assert_eq!(fedhet(&["--help"]).status.code(), Some(0));
}

#[test]
fn diverging_cells_exit_with_two_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("lr0 = 0.05", "lr0 = 1e100");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = fedhet(&["all", "--config", s(&cfg), "--out", s(&out), "--reproducible"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load_or_default(&out.join("manifest.json")).unwrap();
    let failed: Vec<_> = m.runs[0].cells.iter().filter(|c| c.status == "failed").collect();
    assert!(!failed.is_empty());
    assert!(failed
        .iter()
        .all(|c| c.error.as_deref().is_some_and(|e| e.contains("diverged"))));
    let gaps = std::fs::read_to_string(out.join("analysis/gaps.csv")).unwrap();
    assert!(gaps.lines().count() > 1);
}

#[test]
fn stages_can_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let staged = dir.path().join("staged");
    for verb in ["generate", "embed", "partition", "train", "analyze", "report"] {
        let o = fedhet(&[verb, "--config", s(&cfg), "--out", s(&staged), "--reproducible"]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{verb}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let whole = dir.path().join("whole");
    assert_eq!(
        fedhet(&["all", "--config", s(&cfg), "--out", s(&whole), "--reproducible"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        std::fs::read(staged.join("manifest.json")).unwrap(),
        std::fs::read(whole.join("manifest.json")).unwrap()
    );
}

#[test]
fn training_without_partitions_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    assert_eq!(
        fedhet(&["generate", "--config", s(&cfg), "--out", s(&out)])
            .status
            .code(),
        Some(0)
    );
    let o = fedhet(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
