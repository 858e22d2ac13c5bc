use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cells, ExperimentConfig, OutputTree};
use crate::error::{Error, Result};
use crate::tabular::write_atomic;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<ManifestRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub version: usize,
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
    pub reproducible: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub created_unix_secs: Option<u64>,
    pub config: ExperimentConfig,
    pub cells: Vec<ManifestCell>,
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub name: String,
    pub method: String,
    pub mode: String,
    pub alpha: f64,
    pub seed: u64,
    /// `ok`, `failed` or `missing`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub stage: String,
    pub bytes: u64,
    pub sha256: String,
}

impl Manifest {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io("listing output", e))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hashes every file in the tree (except the manifest itself) and records
/// the status of each configured cell.
pub fn build_manifest_run(
    cfg: &ExperimentConfig,
    tree: &OutputTree,
    reproducible: bool,
    version: usize,
) -> Result<ManifestRun> {
    let root = tree.root();
    let mut paths = Vec::new();
    if root.exists() {
        walk(root, &mut paths)?;
    }
    let manifest_path = tree.manifest();
    paths.retain(|p| *p != manifest_path && p.extension().is_none_or(|e| e != "partial"));
    let mut files = paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            let rel = relative(root, p);
            let stage = match rel.split_once('/') {
                Some((dir, _)) => dir.to_string(),
                None => "generate".to_string(),
            };
            Ok(ManifestFile {
                path: rel,
                stage,
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    files.sort_by(|a, b| a.path.cmp(&b.path));

    let cells = cells(cfg)
        .into_iter()
        .map(|c| {
            let mut produced: Vec<String> = [
                tree.round_log(&c),
                tree.final_params(&c),
                tree.cell_metrics(&c),
                tree.cell_error(&c),
            ]
            .iter()
            .filter(|p| p.exists())
            .map(|p| relative(root, p))
            .collect();
            produced.push(relative(root, &tree.plan(c.mode, c.alpha, c.seed)));
            let error_path = tree.cell_error(&c);
            let (status, error) = if error_path.exists() {
                let msg = std::fs::read_to_string(&error_path).unwrap_or_default();
                ("failed", Some(msg.trim().to_string()))
            } else if tree.cell_metrics(&c).exists() {
                ("ok", None)
            } else {
                ("missing", None)
            };
            ManifestCell {
                name: c.name(),
                method: c.method.to_string(),
                mode: c.mode.as_str().to_string(),
                alpha: c.alpha,
                seed: c.seed,
                status: status.to_string(),
                error,
                files: produced,
            }
        })
        .collect();

    let created_unix_secs = (!reproducible).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    Ok(ManifestRun {
        version,
        tool: format!("fedhet {}", env!("CARGO_PKG_VERSION")),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        reproducible,
        created_unix_secs,
        config: cfg.clone(),
        cells,
        files,
    })
}
