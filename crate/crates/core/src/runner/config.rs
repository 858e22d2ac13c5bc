use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::SyntheticConfig;
use crate::embedding::{PretrainConfig, DEFAULT_K, DEFAULT_MAX_ITERS, DEFAULT_SWEEP_KS};
use crate::error::{Error, Result};
use crate::fl::{FlConfig, Method};
use crate::models::{Activation, Architecture};
use crate::partitioner::PartitionMode;

/// Top-level experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Either a synthetic generator or a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub synthetic: Option<SyntheticConfig>,
    pub path: Option<PathBuf>,
    /// Per-point class probabilities; the argmax replaces the class label.
    pub label_probabilities: Option<PathBuf>,
    pub top_k_classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub max_iters: usize,
    pub silhouette_ks: Vec<usize>,
    /// Points used for the silhouette sweep (all when smaller).
    pub silhouette_sample: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seeds: vec![0, 1, 2],
            max_iters: DEFAULT_MAX_ITERS,
            silhouette_ks: DEFAULT_SWEEP_KS.to_vec(),
            silhouette_sample: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub num_clients: usize,
    pub alphas: Vec<f64>,
    pub modes: Vec<PartitionMode>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            num_clients: 25,
            alphas: vec![0.1, 10.0, 1000.0],
            modes: vec![PartitionMode::EmbeddingBased, PartitionMode::ClassBased],
        }
    }
}

/// Shared FL hyperparameters plus the list of methods to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub methods: Vec<Method>,
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub mu: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub self_weight: f64,
    pub head_steps: Option<usize>,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = FlConfig::default();
        Self {
            methods: Method::ALL.to_vec(),
            rounds: d.rounds,
            local_steps: d.local_steps,
            batch_size: d.batch_size,
            lr0: d.lr0,
            lr_decay: d.lr_decay,
            mu: d.mu,
            lambda: d.lambda,
            sigma: d.sigma,
            self_weight: d.self_weight,
            head_steps: d.head_steps,
            validation_fraction: d.validation_fraction,
        }
    }
}

impl TrainSection {
    pub fn fl_config(&self, method: Method, seed: u64) -> FlConfig {
        FlConfig {
            method,
            rounds: self.rounds,
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            lr0: self.lr0,
            lr_decay: self.lr_decay,
            mu: self.mu,
            lambda: self.lambda,
            sigma: self.sigma,
            self_weight: self.self_weight,
            head_steps: self.head_steps,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

/// An externally produced clustering to include in the similarity heatmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraClustering {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub permutations: usize,
    pub clusterings: Vec<ExtraClustering>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            permutations: 100,
            clusterings: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.dataset.path.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.dataset.label_probabilities.as_mut() {
            fix(p);
        }
        for c in &mut cfg.analysis.clusterings {
            fix(&mut c.path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match (&self.dataset.synthetic, &self.dataset.path) {
            (Some(_), Some(_)) => return bad("dataset.synthetic and dataset.path are mutually exclusive"),
            (None, None) => return bad("dataset needs either a synthetic table or a path"),
            _ => {}
        }
        if self.partition.alphas.is_empty() {
            return bad("partition.alphas must not be empty");
        }
        if self.partition.modes.is_empty() {
            return bad("partition.modes must not be empty");
        }
        if self.train.methods.is_empty() {
            return bad("train.methods must not be empty");
        }
        if self.embedding.seeds.is_empty() {
            return bad("embedding.seeds must not be empty");
        }
        let mut seeds = self.embedding.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.embedding.seeds.len() {
            return bad("embedding.seeds contains duplicates");
        }
        if self.partition.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return bad("every alpha must be positive and finite");
        }
        if self.embedding.k < 1 {
            return bad("embedding.k must be at least 1");
        }
        if self.model.hidden.is_empty() {
            return bad("model.hidden must list at least one layer");
        }
        if self.analysis.permutations == 0 {
            return bad("analysis.permutations must be at least 1");
        }
        for m in &self.train.methods {
            self.train
                .fl_config(*m, 0)
                .validate()
                .map_err(|e| Error::Config(format!("train: {e}")))?;
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, output_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.model.hidden.clone(),
            activation: self.model.activation,
            output_dim,
        }
    }

    /// SHA-256 of the canonical JSON form of the parsed config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
