//! JSON run configuration shared by every CLI command. Files are strict:
//! unknown keys are rejected by name. `--set key=value` overrides are
//! applied to the raw JSON before typed validation, and the effective
//! config is echoed into the output directory for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cse::CseConfig;
use crate::embeddings::{load_contextual, load_static, EmbeddingError, HashFallback, Provider};
use crate::model::{EncoderKind, ModelConfig};
use crate::neural::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Invalid(String),
    #[error("missing required config key {0:?} for this command")]
    MissingPath(&'static str),
    #[error("bad --set override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("embedding error: {0}")]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Static,
    Contextual,
    #[default]
    Hash,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_emb_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_emb_dim() -> usize {
    50
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: ProviderKind::Hash,
            path: None,
            dim: default_emb_dim(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // data paths
    pub corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub temprob: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub embeddings: EmbeddingConfig,

    // `compare` inputs: two prediction files scored against the gold corpus
    pub compare_a: Option<PathBuf>,
    pub compare_b: Option<PathBuf>,

    // `graph` subcommand: operation and output path
    pub graph_op: GraphOp,
    pub graph_out: Option<PathBuf>,

    // artifacts; relative names land inside `output_dir`
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub cse_checkpoint: PathBuf,
    pub predictions: PathBuf,
    pub inferred: PathBuf,
    pub report: PathBuf,

    // classifier shape
    pub encoder: EncoderKind,
    pub lstm_hidden: usize,
    pub ffnn_hidden: usize,
    pub cse_bins: usize,
    pub cse_bin_dim: usize,
    pub max_tokens: usize,

    // classifier training
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_decay: f64,
    pub lr_period: usize,
    pub dev_fraction: f64,

    // common-sense encoder
    pub use_cse: bool,
    pub cse_emb_dim: usize,
    pub cse_branch_hidden: usize,
    pub cse_combiner_hidden: usize,
    pub cse_lr: f64,
    pub cse_epochs: usize,
    pub cse_batch_size: usize,

    // inference objective over log scores instead of raw probabilities
    pub log_scores: bool,

    // optional experiment grid: named override sets applied to this config
    pub grid: Option<Vec<GridEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphOp {
    #[default]
    Check,
    Closure,
    Reduce,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub name: String,
    pub overrides: serde_json::Map<String, serde_json::Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let cse = CseConfig::default();
        let cse_train = crate::cse::default_cse_train();
        RunConfig {
            corpus: None,
            eval_corpus: None,
            temprob: None,
            graph: None,
            embeddings: EmbeddingConfig::default(),
            compare_a: None,
            compare_b: None,
            graph_op: GraphOp::Check,
            graph_out: None,
            output_dir: PathBuf::from("out"),
            checkpoint: PathBuf::from("classifier.json"),
            cse_checkpoint: PathBuf::from("cse.json"),
            predictions: PathBuf::from("predictions.jsonl"),
            inferred: PathBuf::from("inferred.jsonl"),
            report: PathBuf::from("report.json"),
            encoder: model.encoder,
            lstm_hidden: model.lstm_hidden,
            ffnn_hidden: model.ffnn_hidden,
            cse_bins: model.cse_bins,
            cse_bin_dim: model.cse_bin_dim,
            max_tokens: model.max_tokens,
            lr: model.train.lr,
            epochs: model.train.epochs,
            batch_size: model.train.batch_size,
            seed: model.train.seed,
            lr_decay: model.train.lr_decay,
            lr_period: model.train.lr_period,
            dev_fraction: 0.2,
            use_cse: false,
            cse_emb_dim: cse.emb_dim,
            cse_branch_hidden: cse.branch_hidden,
            cse_combiner_hidden: cse.combiner_hidden,
            cse_lr: cse_train.lr,
            cse_epochs: cse_train.epochs,
            cse_batch_size: cse_train.batch_size,
            log_scores: false,
            grid: None,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder,
            lstm_hidden: self.lstm_hidden,
            ffnn_hidden: self.ffnn_hidden,
            cse_bins: self.cse_bins,
            cse_bin_dim: self.cse_bin_dim,
            max_tokens: self.max_tokens,
            train: TrainConfig {
                lr: self.lr,
                epochs: self.epochs,
                batch_size: self.batch_size,
                seed: self.seed,
                lr_decay: self.lr_decay,
                lr_period: self.lr_period,
            },
        }
    }

    pub fn cse_config(&self) -> CseConfig {
        CseConfig {
            emb_dim: self.cse_emb_dim,
            branch_hidden: self.cse_branch_hidden,
            combiner_hidden: self.cse_combiner_hidden,
        }
    }

    pub fn cse_train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.cse_lr,
            epochs: self.cse_epochs,
            batch_size: self.cse_batch_size,
            seed: self.seed,
            lr_decay: self.lr_decay,
            lr_period: self.lr_period,
        }
    }

    /// Relative artifact names resolve under the output directory.
    pub fn artifact(&self, name: &Path) -> PathBuf {
        if name.is_absolute() {
            name.to_path_buf()
        } else {
            self.output_dir.join(name)
        }
    }

    pub fn require<'a>(
        &self,
        field: Option<&'a PathBuf>,
        name: &'static str,
    ) -> Result<&'a PathBuf, ConfigError> {
        field.ok_or(ConfigError::MissingPath(name))
    }

    /// Constructs the embedding provider, loading tables from disk as needed.
    pub fn provider(&self) -> Result<Provider, ConfigError> {
        let fallback = |dim| HashFallback {
            dim,
            seed: self.embeddings.seed,
        };
        match self.embeddings.kind {
            ProviderKind::Hash => Ok(Provider::Hash(fallback(self.embeddings.dim))),
            ProviderKind::Static => {
                let path = self.require(self.embeddings.path.as_ref(), "embeddings.path")?;
                Ok(Provider::Static(load_static(path, self.embeddings.seed)?))
            }
            ProviderKind::Contextual => {
                let path = self.require(self.embeddings.path.as_ref(), "embeddings.path")?;
                Ok(Provider::Contextual(load_contextual(path)?))
            }
        }
    }
}

/// Applies one `key=value` override to a JSON object. Dotted keys descend
/// into nested objects; values parse as JSON when possible, else as strings.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    if key.is_empty() {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("key {key:?} does not name an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

fn typed(value: serde_json::Value) -> Result<RunConfig, ConfigError> {
    serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))
}

/// Applies a grid entry's overrides on top of a base config.
pub fn with_overrides(
    base: &RunConfig,
    overrides: &serde_json::Map<String, serde_json::Value>,
) -> Result<RunConfig, ConfigError> {
    let mut value = serde_json::to_value(base).expect("config serializes");
    let obj = value.as_object_mut().unwrap();
    for (k, v) in overrides {
        obj.insert(k.clone(), v.clone());
    }
    typed(value)
}

pub fn parse_config(path: impl AsRef<Path>, sets: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if !value.is_object() {
        return Err(ConfigError::Invalid("config root must be an object".into()));
    }
    for spec in sets {
        apply_override(&mut value, spec)?;
    }
    typed(value)
}

/// Writes the fully defaulted config next to the run's other artifacts.
pub fn echo_config(config: &RunConfig) -> Result<PathBuf, ConfigError> {
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("effective-config.json");
    let mut text = serde_json::to_string_pretty(config).expect("config serializes");
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}
