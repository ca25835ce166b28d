//! Run configuration: TOML file + CLI flag overrides -> resolved snapshot.
//!
//! Config files use dotted keys / sections (`template.base`,
//! `train.learning_rate`); CLI flags override file values. Relative paths
//! are resolved against the config file's directory. The run id is a
//! content hash of the resolved snapshot, so identical configurations land
//! in the same output directory and can resume each other's cells.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use promptcls_core::corpus::DataFormat;
use promptcls_core::training::TrainConfig;

use crate::CliError;

pub const DEFAULT_BASE_TEMPLATE: &str = "{TEXT} It was {MASK}";
pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];
pub const DEFAULT_SHOTS: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pet,
    Amulap,
    Laav,
    Petal,
    Npprompt,
    TraditionalFt,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "pet" => Ok(Method::Pet),
            "amulap" => Ok(Method::Amulap),
            "laav" => Ok(Method::Laav),
            "petal" => Ok(Method::Petal),
            "npprompt" => Ok(Method::Npprompt),
            "traditional_ft" => Ok(Method::TraditionalFt),
            other => Err(CliError::Config(format!(
                "unknown method {other:?} (expected pet, amulap, laav, petal, npprompt, or traditional_ft)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Pet => "pet",
            Method::Amulap => "amulap",
            Method::Laav => "laav",
            Method::Petal => "petal",
            Method::Npprompt => "npprompt",
            Method::TraditionalFt => "traditional_ft",
        }
    }

}

/// Which model implementation to load and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Table-driven mock; `table` is the JSON table file.
    Mock { table: PathBuf },
    /// Small trainable masked LM: either load `model` (a checkpoint) or
    /// pretrain from `corpus` (cached under the cache directory).
    Tiny {
        model: Option<PathBuf>,
        corpus: Option<PathBuf>,
        embed_dim: usize,
        hidden_dim: usize,
        max_tokens: usize,
        pretrain_steps: usize,
        pretrain_batch: usize,
        pretrain_lr: f64,
        pretrain_seed: u64,
    },
}

/// The resolved, immutable configuration snapshot of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub conj: String,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset_train: PathBuf,
    pub dataset_test: Option<PathBuf>,
    pub format: String,
    /// Ordered (class, label word) pairs; the order fixes all tie-breaks.
    pub labels: Vec<(String, String)>,
    pub template_base: String,
    pub template_label_aware: Option<String>,
    pub template_conj_search: Option<String>,
    pub train: TrainConfig,
    pub backend: BackendSpec,
    pub conj_shortlist: Vec<String>,
}

impl RunConfig {
    pub fn data_format(&self) -> Result<DataFormat, CliError> {
        DataFormat::from_name(&self.format).ok_or_else(|| {
            CliError::Config(format!(
                "unknown dataset format {:?} (expected jsonl or csv)",
                self.format
            ))
        })
    }

    /// Content hash of the resolved snapshot (12 hex chars).
    pub fn run_id(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut id = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            id.push_str(&format!("{byte:02x}"));
        }
        id
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }

    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

// --- raw TOML shape ------------------------------------------------------

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    method: Option<String>,
    conj: Option<String>,
    shots: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    conj_shortlist: Option<Vec<String>>,
    dataset: Option<DatasetSection>,
    labels: Option<Vec<LabelEntry>>,
    label_words: Option<BTreeMap<String, String>>,
    template: Option<TemplateSection>,
    train: Option<TrainSection>,
    backend: Option<BackendSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    train: PathBuf,
    test: Option<PathBuf>,
    format: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelEntry {
    class: String,
    word: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateSection {
    base: Option<String>,
    label_aware: Option<String>,
    conj_search: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    learning_rate: Option<f64>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    batch_size: Option<usize>,
    max_chars: Option<usize>,
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendSection {
    kind: String,
    table: Option<PathBuf>,
    model: Option<PathBuf>,
    corpus: Option<PathBuf>,
    embed_dim: Option<usize>,
    hidden_dim: Option<usize>,
    max_tokens: Option<usize>,
    pretrain_steps: Option<usize>,
    pretrain_batch: Option<usize>,
    pretrain_lr: Option<f64>,
    pretrain_seed: Option<u64>,
}

/// CLI flag overrides applied on top of the file values.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub method: Option<String>,
    pub conj: Option<String>,
    pub k: Option<usize>,
    pub shots: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_chars: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

fn resolve_path(base: &Path, path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

/// Load the TOML file, apply overrides, and produce the resolved snapshot.
pub fn load(config_path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let base_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let labels = match (file.labels, file.label_words) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either [[labels]] or [label_words], not both".into(),
            ))
        }
        (Some(entries), None) => entries.into_iter().map(|e| (e.class, e.word)).collect(),
        (None, Some(map)) => map.into_iter().collect::<Vec<_>>(), // BTreeMap: lexicographic class order
        (None, None) => {
            return Err(CliError::Config(
                "config needs a label map ([[labels]] entries or a [label_words] table)".into(),
            ))
        }
    };

    let dataset = file.dataset.ok_or_else(|| {
        CliError::Config("config needs a [dataset] section with a train path".into())
    })?;

    let backend = match file.backend {
        None => {
            return Err(CliError::Config(
                "config needs a [backend] section (kind = \"mock\" or \"tiny\")".into(),
            ))
        }
        Some(section) => match section.kind.as_str() {
            "mock" => {
                let table = section.table.ok_or_else(|| {
                    CliError::Config("backend.kind = \"mock\" needs backend.table".into())
                })?;
                BackendSpec::Mock {
                    table: resolve_path(&base_dir, table),
                }
            }
            "tiny" => {
                let model = section.model.map(|p| resolve_path(&base_dir, p));
                let corpus = section.corpus.map(|p| resolve_path(&base_dir, p));
                if model.is_none() && corpus.is_none() {
                    return Err(CliError::Config(
                        "backend.kind = \"tiny\" needs backend.model or backend.corpus".into(),
                    ));
                }
                BackendSpec::Tiny {
                    model,
                    corpus,
                    embed_dim: section.embed_dim.unwrap_or(24),
                    hidden_dim: section.hidden_dim.unwrap_or(32),
                    max_tokens: section.max_tokens.unwrap_or(256),
                    pretrain_steps: section.pretrain_steps.unwrap_or(1200),
                    pretrain_batch: section.pretrain_batch.unwrap_or(16),
                    pretrain_lr: section.pretrain_lr.unwrap_or(0.05),
                    pretrain_seed: section.pretrain_seed.unwrap_or(7),
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown backend kind {other:?} (expected mock or tiny)"
                )))
            }
        },
    };

    let train_section = file.train;
    let defaults = TrainConfig::default();
    let mut train = TrainConfig {
        learning_rate: train_section
            .as_ref()
            .and_then(|t| t.learning_rate)
            .unwrap_or(defaults.learning_rate),
        max_epochs: train_section
            .as_ref()
            .and_then(|t| t.max_epochs)
            .unwrap_or(defaults.max_epochs),
        patience: train_section
            .as_ref()
            .and_then(|t| t.patience)
            .unwrap_or(defaults.patience),
        batch_size: train_section
            .as_ref()
            .and_then(|t| t.batch_size)
            .unwrap_or(defaults.batch_size),
        seed: defaults.seed,
        max_chars: train_section
            .as_ref()
            .and_then(|t| t.max_chars)
            .unwrap_or(defaults.max_chars),
        k: train_section.as_ref().and_then(|t| t.k).unwrap_or(defaults.k),
    };
    if let Some(lr) = overrides.learning_rate {
        train.learning_rate = lr;
    }
    if let Some(v) = overrides.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = overrides.patience {
        train.patience = v;
    }
    if let Some(v) = overrides.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = overrides.max_chars {
        train.max_chars = v;
    }
    if let Some(v) = overrides.k {
        train.k = v;
    }

    let method_name = overrides
        .method
        .clone()
        .or(file.method)
        .ok_or_else(|| CliError::Config("config needs a method (key `method`)".into()))?;
    let method = Method::parse(&method_name)?;

    let config = RunConfig {
        method,
        conj: overrides
            .conj
            .clone()
            .or(file.conj)
            .unwrap_or_else(|| "and".to_string()),
        shots: overrides
            .shots
            .clone()
            .or(file.shots)
            .unwrap_or_else(|| DEFAULT_SHOTS.to_vec()),
        seeds: overrides
            .seeds
            .clone()
            .or(file.seeds)
            .unwrap_or_else(|| DEFAULT_SEEDS.to_vec()),
        output_dir: resolve_path(
            &base_dir,
            overrides
                .output_dir
                .clone()
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from("runs")),
        ),
        dataset_train: resolve_path(&base_dir, dataset.train),
        dataset_test: dataset.test.map(|p| resolve_path(&base_dir, p)),
        format: dataset.format.unwrap_or_else(|| "jsonl".to_string()),
        labels,
        template_base: file
            .template
            .as_ref()
            .and_then(|t| t.base.clone())
            .unwrap_or_else(|| DEFAULT_BASE_TEMPLATE.to_string()),
        template_label_aware: file.template.as_ref().and_then(|t| t.label_aware.clone()),
        template_conj_search: file.template.as_ref().and_then(|t| t.conj_search.clone()),
        train,
        backend,
        conj_shortlist: file
            .conj_shortlist
            .unwrap_or_else(|| vec!["and".to_string(), "of".to_string()]),
    };

    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<(), CliError> {
    config.data_format()?;
    if config.shots.is_empty() || config.shots.contains(&0) {
        return Err(CliError::Config("shots must be a non-empty list of positive integers".into()));
    }
    if config.seeds.is_empty() {
        return Err(CliError::Config("seeds must be non-empty".into()));
    }
    if config.labels.len() < 2 {
        return Err(CliError::Config("at least two classes are required".into()));
    }
    if config.method == Method::Laav && config.conj.trim().is_empty() {
        return Err(CliError::Config("method laav needs a non-empty conjunction".into()));
    }
    config
        .train
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(())
}
