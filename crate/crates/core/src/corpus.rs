//! Dataset ingestion, label registry, and seeded few-shot sampling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::rng::{seeded_rng, uniform_below};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: record {record}: {reason}")]
    Format {
        path: PathBuf,
        record: usize,
        reason: String,
    },
    #[error("{path}: record {record}: unknown label {label:?} (not covered by the label-word map)")]
    UnknownLabel {
        path: PathBuf,
        record: usize,
        label: String,
    },
    #[error("{path}: no records found")]
    Empty { path: PathBuf },
    #[error("class {class:?}: sampling {shots} shots per split needs {needed} examples, only {available} available")]
    Sampling {
        class: String,
        shots: usize,
        needed: usize,
        available: usize,
    },
    #[error("label set: {0}")]
    LabelSet(String),
    #[error("dataset has no {0:?} partition")]
    UnknownPartition(String),
}

/// One labeled text. Text is whitespace-normalized at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: String,
}

/// The ordered class registry and the surface word naming each class.
///
/// Class order is fixed at construction and defines every tie-break in the
/// pipeline (argmax assignment, prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    classes: Vec<String>,
    words: Vec<String>,
}

impl LabelSet {
    /// Build from ordered `(class, label word)` pairs.
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self, CorpusError> {
        if pairs.is_empty() {
            return Err(CorpusError::LabelSet("no classes given".into()));
        }
        let mut classes = Vec::with_capacity(pairs.len());
        let mut words = Vec::with_capacity(pairs.len());
        for (class, word) in pairs {
            if classes.contains(&class) {
                return Err(CorpusError::LabelSet(format!("duplicate class {class:?}")));
            }
            if word.trim().is_empty() {
                return Err(CorpusError::LabelSet(format!(
                    "class {class:?} has an empty label word"
                )));
            }
            classes.push(class);
            words.push(word);
        }
        Ok(Self { classes, words })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn label_word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn label_words(&self) -> &[String] {
        &self.words
    }
}

/// Labeled examples plus named, disjoint partitions (train/validation/test).
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Vec<Example>,
    label_set: LabelSet,
    partitions: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Wrap examples as a single named partition.
    pub fn from_examples(
        examples: Vec<Example>,
        label_set: LabelSet,
        partition: &str,
    ) -> Result<Self, CorpusError> {
        for (i, ex) in examples.iter().enumerate() {
            if label_set.class_index(&ex.label).is_none() {
                return Err(CorpusError::UnknownLabel {
                    path: PathBuf::from("<memory>"),
                    record: i,
                    label: ex.label.clone(),
                });
            }
        }
        let indices = (0..examples.len()).collect();
        let mut partitions = BTreeMap::new();
        partitions.insert(partition.to_string(), indices);
        Ok(Self {
            examples,
            label_set,
            partitions,
        })
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Examples of one partition, in load order.
    pub fn partition(&self, name: &str) -> Result<Vec<&Example>, CorpusError> {
        let indices = self
            .partitions
            .get(name)
            .ok_or_else(|| CorpusError::UnknownPartition(name.to_string()))?;
        Ok(indices.iter().map(|&i| &self.examples[i]).collect())
    }

    pub fn has_partition(&self, name: &str) -> bool {
        self.partitions.contains_key(name)
    }

    /// Append another file's records as a new disjoint partition.
    /// The label set must match.
    pub fn add_partition(
        &mut self,
        name: &str,
        examples: Vec<Example>,
    ) -> Result<(), CorpusError> {
        if self.partitions.contains_key(name) {
            return Err(CorpusError::LabelSet(format!(
                "partition {name:?} already exists"
            )));
        }
        let start = self.examples.len();
        for (i, ex) in examples.iter().enumerate() {
            if self.label_set.class_index(&ex.label).is_none() {
                return Err(CorpusError::UnknownLabel {
                    path: PathBuf::from("<memory>"),
                    record: i,
                    label: ex.label.clone(),
                });
            }
        }
        let indices = (start..start + examples.len()).collect();
        self.examples.extend(examples);
        self.partitions.insert(name.to_string(), indices);
        Ok(())
    }
}

/// A seeded n-per-class sample: `train` and `validation` each hold exactly
/// `shots_per_class` examples per class, drawn without replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub shots_per_class: usize,
    pub seed: u64,
}

/// Input file format for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// One JSON object per line with keys `text` and `label`.
    Jsonl,
    /// RFC-4180 CSV with a `text,label` header.
    Csv,
}

impl DataFormat {
    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "jsonl" => Some(DataFormat::Jsonl),
            "csv" => Some(DataFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    text: Option<String>,
    label: Option<String>,
}

/// Collapse whitespace runs to single spaces and trim the ends.
fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn validate_record(
    raw: RawRecord,
    path: &Path,
    record: usize,
    label_set: &LabelSet,
) -> Result<Example, CorpusError> {
    let text = raw.text.ok_or_else(|| CorpusError::Format {
        path: path.to_path_buf(),
        record,
        reason: "missing \"text\" field".into(),
    })?;
    let label = raw.label.ok_or_else(|| CorpusError::Format {
        path: path.to_path_buf(),
        record,
        reason: "missing \"label\" field".into(),
    })?;
    let text = normalize_text(&text);
    if text.is_empty() {
        return Err(CorpusError::Format {
            path: path.to_path_buf(),
            record,
            reason: "empty text after whitespace normalization".into(),
        });
    }
    if label_set.class_index(&label).is_none() {
        return Err(CorpusError::UnknownLabel {
            path: path.to_path_buf(),
            record,
            label,
        });
    }
    Ok(Example { text, label })
}

/// Read the records of one file; order and duplicates are preserved.
pub fn load_examples(
    path: &Path,
    format: DataFormat,
    label_set: &LabelSet,
) -> Result<Vec<Example>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut examples = Vec::new();
    match format {
        DataFormat::Jsonl => {
            let reader = BufReader::new(file);
            let mut record = 0usize;
            for line in reader.lines() {
                let line = line.map_err(|source| CorpusError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawRecord =
                    serde_json::from_str(&line).map_err(|e| CorpusError::Format {
                        path: path.to_path_buf(),
                        record,
                        reason: format!("invalid JSON: {e}"),
                    })?;
                examples.push(validate_record(raw, path, record, label_set)?);
                record += 1;
            }
        }
        DataFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| CorpusError::Format {
                    path: path.to_path_buf(),
                    record: 0,
                    reason: format!("invalid CSV header: {e}"),
                })?
                .clone();
            let text_col = headers.iter().position(|h| h == "text");
            let label_col = headers.iter().position(|h| h == "label");
            if text_col.is_none() || label_col.is_none() {
                return Err(CorpusError::Format {
                    path: path.to_path_buf(),
                    record: 0,
                    reason: "CSV header must contain \"text\" and \"label\" columns".into(),
                });
            }
            for (record, row) in reader.records().enumerate() {
                let row = row.map_err(|e| CorpusError::Format {
                    path: path.to_path_buf(),
                    record,
                    reason: format!("invalid CSV row: {e}"),
                })?;
                let raw = RawRecord {
                    text: text_col.and_then(|c| row.get(c)).map(str::to_string),
                    label: label_col.and_then(|c| row.get(c)).map(str::to_string),
                };
                examples.push(validate_record(raw, path, record, label_set)?);
            }
        }
    }
    if examples.is_empty() {
        return Err(CorpusError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(examples)
}

/// Load one file into a dataset whose pool partition is `"train"`.
///
/// `label_words` is the ordered class -> label-word map; it must cover every
/// label that occurs in the file.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    label_words: Vec<(String, String)>,
) -> Result<Dataset, CorpusError> {
    let label_set = LabelSet::new(label_words)?;
    let examples = load_examples(path, format, &label_set)?;
    Dataset::from_examples(examples, label_set, "train")
}

/// Draw `shots_per_class` train and `shots_per_class` validation examples per
/// class from the dataset's `"train"` partition.
///
/// Sampling is a partial Fisher-Yates shuffle over each class's pool indices,
/// driven by a ChaCha8 stream keyed by `(seed, class name)`. Per-class
/// streams mean adding or removing one class never perturbs the draws of the
/// others. The first `n` draws go to train, the next `n` to validation, so
/// the two splits are disjoint by construction.
pub fn sample_few_shot(
    dataset: &Dataset,
    shots_per_class: usize,
    seed: u64,
) -> Result<FewShotSplit, CorpusError> {
    assert!(shots_per_class > 0, "shots_per_class must be positive");
    let pool = dataset.partition("train")?;
    let label_set = dataset.label_set();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); label_set.len()];
    for (i, ex) in pool.iter().enumerate() {
        let class = label_set
            .class_index(&ex.label)
            .expect("dataset invariant: labels are registered");
        by_class[class].push(i);
    }

    let needed = 2 * shots_per_class;
    let mut train = Vec::with_capacity(shots_per_class * label_set.len());
    let mut validation = Vec::with_capacity(shots_per_class * label_set.len());
    for (class_idx, indices) in by_class.iter().enumerate() {
        let class = label_set.class(class_idx);
        if indices.len() < needed {
            return Err(CorpusError::Sampling {
                class: class.to_string(),
                shots: shots_per_class,
                needed,
                available: indices.len(),
            });
        }
        let mut idx = indices.clone();
        let mut rng = seeded_rng(seed, &format!("few-shot:{class}"));
        for i in 0..needed {
            let j = i + uniform_below(&mut rng, (idx.len() - i) as u64) as usize;
            idx.swap(i, j);
        }
        for &i in &idx[..shots_per_class] {
            train.push(pool[i].clone());
        }
        for &i in &idx[shots_per_class..needed] {
            validation.push(pool[i].clone());
        }
    }

    Ok(FewShotSplit {
        train,
        validation,
        shots_per_class,
        seed,
    })
}
