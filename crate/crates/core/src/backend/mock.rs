//! Deterministic table-driven mock backend.
//!
//! Every distribution row is an exact table value keyed by the rendered
//! prompt string, which makes exact-arithmetic oracle tests possible
//! downstream. `train_step` verifies the batch and computes the loss but
//! applies no update.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Capabilities, EmbeddingTable, MaskLogits, MaskedLmBackend, TokenId, TrainBatch,
    VocabDistribution, Vocabulary,
};
use crate::templating::PromptText;
use crate::training::PROB_FLOOR;

/// On-disk mock table: a vocabulary list plus `prompt -> probability row`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockTableFile {
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub special_tokens: Vec<String>,
    #[serde(default)]
    pub unk_token: Option<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub max_prompt_chars: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    vocab: Vocabulary,
    rows: BTreeMap<String, Vec<f64>>,
    embeddings: Option<Array2<f64>>,
    max_prompt_chars: Option<usize>,
    unk: Option<TokenId>,
}

impl MockBackend {
    pub fn from_table(file: MockTableFile) -> Result<Self, BackendError> {
        let special: Vec<&str> = file.special_tokens.iter().map(String::as_str).collect();
        let vocab = Vocabulary::new(file.vocabulary.clone(), &special)?;
        let unk = match &file.unk_token {
            Some(surface) => Some(vocab.id(surface).ok_or_else(|| {
                BackendError::InvalidTable(format!("unk token {surface:?} is not in the vocabulary"))
            })?),
            None => None,
        };
        for (prompt, row) in &file.rows {
            if row.len() != vocab.len() {
                return Err(BackendError::InvalidTable(format!(
                    "row for {prompt:?} has {} entries, vocabulary has {}",
                    row.len(),
                    vocab.len()
                )));
            }
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(BackendError::InvalidTable(format!(
                        "row for {prompt:?} has a negative or non-finite probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(BackendError::InvalidTable(format!(
                    "row for {prompt:?} sums to {sum}, expected 1"
                )));
            }
        }
        let embeddings = match file.embeddings {
            Some(table) => {
                if table.len() != vocab.len() {
                    return Err(BackendError::InvalidTable(format!(
                        "embedding table has {} rows, vocabulary has {}",
                        table.len(),
                        vocab.len()
                    )));
                }
                let dim = table.first().map(Vec::len).unwrap_or(0);
                if dim == 0 || table.iter().any(|r| r.len() != dim) {
                    return Err(BackendError::InvalidTable(
                        "embedding rows must share one non-zero dimension".to_string(),
                    ));
                }
                let flat: Vec<f64> = table.into_iter().flatten().collect();
                Some(
                    Array2::from_shape_vec((vocab.len(), dim), flat)
                        .expect("shape checked above"),
                )
            }
            None => None,
        };
        Ok(Self {
            vocab,
            rows: file.rows,
            embeddings,
            max_prompt_chars: file.max_prompt_chars,
            unk,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::checkpoint(path, e))?;
        let file: MockTableFile =
            serde_json::from_str(&text).map_err(|e| BackendError::checkpoint(path, e))?;
        Self::from_table(file)
    }

    /// Start building a mock over the given vocabulary.
    pub fn builder<S: Into<String>>(vocabulary: Vec<S>) -> MockBackendBuilder {
        MockBackendBuilder {
            file: MockTableFile {
                vocabulary: vocabulary.into_iter().map(Into::into).collect(),
                special_tokens: Vec::new(),
                unk_token: None,
                rows: BTreeMap::new(),
                embeddings: None,
                max_prompt_chars: None,
            },
        }
    }

    fn to_table(&self) -> MockTableFile {
        MockTableFile {
            vocabulary: self.vocab.tokens().to_vec(),
            special_tokens: self.vocab.special_surfaces(),
            unk_token: self.unk.and_then(|id| self.vocab.surface(id).map(String::from)),
            rows: self.rows.clone(),
            embeddings: self
                .embeddings
                .as_ref()
                .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()),
            max_prompt_chars: self.max_prompt_chars,
        }
    }

    fn lookup(&self, prompt: &PromptText, index: usize) -> Result<&[f64], BackendError> {
        if let Some(limit) = self.max_prompt_chars {
            let actual = prompt.rendered().chars().count();
            if actual > limit {
                return Err(BackendError::PromptTooLong {
                    index,
                    actual,
                    limit,
                    unit: "chars",
                });
            }
        }
        self.rows
            .get(prompt.rendered())
            .map(Vec::as_slice)
            .ok_or_else(|| BackendError::MissingPrompt {
                prompt: prompt.rendered().to_string(),
            })
    }
}

/// Test-oriented builder for [`MockBackend`].
pub struct MockBackendBuilder {
    file: MockTableFile,
}

impl MockBackendBuilder {
    pub fn special(mut self, surfaces: &[&str]) -> Self {
        self.file.special_tokens = surfaces.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn unk(mut self, surface: &str) -> Self {
        self.file.unk_token = Some(surface.to_string());
        self
    }

    pub fn row(mut self, prompt: &str, probabilities: Vec<f64>) -> Self {
        self.file.rows.insert(prompt.to_string(), probabilities);
        self
    }

    pub fn embeddings(mut self, table: Vec<Vec<f64>>) -> Self {
        self.file.embeddings = Some(table);
        self
    }

    pub fn max_prompt_chars(mut self, limit: usize) -> Self {
        self.file.max_prompt_chars = Some(limit);
        self
    }

    pub fn build(self) -> Result<MockBackend, BackendError> {
        MockBackend::from_table(self.file)
    }
}

impl MaskedLmBackend for MockBackend {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_embeddings: self.embeddings.is_some(),
            has_cls_head: false,
            trainable: true,
        }
    }

    fn mask_distribution(&self, prompts: &[PromptText]) -> Result<VocabDistribution, BackendError> {
        let mut rows = Array2::zeros((prompts.len(), self.vocab.len()));
        for (i, prompt) in prompts.iter().enumerate() {
            let table_row = self.lookup(prompt, i)?;
            for (j, &p) in table_row.iter().enumerate() {
                rows[[i, j]] = p;
            }
        }
        VocabDistribution::new(rows)
    }

    fn mask_logits(&self, prompts: &[PromptText]) -> Result<MaskLogits, BackendError> {
        // Exact zeros in the table are floored before the log so that the
        // logits stay finite; softmax still reproduces the distribution row
        // within the contract's 1e-5.
        let mut rows = Array2::zeros((prompts.len(), self.vocab.len()));
        for (i, prompt) in prompts.iter().enumerate() {
            let table_row = self.lookup(prompt, i)?;
            for (j, &p) in table_row.iter().enumerate() {
                rows[[i, j]] = p.max(PROB_FLOOR).ln();
            }
        }
        MaskLogits::new(rows)
    }

    fn tokenize_label(&self, word: &str) -> Result<Vec<TokenId>, BackendError> {
        super::greedy_pieces(word, &self.vocab, self.unk)
    }

    fn embeddings(&self) -> Result<EmbeddingTable, BackendError> {
        match &self.embeddings {
            Some(matrix) => Ok(EmbeddingTable::new(matrix.clone())),
            None => Err(BackendError::Capability {
                backend: "mock".to_string(),
                needs: "token embeddings".to_string(),
            }),
        }
    }

    fn set_learning_rate(&mut self, _lr: f64) {}

    fn train_step(&mut self, batch: &TrainBatch<'_>) -> Result<f64, BackendError> {
        match batch {
            TrainBatch::MaskTargets {
                prompts,
                target_sets,
            } => {
                if prompts.len() != target_sets.len() {
                    return Err(BackendError::BatchMismatch(format!(
                        "{} prompts vs {} target sets",
                        prompts.len(),
                        target_sets.len()
                    )));
                }
                let mut loss = 0.0;
                for (i, (prompt, targets)) in prompts.iter().zip(target_sets.iter()).enumerate() {
                    if targets.is_empty() {
                        return Err(BackendError::BatchMismatch(format!(
                            "prompt {i} has an empty target set"
                        )));
                    }
                    let row = self.lookup(prompt, i)?;
                    let mut log_sum = 0.0;
                    for &token in targets {
                        if !self.vocab.contains_id(token) {
                            return Err(BackendError::UnknownTokenId(token.0));
                        }
                        log_sum += row[token.index()].max(PROB_FLOOR).ln();
                    }
                    loss -= log_sum / targets.len() as f64;
                }
                Ok(loss)
            }
            TrainBatch::ClassHead { .. } => Err(BackendError::Capability {
                backend: "mock".to_string(),
                needs: "a classification head".to_string(),
            }),
        }
    }

    fn snapshot(&self, path: &Path) -> Result<(), BackendError> {
        let json = serde_json::to_string_pretty(&self.to_table())
            .map_err(|e| BackendError::checkpoint(path, e))?;
        std::fs::write(path, json).map_err(|e| BackendError::checkpoint(path, e))
    }

    fn restore(&mut self, path: &Path) -> Result<(), BackendError> {
        *self = MockBackend::from_file(path)?;
        Ok(())
    }
}
