//! Masked-LM backend contract.
//!
//! A backend answers mask-position queries (probability distributions and
//! raw logits over its vocabulary), tokenizes label words, optionally
//! exposes token embeddings and a classification head, applies training
//! steps, and snapshots/restores its state. Two implementations ship with
//! the crate: [`MockBackend`], a deterministic table-driven stand-in used by
//! oracle tests, and [`TinyMlm`], a small trainable masked LM that runs the
//! full pipeline on CPU.
//!
//! Inference calls are deterministic and may run concurrently on one handle;
//! `train_step` mutates state and is serialized by `&mut` (single writer).

mod mock;
mod tiny;

pub use mock::{MockBackend, MockBackendBuilder, MockTableFile};
pub use tiny::{TinyMlm, TinyMlmConfig};

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

use crate::templating::{PromptText, MASK_MARKER};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("prompt {index} is too long for the backend ({actual} {unit}, limit {limit})")]
    PromptTooLong {
        index: usize,
        actual: usize,
        limit: usize,
        unit: &'static str,
    },
    #[error("mock table has no row for prompt {prompt:?}")]
    MissingPrompt { prompt: String },
    #[error("backend {backend:?} does not support {needs}")]
    Capability { backend: String, needs: String },
    #[error("cannot tokenize {word:?} with this vocabulary")]
    Untokenizable { word: String },
    #[error("label word must be non-empty")]
    EmptyWord,
    #[error("token id {0} is outside the backend vocabulary")]
    UnknownTokenId(u32),
    #[error("train batch is inconsistent: {0}")]
    BatchMismatch(String),
    #[error("invalid mock table: {0}")]
    InvalidTable(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("vocabulary: {0}")]
    Vocab(String),
}

impl BackendError {
    pub(crate) fn checkpoint(path: &Path, reason: impl ToString) -> Self {
        BackendError::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

/// Index of a token in a backend vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Token-id <-> surface-string map, with special tokens flagged.
///
/// Special tokens (mask, unknown, padding) are excluded from verbalizer
/// candidate vocabularies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    special: BTreeSet<u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, special_surfaces: &[&str]) -> Result<Self, BackendError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if token.is_empty() {
                return Err(BackendError::Vocab(format!("empty token at id {i}")));
            }
            if index.insert(token.clone(), i as u32).is_some() {
                return Err(BackendError::Vocab(format!("duplicate token {token:?}")));
            }
        }
        let mut special = BTreeSet::new();
        for surface in special_surfaces {
            match index.get(*surface) {
                Some(&id) => {
                    special.insert(id);
                }
                None => {
                    return Err(BackendError::Vocab(format!(
                        "special token {surface:?} is not in the vocabulary"
                    )))
                }
            }
        }
        Ok(Self {
            tokens,
            index,
            special,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).map(|&i| TokenId(i))
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id.0)
    }

    pub fn special_surfaces(&self) -> Vec<String> {
        self.special
            .iter()
            .map(|&i| self.tokens[i as usize].clone())
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// What a backend can do; builders fail fast on missing capabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub has_embeddings: bool,
    pub has_cls_head: bool,
    pub trainable: bool,
}

/// One normalized probability row over the vocabulary per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabDistribution {
    rows: Array2<f64>,
}

impl VocabDistribution {
    /// Validates that every row is non-negative and sums to 1 within 1e-5.
    pub fn new(rows: Array2<f64>) -> Result<Self, BackendError> {
        for (i, row) in rows.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(BackendError::InvalidTable(format!(
                        "row {i} has a negative or non-finite probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(BackendError::InvalidTable(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }
}

/// Raw (pre-softmax) mask logits, one row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    rows: Array2<f64>,
}

impl MaskLogits {
    pub fn new(rows: Array2<f64>) -> Result<Self, BackendError> {
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::InvalidTable(
                "logits must be finite".to_string(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }
}

/// A stable copy of the backend's input-embedding matrix (|V| x d).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    matrix: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, id: TokenId) -> ArrayView1<'_, f64> {
        self.matrix.row(id.index())
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

/// Cosine similarity; zero whenever either vector has zero norm.
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let dot = a.dot(&b);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One optimizer step's worth of inputs and targets.
#[derive(Debug)]
pub enum TrainBatch<'a> {
    /// Verbalizer objective: raise the mean log-probability of each prompt's
    /// gold token set at the mask position.
    MaskTargets {
        prompts: &'a [PromptText],
        target_sets: &'a [Vec<TokenId>],
    },
    /// Cross-entropy on the classification head over pooled plain text.
    ClassHead {
        texts: &'a [String],
        labels: &'a [usize],
        num_classes: usize,
    },
}

/// The masked-LM contract used by the whole pipeline.
pub trait MaskedLmBackend {
    fn name(&self) -> &'static str;

    fn vocab(&self) -> &Vocabulary;

    fn capabilities(&self) -> Capabilities;

    /// One probability row per prompt, in input order. Oversized prompts are
    /// an error, never silently truncated at this layer.
    fn mask_distribution(&self, prompts: &[PromptText]) -> Result<VocabDistribution, BackendError>;

    /// As [`mask_distribution`](Self::mask_distribution) but un-normalized;
    /// softmax of a row reproduces the matching distribution row.
    fn mask_logits(&self, prompts: &[PromptText]) -> Result<MaskLogits, BackendError>;

    /// Tokenize a label word in mask-slot context. Multi-token results are
    /// valid outputs; callers decide what to do with them.
    fn tokenize_label(&self, word: &str) -> Result<Vec<TokenId>, BackendError>;

    /// A stable snapshot (copy) of the input-embedding matrix.
    fn embeddings(&self) -> Result<EmbeddingTable, BackendError>;

    fn set_learning_rate(&mut self, lr: f64);

    /// Apply one optimizer step; returns the pre-step loss.
    fn train_step(&mut self, batch: &TrainBatch<'_>) -> Result<f64, BackendError>;

    /// Classification-head logits over pooled plain text, one row per text.
    fn cls_logits(&self, _texts: &[String]) -> Result<Array2<f64>, BackendError> {
        Err(BackendError::Capability {
            backend: self.name().to_string(),
            needs: "a classification head".to_string(),
        })
    }

    /// Persist full state to `path` (format owned by the backend).
    fn snapshot(&self, path: &Path) -> Result<(), BackendError>;

    /// Replace this handle's state with the checkpoint at `path`.
    fn restore(&mut self, path: &Path) -> Result<(), BackendError>;
}

/// Whitespace/punctuation word split that keeps the mask marker atomic.
pub(crate) fn word_tokens(text: &str) -> Vec<String> {
    fn split_plain(chunk: &str, out: &mut Vec<String>) {
        for word in chunk.split_whitespace() {
            let mut current = String::new();
            for ch in word.chars() {
                if ch.is_ascii_punctuation() {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(ch.to_string());
                } else {
                    current.push(ch);
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
        }
    }

    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find(MASK_MARKER) {
        split_plain(&rest[..pos], &mut out);
        out.push(MASK_MARKER.to_string());
        rest = &rest[pos + MASK_MARKER.len()..];
    }
    split_plain(rest, &mut out);
    out
}

/// Greedy longest-match subword segmentation over the vocabulary, with
/// per-character fallback to `unk` where no piece matches.
pub(crate) fn greedy_pieces(
    word: &str,
    vocab: &Vocabulary,
    unk: Option<TokenId>,
) -> Result<Vec<TokenId>, BackendError> {
    if word.is_empty() {
        return Err(BackendError::EmptyWord);
    }
    if let Some(id) = vocab.id(word) {
        return Ok(vec![id]);
    }
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut matched = None;
        for end in (start + 1..=chars.len()).rev() {
            let piece: String = chars[start..end].iter().collect();
            if let Some(id) = vocab.id(&piece) {
                matched = Some((id, end));
                break;
            }
        }
        match matched {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => match unk {
                Some(id) => {
                    pieces.push(id);
                    start += 1;
                }
                None => {
                    return Err(BackendError::Untokenizable {
                        word: word.to_string(),
                    })
                }
            },
        }
    }
    Ok(pieces)
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: ArrayView1<'_, f64>) -> ndarray::Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out = logits.mapv(|x| (x - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|x| x / sum);
    out
}
