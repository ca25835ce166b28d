//! Verbalizer construction by five strategies: PET, AMuLaP, LAAV, PETAL,
//! and NPPrompt.
//!
//! Score-based methods share one discipline: every vocabulary token is first
//! assigned to the class maximizing its score (argmax over classes, ties to
//! the lowest class index), then each class keeps its top-k assigned tokens
//! (score descending, ties to the lowest token id). Assignment before
//! selection guarantees the per-class token sets are disjoint. Special
//! tokens never enter the candidate pool.

use ndarray::Array2;
use thiserror::Error;

use crate::backend::{cosine, BackendError, MaskedLmBackend, TokenId, Vocabulary};
use crate::corpus::{Example, FewShotSplit, LabelSet};
use crate::templating::{render, Template, TemplateError};
use crate::training::PROB_FLOOR;

#[derive(Debug, Error)]
pub enum VerbalizerError {
    #[error("few-shot split has no training examples")]
    EmptySplit,
    #[error("scoring failed at training example {example}: {source}")]
    Scoring {
        example: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("class {class:?} has no label word")]
    MissingLabelWord { class: String },
    #[error("conjunction must be non-empty")]
    EmptyConjunction,
    #[error("label word {word:?} for class {class:?} is not a single token ({pieces} pieces)")]
    MultiTokenLabel {
        class: String,
        word: String,
        pieces: usize,
    },
    #[error("label word {word:?} is shared by classes {first:?} and {second:?}")]
    DuplicateLabelWord {
        word: String,
        first: String,
        second: String,
    },
    #[error("k must be >= 1")]
    InvalidK,
    #[error("invalid verbalizer: {0}")]
    Validation(String),
}

/// Which template family produced a score matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateFamily {
    Base,
    LabelAware { conj: String },
}

/// Token-class scores `s(v, y)`: sums of mask probabilities over the
/// per-class training prompts. Shape is `|V| x |Y|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Array2<f64>,
    provenance: TemplateFamily,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, provenance: TemplateFamily) -> Result<Self, VerbalizerError> {
        if scores.iter().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(VerbalizerError::Validation(
                "score matrix entries must be finite and non-negative".to_string(),
            ));
        }
        Ok(Self { scores, provenance })
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn provenance(&self) -> &TemplateFamily {
        &self.provenance
    }

    pub fn vocab_size(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }
}

/// One verbalizer token with its construction-time score.
#[derive(Debug, Clone, PartialEq)]
pub struct VerbalizerEntry {
    pub token_id: TokenId,
    pub token: String,
    pub score: f64,
}

/// Per-class disjoint ranked token sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Verbalizer {
    pub method: String,
    pub k: usize,
    pub conj: Option<String>,
    /// Set for LAAV: token selection used the label-aware template, so the
    /// training pipeline must use the base template.
    pub requires_base_template: bool,
    pub classes: Vec<String>,
    pub class_tokens: Vec<Vec<VerbalizerEntry>>,
}

impl Verbalizer {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_token_ids(&self, class: usize) -> Vec<TokenId> {
        self.class_tokens[class].iter().map(|e| e.token_id).collect()
    }

    pub fn total_tokens(&self) -> usize {
        self.class_tokens.iter().map(Vec::len).sum()
    }

    /// Re-validate all invariants against a backend vocabulary: valid ids
    /// with matching surfaces, no special tokens, pairwise-disjoint classes,
    /// per-class lists sorted by (score desc, id asc), lengths within k.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), VerbalizerError> {
        if self.k == 0 {
            return Err(VerbalizerError::InvalidK);
        }
        if self.classes.len() != self.class_tokens.len() {
            return Err(VerbalizerError::Validation(
                "class names and token lists are misaligned".to_string(),
            ));
        }
        let mut seen: std::collections::HashMap<TokenId, usize> = std::collections::HashMap::new();
        for (class_idx, tokens) in self.class_tokens.iter().enumerate() {
            if tokens.len() > self.k {
                return Err(VerbalizerError::Validation(format!(
                    "class {:?} has {} tokens, k is {}",
                    self.classes[class_idx],
                    tokens.len(),
                    self.k
                )));
            }
            for (i, entry) in tokens.iter().enumerate() {
                let surface = vocab.surface(entry.token_id).ok_or_else(|| {
                    VerbalizerError::Validation(format!(
                        "token id {} is outside the vocabulary",
                        entry.token_id
                    ))
                })?;
                if surface != entry.token {
                    return Err(VerbalizerError::Validation(format!(
                        "token id {} is {:?} in the vocabulary, verbalizer says {:?}",
                        entry.token_id, surface, entry.token
                    )));
                }
                if vocab.is_special(entry.token_id) {
                    return Err(VerbalizerError::Validation(format!(
                        "special token {:?} cannot be a verbalizer token",
                        entry.token
                    )));
                }
                if let Some(other) = seen.insert(entry.token_id, class_idx) {
                    return Err(VerbalizerError::Validation(format!(
                        "token {:?} appears in classes {:?} and {:?}",
                        entry.token, self.classes[other], self.classes[class_idx]
                    )));
                }
                if i > 0 {
                    let prev = &tokens[i - 1];
                    let ordered = prev.score > entry.score
                        || (prev.score == entry.score && prev.token_id < entry.token_id);
                    if !ordered {
                        return Err(VerbalizerError::Validation(format!(
                            "class {:?} token list is not sorted by (score desc, id asc)",
                            self.classes[class_idx]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize to the interchange JSON shape
    /// `{method, k, conj?, classes: {class: [{token, token_id, score}]}}`.
    pub fn to_json_value(&self) -> serde_json::Value {
        use serde_json::{json, Map, Value};
        let mut classes = Map::new();
        for (name, tokens) in self.classes.iter().zip(self.class_tokens.iter()) {
            let entries: Vec<Value> = tokens
                .iter()
                .map(|e| {
                    json!({
                        "token": e.token,
                        "token_id": e.token_id,
                        "score": e.score,
                    })
                })
                .collect();
            classes.insert(name.clone(), Value::Array(entries));
        }
        let mut root = Map::new();
        root.insert("method".into(), json!(self.method));
        root.insert("k".into(), json!(self.k));
        if let Some(conj) = &self.conj {
            root.insert("conj".into(), json!(conj));
        }
        root.insert("classes".into(), Value::Object(classes));
        Value::Object(root)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("verbalizer serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, VerbalizerError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| VerbalizerError::Validation(format!("invalid JSON: {e}")))?;
        let method = value["method"]
            .as_str()
            .ok_or_else(|| VerbalizerError::Validation("missing method".into()))?
            .to_string();
        let k = value["k"]
            .as_u64()
            .ok_or_else(|| VerbalizerError::Validation("missing k".into()))? as usize;
        let conj = value.get("conj").and_then(|v| v.as_str()).map(String::from);
        let classes_obj = value["classes"]
            .as_object()
            .ok_or_else(|| VerbalizerError::Validation("missing classes".into()))?;
        let mut classes = Vec::new();
        let mut class_tokens = Vec::new();
        for (name, entries) in classes_obj {
            let entries = entries
                .as_array()
                .ok_or_else(|| VerbalizerError::Validation(format!("class {name:?} is not a list")))?;
            let mut tokens = Vec::with_capacity(entries.len());
            for entry in entries {
                let token = entry["token"]
                    .as_str()
                    .ok_or_else(|| VerbalizerError::Validation("entry missing token".into()))?
                    .to_string();
                let token_id = entry["token_id"]
                    .as_u64()
                    .ok_or_else(|| VerbalizerError::Validation("entry missing token_id".into()))?;
                let score = entry["score"]
                    .as_f64()
                    .ok_or_else(|| VerbalizerError::Validation("entry missing score".into()))?;
                tokens.push(VerbalizerEntry {
                    token_id: TokenId(token_id as u32),
                    token,
                    score,
                });
            }
            classes.push(name.clone());
            class_tokens.push(tokens);
        }
        let requires_base_template = method == "laav";
        Ok(Self {
            method,
            k,
            conj,
            requires_base_template,
            classes,
            class_tokens,
        })
    }
}

/// Argmax class assignment over the full candidate vocabulary, then top-k
/// selection per class. `score(v, y)` may be any finite value.
fn assign_topk_core(
    score: impl Fn(usize, usize) -> f64,
    vocab: &Vocabulary,
    num_classes: usize,
    k: usize,
) -> Vec<Vec<(usize, f64)>> {
    let mut per_class: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_classes];
    for v in 0..vocab.len() {
        if vocab.is_special(TokenId(v as u32)) {
            continue;
        }
        let mut best_class = 0usize;
        let mut best = score(v, 0);
        for y in 1..num_classes {
            let s = score(v, y);
            if s > best {
                best = s;
                best_class = y;
            }
        }
        per_class[best_class].push((v, best));
    }
    for tokens in &mut per_class {
        tokens.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        tokens.truncate(k);
    }
    per_class
}

fn entries_from(
    assigned: Vec<Vec<(usize, f64)>>,
    vocab: &Vocabulary,
) -> Vec<Vec<VerbalizerEntry>> {
    assigned
        .into_iter()
        .map(|tokens| {
            tokens
                .into_iter()
                .map(|(v, score)| VerbalizerEntry {
                    token_id: TokenId(v as u32),
                    token: vocab
                        .surface(TokenId(v as u32))
                        .expect("token came from this vocabulary")
                        .to_string(),
                    score,
                })
                .collect()
        })
        .collect()
}

/// Which template family and slot values to score with.
#[derive(Debug, Clone, Copy)]
pub enum ScoreMode<'a> {
    Base,
    LabelAware { conj: &'a str },
}

/// Sum of mask probabilities per (token, class) over the split's training
/// examples: column `y` aggregates only examples labeled `y`, each rendered
/// with the given template (and, when label-aware, with that class's own
/// label word and the conjunction). Summation follows split order, so the
/// result is reproducible term for term.
pub fn score_matrix(
    split: &FewShotSplit,
    template: &Template,
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    mode: ScoreMode<'_>,
    max_chars: usize,
    batch_size: usize,
) -> Result<ScoreMatrix, VerbalizerError> {
    if split.train.is_empty() {
        return Err(VerbalizerError::EmptySplit);
    }
    if let ScoreMode::LabelAware { conj } = mode {
        if conj.trim().is_empty() {
            return Err(VerbalizerError::EmptyConjunction);
        }
    }
    let batch_size = batch_size.max(1);

    let mut by_class: Vec<Vec<(usize, &Example)>> = vec![Vec::new(); label_set.len()];
    for (i, ex) in split.train.iter().enumerate() {
        let class = label_set.class_index(&ex.label).ok_or_else(|| {
            VerbalizerError::Validation(format!("split label {:?} is not registered", ex.label))
        })?;
        by_class[class].push((i, ex));
    }

    let vocab_size = backend.vocab().len();
    let mut scores = Array2::zeros((vocab_size, label_set.len()));
    for (class_idx, examples) in by_class.iter().enumerate() {
        for chunk in examples.chunks(batch_size) {
            let mut prompts = Vec::with_capacity(chunk.len());
            for (_, ex) in chunk {
                let prompt = match mode {
                    ScoreMode::Base => render(template, &ex.text, None, None, max_chars)?,
                    ScoreMode::LabelAware { conj } => render(
                        template,
                        &ex.text,
                        Some(label_set.label_word(class_idx)),
                        Some(conj),
                        max_chars,
                    )?,
                };
                prompts.push(prompt);
            }
            let dist = backend.mask_distribution(&prompts).map_err(|source| {
                let example = match &source {
                    BackendError::PromptTooLong { index, .. } => chunk[*index].0,
                    _ => chunk[0].0,
                };
                VerbalizerError::Scoring { example, source }
            })?;
            for local in 0..chunk.len() {
                let row = dist.row(local);
                for v in 0..vocab_size {
                    scores[[v, class_idx]] += row[v];
                }
            }
        }
    }

    let provenance = match mode {
        ScoreMode::Base => TemplateFamily::Base,
        ScoreMode::LabelAware { conj } => TemplateFamily::LabelAware {
            conj: conj.to_string(),
        },
    };
    ScoreMatrix::new(scores, provenance)
}

/// Assign every candidate token to its argmax class, then keep each class's
/// top `min(k, available)` tokens. Classes are never back-filled, so they
/// may end up with fewer than `k` tokens.
pub fn assign_and_topk(
    matrix: &ScoreMatrix,
    k: usize,
    label_set: &LabelSet,
    vocab: &Vocabulary,
) -> Result<Verbalizer, VerbalizerError> {
    if k == 0 {
        return Err(VerbalizerError::InvalidK);
    }
    if matrix.num_classes() != label_set.len() {
        return Err(VerbalizerError::Validation(format!(
            "matrix has {} classes, label set has {}",
            matrix.num_classes(),
            label_set.len()
        )));
    }
    if matrix.vocab_size() != vocab.len() {
        return Err(VerbalizerError::Validation(format!(
            "matrix has {} tokens, vocabulary has {}",
            matrix.vocab_size(),
            vocab.len()
        )));
    }
    let scores = matrix.scores();
    let assigned = assign_topk_core(|v, y| scores[[v, y]], vocab, label_set.len(), k);
    let (method, conj, requires_base_template) = match matrix.provenance() {
        TemplateFamily::Base => ("amulap".to_string(), None, false),
        TemplateFamily::LabelAware { conj } => ("laav".to_string(), Some(conj.clone()), true),
    };
    Ok(Verbalizer {
        method,
        k,
        conj,
        requires_base_template,
        classes: label_set.classes().to_vec(),
        class_tokens: entries_from(assigned, vocab),
    })
}

/// AMuLaP: base-template scoring followed by argmax assignment and top-k.
pub fn build_amulap(
    split: &FewShotSplit,
    base_template: &Template,
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    k: usize,
    max_chars: usize,
    batch_size: usize,
) -> Result<Verbalizer, VerbalizerError> {
    let matrix = score_matrix(
        split,
        base_template,
        label_set,
        backend,
        ScoreMode::Base,
        max_chars,
        batch_size,
    )?;
    assign_and_topk(&matrix, k, label_set, vocab_of(backend))
}

/// LAAV: label-aware scoring (label word + conjunction ahead of the mask),
/// then the same assignment and top-k. The label-aware template is derived
/// from the base template; training and inference keep using the base
/// template, which the returned verbalizer records via
/// `requires_base_template`.
pub fn build_laav(
    split: &FewShotSplit,
    base_template: &Template,
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    k: usize,
    conj: &str,
    max_chars: usize,
    batch_size: usize,
) -> Result<Verbalizer, VerbalizerError> {
    let label_aware = base_template.derive_label_aware()?;
    build_laav_with_template(
        split,
        &label_aware,
        label_set,
        backend,
        k,
        conj,
        max_chars,
        batch_size,
    )
}

/// LAAV with an explicit label-aware template (for languages where the
/// derived insertion order is wrong).
#[allow(clippy::too_many_arguments)]
pub fn build_laav_with_template(
    split: &FewShotSplit,
    label_aware_template: &Template,
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    k: usize,
    conj: &str,
    max_chars: usize,
    batch_size: usize,
) -> Result<Verbalizer, VerbalizerError> {
    if conj.trim().is_empty() {
        return Err(VerbalizerError::EmptyConjunction);
    }
    let matrix = score_matrix(
        split,
        label_aware_template,
        label_set,
        backend,
        ScoreMode::LabelAware { conj },
        max_chars,
        batch_size,
    )?;
    assign_and_topk(&matrix, k, label_set, vocab_of(backend))
}

fn vocab_of(backend: &dyn MaskedLmBackend) -> &Vocabulary {
    backend.vocab()
}

/// PET: each class is represented by its manually chosen label word, which
/// must tokenize to exactly one token.
pub fn build_pet(
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
) -> Result<Verbalizer, VerbalizerError> {
    let mut class_tokens = Vec::with_capacity(label_set.len());
    let mut seen: std::collections::HashMap<TokenId, usize> = std::collections::HashMap::new();
    for (class_idx, class) in label_set.classes().iter().enumerate() {
        let word = label_set.label_word(class_idx);
        let pieces = backend.tokenize_label(word)?;
        if pieces.len() != 1 {
            return Err(VerbalizerError::MultiTokenLabel {
                class: class.clone(),
                word: word.to_string(),
                pieces: pieces.len(),
            });
        }
        let token_id = pieces[0];
        if backend.vocab().is_special(token_id) {
            return Err(VerbalizerError::Validation(format!(
                "label word {word:?} maps to a special token"
            )));
        }
        if let Some(other) = seen.insert(token_id, class_idx) {
            return Err(VerbalizerError::DuplicateLabelWord {
                word: word.to_string(),
                first: label_set.class(other).to_string(),
                second: class.clone(),
            });
        }
        class_tokens.push(vec![VerbalizerEntry {
            token_id,
            token: backend
                .vocab()
                .surface(token_id)
                .expect("tokenizer returned a vocabulary id")
                .to_string(),
            score: 1.0,
        }]);
    }
    Ok(Verbalizer {
        method: "pet".to_string(),
        k: 1,
        conj: None,
        requires_base_template: false,
        classes: label_set.classes().to_vec(),
        class_tokens,
    })
}

/// PETAL: the single token per class maximizing the summed log-likelihood of
/// that class's training examples, after disjointness is enforced by argmax
/// assignment over the log-likelihood matrix.
pub fn build_petal(
    split: &FewShotSplit,
    base_template: &Template,
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    max_chars: usize,
    batch_size: usize,
) -> Result<Verbalizer, VerbalizerError> {
    if split.train.is_empty() {
        return Err(VerbalizerError::EmptySplit);
    }
    let batch_size = batch_size.max(1);
    let vocab = backend.vocab();
    let mut log_likelihood = Array2::zeros((vocab.len(), label_set.len()));

    let mut by_class: Vec<Vec<(usize, &Example)>> = vec![Vec::new(); label_set.len()];
    for (i, ex) in split.train.iter().enumerate() {
        let class = label_set.class_index(&ex.label).ok_or_else(|| {
            VerbalizerError::Validation(format!("split label {:?} is not registered", ex.label))
        })?;
        by_class[class].push((i, ex));
    }
    for (class_idx, examples) in by_class.iter().enumerate() {
        for chunk in examples.chunks(batch_size) {
            let mut prompts = Vec::with_capacity(chunk.len());
            for (_, ex) in chunk {
                prompts.push(render(base_template, &ex.text, None, None, max_chars)?);
            }
            let dist = backend.mask_distribution(&prompts).map_err(|source| {
                let example = match &source {
                    BackendError::PromptTooLong { index, .. } => chunk[*index].0,
                    _ => chunk[0].0,
                };
                VerbalizerError::Scoring { example, source }
            })?;
            for local in 0..chunk.len() {
                let row = dist.row(local);
                for v in 0..vocab.len() {
                    log_likelihood[[v, class_idx]] += row[v].max(PROB_FLOOR).ln();
                }
            }
        }
    }

    let assigned = assign_topk_core(|v, y| log_likelihood[[v, y]], vocab, label_set.len(), 1);
    Ok(Verbalizer {
        method: "petal".to_string(),
        k: 1,
        conj: None,
        requires_base_template: false,
        classes: label_set.classes().to_vec(),
        class_tokens: entries_from(assigned, vocab),
    })
}

/// NPPrompt: rank the vocabulary by cosine similarity between each token's
/// input embedding and the class anchor (mean embedding of the label word's
/// tokens), with the usual argmax assignment and top-k.
pub fn build_npprompt(
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    k: usize,
) -> Result<Verbalizer, VerbalizerError> {
    if k == 0 {
        return Err(VerbalizerError::InvalidK);
    }
    let table = backend.embeddings()?;
    let vocab = backend.vocab();

    let mut anchors = Vec::with_capacity(label_set.len());
    for (class_idx, _class) in label_set.classes().iter().enumerate() {
        let word = label_set.label_word(class_idx);
        let pieces = backend.tokenize_label(word)?;
        let mut anchor = ndarray::Array1::zeros(table.dim());
        for &piece in &pieces {
            anchor += &table.row(piece);
        }
        anchor /= pieces.len() as f64;
        anchors.push(anchor);
    }

    let assigned = assign_topk_core(
        |v, y| cosine(table.row(TokenId(v as u32)), anchors[y].view()),
        vocab,
        label_set.len(),
        k,
    );
    Ok(Verbalizer {
        method: "npprompt".to_string(),
        k,
        conj: None,
        requires_base_template: false,
        classes: label_set.classes().to_vec(),
        class_tokens: entries_from(assigned, vocab),
    })
}
