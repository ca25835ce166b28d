//! Verbalizer-driven classification scores, the training objective, the
//! fine-tuning loop with early stopping, and macro-F1 evaluation.
//!
//! The class score is the mean log-probability of the class's verbalizer
//! tokens at the mask position; the training loss is the negated gold-class
//! score summed over the batch; prediction is the argmax over class scores
//! with ties resolved to the lowest class index.

use std::path::{Path, PathBuf};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, MaskedLmBackend, TrainBatch, VocabDistribution};
use crate::corpus::{Example, FewShotSplit, LabelSet};
use crate::metrics::{self, EvalReport};
use crate::rng::{seeded_rng, shuffle};
use crate::templating::{render, Template, TemplateError};
use crate::verbalizers::{Verbalizer, VerbalizerError};

/// Probabilities are floored here before any log, so exact zeros (common in
/// mock tables) stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Verbalizer(#[from] VerbalizerError),
    #[error("class {class:?} has an empty verbalizer token list")]
    EmptyClassTokens { class: String },
    #[error("gold label index {index} out of range ({classes} classes)")]
    BadLabel { index: usize, classes: usize },
    #[error("{rows} distribution rows vs {labels} labels")]
    RowLabelMismatch { rows: usize, labels: usize },
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("backend {backend:?} does not support {needs}")]
    Capability { backend: String, needs: String },
    #[error("a label-aware verbalizer must train with the base template (no LABEL/CONJ slots)")]
    LabelAwareTemplate,
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fine-tuning hyperparameters. Defaults: lr 1e-5, at most 100 epochs,
/// patience 10, batch size 8, 500-char inputs, k = 32.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_chars: usize,
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            max_epochs: 100,
            patience: 10,
            batch_size: 8,
            seed: 42,
            max_chars: 500,
            k: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        for (name, value) in [
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("batch_size", self.batch_size),
            ("max_chars", self.max_chars),
            ("k", self.k),
        ] {
            if value == 0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-class mean log-probabilities `L(y|x)`; every entry is <= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionScores {
    pub per_class: Vec<f64>,
}

/// `L(y_i|x)`: mean of floored log-probabilities of class i's verbalizer
/// tokens. The divisor is the actual token-list length, which keeps the
/// value a proper mean when assignment left a class with fewer than k
/// tokens.
pub fn class_scores(
    row: ArrayView1<'_, f64>,
    verbalizer: &Verbalizer,
) -> Result<PredictionScores, TrainError> {
    let mut per_class = Vec::with_capacity(verbalizer.num_classes());
    for (class_idx, tokens) in verbalizer.class_tokens.iter().enumerate() {
        if tokens.is_empty() {
            return Err(TrainError::EmptyClassTokens {
                class: verbalizer.classes[class_idx].clone(),
            });
        }
        let mut sum = 0.0;
        for entry in tokens {
            let index = entry.token_id.index();
            if index >= row.len() {
                return Err(TrainError::Backend(BackendError::UnknownTokenId(
                    entry.token_id.0,
                )));
            }
            sum += row[index].max(PROB_FLOOR).ln();
        }
        per_class.push(sum / tokens.len() as f64);
    }
    Ok(PredictionScores { per_class })
}

/// Cross-entropy over the batch: `-sum_x L(gold_x | x)`. Non-negative, and
/// zero exactly when every gold-class token has probability 1.
pub fn training_loss(
    rows: &VocabDistribution,
    gold: &[usize],
    verbalizer: &Verbalizer,
) -> Result<f64, TrainError> {
    if rows.num_rows() != gold.len() {
        return Err(TrainError::RowLabelMismatch {
            rows: rows.num_rows(),
            labels: gold.len(),
        });
    }
    let mut loss = 0.0;
    for (i, &label) in gold.iter().enumerate() {
        if label >= verbalizer.num_classes() {
            return Err(TrainError::BadLabel {
                index: label,
                classes: verbalizer.num_classes(),
            });
        }
        let scores = class_scores(rows.row(i), verbalizer)?;
        loss -= scores.per_class[label];
    }
    Ok(loss)
}

/// Index of the maximum with ties resolved to the lowest index.
pub fn argmax_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class: argmax of [`class_scores`].
pub fn predict(row: ArrayView1<'_, f64>, verbalizer: &Verbalizer) -> Result<usize, TrainError> {
    let scores = class_scores(row, verbalizer)?;
    Ok(argmax_tie_lowest(&scores.per_class))
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

/// Early-stopping bookkeeping: stop after `patience` epochs without strict
/// improvement; the best epoch is the earliest one with the highest metric.
#[derive(Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Feed one epoch's validation metric. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        let improved = match self.best {
            None => true,
            Some((_, best_metric)) => metric > best_metric,
        };
        if improved {
            self.best = Some((epoch, metric));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Outcome of a fine-tuning run: the best-epoch checkpoint and the history.
#[derive(Debug, Clone)]
pub struct FineTuneResult {
    pub checkpoint: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

fn render_base_prompts(
    examples: &[&Example],
    template: &Template,
    max_chars: usize,
) -> Result<Vec<crate::templating::PromptText>, TrainError> {
    examples
        .iter()
        .map(|ex| render(template, &ex.text, None, None, max_chars).map_err(TrainError::from))
        .collect()
}

fn predict_batch(
    examples: &[&Example],
    label_set: &LabelSet,
    verbalizer: &Verbalizer,
    template: &Template,
    backend: &dyn MaskedLmBackend,
    max_chars: usize,
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut gold = Vec::with_capacity(examples.len());
    let mut predicted = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let prompts = render_base_prompts(chunk, template, max_chars)?;
        let dist = backend.mask_distribution(&prompts)?;
        for (i, ex) in chunk.iter().enumerate() {
            let class = label_set.class_index(&ex.label).ok_or_else(|| {
                TrainError::Verbalizer(VerbalizerError::Validation(format!(
                    "label {:?} is not registered",
                    ex.label
                )))
            })?;
            gold.push(class);
            predicted.push(predict(dist.row(i), verbalizer)?);
        }
    }
    Ok((gold, predicted))
}

/// Fine-tune the backend with the verbalizer objective.
///
/// Each epoch shuffles the training examples with a ChaCha8 stream seeded
/// from the run seed, applies one `train_step` per batch, and scores
/// validation macro-F1 with the prediction rule. The checkpoint of the best
/// validation epoch is kept at `checkpoint_dir/best.ckpt`; training stops
/// after `patience` epochs without improvement or at `max_epochs`.
pub fn fine_tune(
    split: &FewShotSplit,
    label_set: &LabelSet,
    verbalizer: &Verbalizer,
    base_template: &Template,
    backend: &mut dyn MaskedLmBackend,
    config: &TrainConfig,
    checkpoint_dir: &Path,
) -> Result<FineTuneResult, TrainError> {
    config.validate()?;
    if !backend.capabilities().trainable {
        return Err(TrainError::Capability {
            backend: backend.name().to_string(),
            needs: "training".to_string(),
        });
    }
    // Label-aware verbalizers are built with the label-aware template but
    // must train and infer with the plain base template.
    if verbalizer.requires_base_template
        && (base_template.has_label_slot() || base_template.has_conj_slot())
    {
        return Err(TrainError::LabelAwareTemplate);
    }
    verbalizer.validate(backend.vocab())?;

    let gold_class = |ex: &Example| -> Result<usize, TrainError> {
        label_set.class_index(&ex.label).ok_or_else(|| {
            TrainError::Verbalizer(VerbalizerError::Validation(format!(
                "label {:?} is not registered",
                ex.label
            )))
        })
    };
    for class_idx in 0..verbalizer.num_classes() {
        if verbalizer.class_tokens[class_idx].is_empty() {
            return Err(TrainError::EmptyClassTokens {
                class: verbalizer.classes[class_idx].clone(),
            });
        }
    }

    std::fs::create_dir_all(checkpoint_dir)?;
    let checkpoint = checkpoint_dir.join("best.ckpt");
    backend.set_learning_rate(config.learning_rate);

    let mut rng = seeded_rng(config.seed, "fine-tune-shuffle");
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = Vec::new();
    let validation: Vec<&Example> = split.validation.iter().collect();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        shuffle(&mut rng, &mut order);

        let mut epoch_loss = 0.0;
        for batch_indices in order.chunks(config.batch_size) {
            let examples: Vec<&Example> =
                batch_indices.iter().map(|&i| &split.train[i]).collect();
            let prompts = render_base_prompts(&examples, base_template, config.max_chars)?;
            let mut target_sets = Vec::with_capacity(examples.len());
            for ex in &examples {
                target_sets.push(verbalizer.class_token_ids(gold_class(ex)?));
            }
            let loss = backend.train_step(&TrainBatch::MaskTargets {
                prompts: &prompts,
                target_sets: &target_sets,
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / split.train.len().max(1) as f64;

        let (gold, predicted) = predict_batch(
            &validation,
            label_set,
            verbalizer,
            base_template,
            backend,
            config.max_chars,
            config.batch_size,
        )?;
        let confusion = metrics::confusion_matrix(&gold, &predicted, label_set.len());
        let val_macro_f1 = metrics::macro_f1(&metrics::per_class_f1(&confusion));

        history.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_f1,
        });
        let (improved, stop) = stopper.observe(epoch, val_macro_f1);
        if improved {
            backend.snapshot(&checkpoint)?;
        }
        if stop {
            break;
        }
    }

    let (best_epoch, best_val_f1) = stopper.best().expect("at least one epoch ran");
    Ok(FineTuneResult {
        checkpoint,
        history,
        best_epoch,
        best_val_f1,
    })
}

/// Restore the checkpoint and score the test set with the prediction rule.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    checkpoint: &Path,
    test: &[Example],
    label_set: &LabelSet,
    verbalizer: &Verbalizer,
    base_template: &Template,
    backend: &mut dyn MaskedLmBackend,
    config: &TrainConfig,
    method: &str,
) -> Result<EvalReport, TrainError> {
    backend.restore(checkpoint)?;
    let examples: Vec<&Example> = test.iter().collect();
    let (gold, predicted) = predict_batch(
        &examples,
        label_set,
        verbalizer,
        base_template,
        backend,
        config.max_chars,
        config.batch_size,
    )?;
    Ok(EvalReport::from_predictions(
        method,
        config.seed,
        label_set.classes(),
        &gold,
        &predicted,
    ))
}

fn truncate_chars(text: &str, max_chars: usize) -> String {
    text.chars().take(max_chars).collect()
}

fn cls_predict_batch(
    examples: &[&Example],
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    max_chars: usize,
    batch_size: usize,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut gold = Vec::with_capacity(examples.len());
    let mut predicted = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let texts: Vec<String> = chunk
            .iter()
            .map(|ex| truncate_chars(&ex.text, max_chars))
            .collect();
        let logits = backend.cls_logits(&texts)?;
        for (i, ex) in chunk.iter().enumerate() {
            let class = label_set.class_index(&ex.label).ok_or_else(|| {
                TrainError::Verbalizer(VerbalizerError::Validation(format!(
                    "label {:?} is not registered",
                    ex.label
                )))
            })?;
            gold.push(class);
            let row: Vec<f64> = logits.row(i).to_vec();
            predicted.push(argmax_tie_lowest(&row));
        }
    }
    Ok((gold, predicted))
}

/// Traditional fine-tuning baseline: cross-entropy on the classification
/// head over plain truncated text, same loop and early stopping as
/// [`fine_tune`], no verbalizer or template involved.
pub fn traditional_ft(
    split: &FewShotSplit,
    label_set: &LabelSet,
    backend: &mut dyn MaskedLmBackend,
    config: &TrainConfig,
    checkpoint_dir: &Path,
) -> Result<FineTuneResult, TrainError> {
    config.validate()?;
    let caps = backend.capabilities();
    if !caps.has_cls_head {
        return Err(TrainError::Capability {
            backend: backend.name().to_string(),
            needs: "a classification head".to_string(),
        });
    }
    if !caps.trainable {
        return Err(TrainError::Capability {
            backend: backend.name().to_string(),
            needs: "training".to_string(),
        });
    }

    std::fs::create_dir_all(checkpoint_dir)?;
    let checkpoint = checkpoint_dir.join("best.ckpt");
    backend.set_learning_rate(config.learning_rate);

    let gold_class = |ex: &Example| -> Result<usize, TrainError> {
        label_set.class_index(&ex.label).ok_or_else(|| {
            TrainError::Verbalizer(VerbalizerError::Validation(format!(
                "label {:?} is not registered",
                ex.label
            )))
        })
    };

    let mut rng = seeded_rng(config.seed, "fine-tune-shuffle");
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = Vec::new();
    let validation: Vec<&Example> = split.validation.iter().collect();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        shuffle(&mut rng, &mut order);

        let mut epoch_loss = 0.0;
        for batch_indices in order.chunks(config.batch_size) {
            let mut texts = Vec::with_capacity(batch_indices.len());
            let mut labels = Vec::with_capacity(batch_indices.len());
            for &i in batch_indices {
                let ex = &split.train[i];
                texts.push(truncate_chars(&ex.text, config.max_chars));
                labels.push(gold_class(ex)?);
            }
            let loss = backend.train_step(&TrainBatch::ClassHead {
                texts: &texts,
                labels: &labels,
                num_classes: label_set.len(),
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
        }
        let train_loss = epoch_loss / split.train.len().max(1) as f64;

        let (gold, predicted) = cls_predict_batch(
            &validation,
            label_set,
            backend,
            config.max_chars,
            config.batch_size,
        )?;
        let confusion = metrics::confusion_matrix(&gold, &predicted, label_set.len());
        let val_macro_f1 = metrics::macro_f1(&metrics::per_class_f1(&confusion));

        history.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_f1,
        });
        let (improved, stop) = stopper.observe(epoch, val_macro_f1);
        if improved {
            backend.snapshot(&checkpoint)?;
        }
        if stop {
            break;
        }
    }

    let (best_epoch, best_val_f1) = stopper.best().expect("at least one epoch ran");
    Ok(FineTuneResult {
        checkpoint,
        history,
        best_epoch,
        best_val_f1,
    })
}

/// Evaluate a traditional-FT checkpoint via the classification head.
pub fn evaluate_cls(
    checkpoint: &Path,
    test: &[Example],
    label_set: &LabelSet,
    backend: &mut dyn MaskedLmBackend,
    config: &TrainConfig,
) -> Result<EvalReport, TrainError> {
    backend.restore(checkpoint)?;
    let examples: Vec<&Example> = test.iter().collect();
    let (gold, predicted) = cls_predict_batch(
        &examples,
        label_set,
        backend,
        config.max_chars,
        config.batch_size,
    )?;
    Ok(EvalReport::from_predictions(
        "traditional_ft",
        config.seed,
        label_set.classes(),
        &gold,
        &predicted,
    ))
}
