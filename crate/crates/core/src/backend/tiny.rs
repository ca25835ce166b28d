//! A small trainable masked LM that runs the full pipeline on CPU.
//!
//! The model predicts the mask token from the mean embedding of the other
//! tokens in the prompt: `p = softmax(W2 tanh(W1 c + b1) + b2)` with
//! `c = mean(E[context])`. All parameters (embeddings, both layers, and the
//! optional classification head over the same pooled representation) train
//! with Adam under manual backprop. Everything is f64 and single-threaded,
//! so runs are reproducible bit-for-bit from their seeds.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{
    greedy_pieces, softmax, word_tokens, BackendError, Capabilities, EmbeddingTable, MaskLogits,
    MaskedLmBackend, TokenId, TrainBatch, VocabDistribution, Vocabulary,
};
use crate::rng::{seeded_rng, uniform_below, uniform_range};
use crate::templating::{PromptText, MASK_MARKER};
use crate::training::PROB_FLOOR;

const MASK_SURFACE: &str = MASK_MARKER;
const UNK_SURFACE: &str = "[UNK]";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyMlmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Sequence limit in tokens; longer prompts are a length error.
    pub max_tokens: usize,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for TinyMlmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 24,
            hidden_dim: 32,
            max_tokens: 256,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: BTreeMap<String, AdamSlot>,
}

impl AdamState {
    fn new(lr: f64) -> Self {
        // Conventional Adam defaults; the paper fixes only the learning rate.
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) {
        let slot = self.slots.entry(name.to_string()).or_default();
        if slot.m.len() != param.len() {
            slot.m = vec![0.0; param.len()];
            slot.v = vec![0.0; param.len()];
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
struct ClsHead {
    w: Array2<f64>,
    b: Array1<f64>,
}

#[derive(Debug)]
struct Grads {
    embed: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    cls_w: Option<Array2<f64>>,
    cls_b: Option<Array1<f64>>,
}

struct Pooled {
    ctx: Vec<usize>,
    c: Array1<f64>,
    h: Array1<f64>,
}

enum OutputHead {
    Mask,
    Cls,
}

#[derive(Debug, Clone)]
pub struct TinyMlm {
    config: TinyMlmConfig,
    vocab: Vocabulary,
    mask_id: usize,
    unk_id: usize,
    embed: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    cls: Option<ClsHead>,
    adam: AdamState,
}

impl TinyMlm {
    /// Build a fresh model whose vocabulary is the sorted unique tokens of
    /// `corpus` plus the `[MASK]` and `[UNK]` specials.
    pub fn from_corpus(corpus: &[String], config: TinyMlmConfig) -> Result<Self, BackendError> {
        let mut words = std::collections::BTreeSet::new();
        for line in corpus {
            for token in word_tokens(line) {
                if token != MASK_SURFACE && token != UNK_SURFACE {
                    words.insert(token);
                }
            }
        }
        Self::with_vocab(words.into_iter().collect(), config)
    }

    /// Build a fresh model over an explicit word list (specials prepended).
    pub fn with_vocab(words: Vec<String>, config: TinyMlmConfig) -> Result<Self, BackendError> {
        let mut tokens = vec![MASK_SURFACE.to_string(), UNK_SURFACE.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != MASK_SURFACE && w != UNK_SURFACE));
        let vocab = Vocabulary::new(tokens, &[MASK_SURFACE, UNK_SURFACE])?;
        let v = vocab.len();
        let d = config.embed_dim;
        let h = config.hidden_dim;
        if v < 3 || d == 0 || h == 0 {
            return Err(BackendError::Vocab(
                "tiny model needs a non-trivial vocabulary and non-zero dims".to_string(),
            ));
        }

        let mut rng = seeded_rng(config.seed, "tiny-mlm-init");
        let mut init = |rows: usize, cols: usize, scale: f64| -> Array2<f64> {
            let mut a = Array2::zeros((rows, cols));
            for x in a.iter_mut() {
                *x = uniform_range(&mut rng, -scale, scale);
            }
            a
        };
        let embed = init(v, d, 0.1);
        let w1 = init(h, d, 1.0 / (d as f64).sqrt());
        let w2 = init(v, h, 1.0 / (h as f64).sqrt());

        let mask_id = vocab.id(MASK_SURFACE).unwrap().index();
        let unk_id = vocab.id(UNK_SURFACE).unwrap().index();
        Ok(Self {
            config,
            vocab,
            mask_id,
            unk_id,
            embed,
            w1,
            b1: Array1::zeros(h),
            w2,
            b2: Array1::zeros(v),
            cls: None,
            adam: AdamState::new(1e-5),
        })
    }

    /// Load a standalone handle from a checkpoint file.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::checkpoint(path, e))?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| BackendError::checkpoint(path, e))?;
        file.into_model(path)
    }

    pub fn config(&self) -> &TinyMlmConfig {
        &self.config
    }

    fn tokenize_ids(&self, text: &str, index: usize) -> Result<Vec<usize>, BackendError> {
        let mut ids = Vec::new();
        for word in word_tokens(text) {
            if word == MASK_SURFACE {
                ids.push(self.mask_id);
            } else if let Some(id) = self.vocab.id(&word) {
                ids.push(id.index());
            } else {
                for piece in greedy_pieces(&word, &self.vocab, Some(TokenId(self.unk_id as u32)))? {
                    ids.push(piece.index());
                }
            }
        }
        if ids.len() > self.config.max_tokens {
            return Err(BackendError::PromptTooLong {
                index,
                actual: ids.len(),
                limit: self.config.max_tokens,
                unit: "tokens",
            });
        }
        Ok(ids)
    }

    fn pool(&self, ids: &[usize], exclude_mask: bool) -> Pooled {
        let ctx: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&id| !(exclude_mask && id == self.mask_id))
            .collect();
        let mut c = Array1::zeros(self.config.embed_dim);
        if !ctx.is_empty() {
            for &id in &ctx {
                c += &self.embed.row(id);
            }
            c /= ctx.len() as f64;
        }
        let h = (self.w1.dot(&c) + &self.b1).mapv(f64::tanh);
        Pooled { ctx, c, h }
    }

    fn mask_forward(&self, prompt: &PromptText, index: usize) -> Result<(Pooled, Array1<f64>), BackendError> {
        let ids = self.tokenize_ids(prompt.rendered(), index)?;
        let masks = ids.iter().filter(|&&id| id == self.mask_id).count();
        if masks != 1 {
            return Err(BackendError::BatchMismatch(format!(
                "prompt {index} tokenizes to {masks} mask tokens, expected exactly 1"
            )));
        }
        let pooled = self.pool(&ids, true);
        let z = self.w2.dot(&pooled.h) + &self.b2;
        Ok((pooled, z))
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            embed: Array2::zeros(self.embed.raw_dim()),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            cls_w: self.cls.as_ref().map(|c| Array2::zeros(c.w.raw_dim())),
            cls_b: self.cls.as_ref().map(|c| Array1::zeros(c.b.raw_dim())),
        }
    }

    fn backprop(&self, pooled: &Pooled, grad_z: &Array1<f64>, head: OutputHead, grads: &mut Grads) {
        let grad_h = match head {
            OutputHead::Mask => {
                add_outer(&mut grads.w2, grad_z.view(), pooled.h.view());
                grads.b2 += grad_z;
                self.w2.t().dot(grad_z)
            }
            OutputHead::Cls => {
                let cls = self.cls.as_ref().expect("cls head present");
                add_outer(
                    grads.cls_w.as_mut().expect("cls grads present"),
                    grad_z.view(),
                    pooled.h.view(),
                );
                *grads.cls_b.as_mut().expect("cls grads present") += grad_z;
                cls.w.t().dot(grad_z)
            }
        };
        let grad_pre = &grad_h * &pooled.h.mapv(|x| 1.0 - x * x);
        add_outer(&mut grads.w1, grad_pre.view(), pooled.c.view());
        grads.b1 += &grad_pre;
        if !pooled.ctx.is_empty() {
            let grad_c = self.w1.t().dot(&grad_pre) / pooled.ctx.len() as f64;
            for &id in &pooled.ctx {
                let mut row = grads.embed.row_mut(id);
                row += &grad_c;
            }
        }
    }

    fn adam_step(&mut self, grads: &Grads) {
        self.adam.t += 1;
        let mut adam = std::mem::replace(&mut self.adam, AdamState::new(0.0));
        adam.update("embed", flat_mut2(&mut self.embed), flat2(&grads.embed));
        adam.update("w1", flat_mut2(&mut self.w1), flat2(&grads.w1));
        adam.update("b1", flat_mut1(&mut self.b1), flat1(&grads.b1));
        adam.update("w2", flat_mut2(&mut self.w2), flat2(&grads.w2));
        adam.update("b2", flat_mut1(&mut self.b2), flat1(&grads.b2));
        if let (Some(cls), Some(gw), Some(gb)) =
            (self.cls.as_mut(), grads.cls_w.as_ref(), grads.cls_b.as_ref())
        {
            adam.update("cls_w", flat_mut2(&mut cls.w), flat2(gw));
            adam.update("cls_b", flat_mut1(&mut cls.b), flat1(gb));
        }
        self.adam = adam;
    }

    fn ensure_cls_head(&mut self, num_classes: usize) -> Result<(), BackendError> {
        match &self.cls {
            Some(head) if head.w.nrows() == num_classes => Ok(()),
            Some(head) => Err(BackendError::BatchMismatch(format!(
                "classification head has {} classes, batch declares {}",
                head.w.nrows(),
                num_classes
            ))),
            None => {
                if num_classes < 2 {
                    return Err(BackendError::BatchMismatch(
                        "classification head needs at least 2 classes".to_string(),
                    ));
                }
                let h = self.config.hidden_dim;
                let mut rng = seeded_rng(self.config.seed, "tiny-mlm-cls-head");
                let scale = 1.0 / (h as f64).sqrt();
                let mut w = Array2::zeros((num_classes, h));
                for x in w.iter_mut() {
                    *x = uniform_range(&mut rng, -scale, scale);
                }
                self.cls = Some(ClsHead {
                    w,
                    b: Array1::zeros(num_classes),
                });
                Ok(())
            }
        }
    }

    /// Masked-token pretraining on a plain-text corpus: each step masks one
    /// random in-vocabulary token per sampled sentence and trains to recover
    /// it. Returns the mean per-example loss of each step.
    pub fn pretrain(
        &mut self,
        corpus: &[String],
        steps: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Vec<f64>, BackendError> {
        self.set_learning_rate(lr);
        let sentences: Vec<Vec<String>> = corpus
            .iter()
            .map(|line| word_tokens(line))
            .filter(|tokens| tokens.len() >= 2 && tokens.iter().all(|t| t != MASK_SURFACE))
            .collect();
        if sentences.is_empty() {
            return Err(BackendError::BatchMismatch(
                "pretraining corpus has no usable sentences".to_string(),
            ));
        }
        let mut rng = seeded_rng(seed, "tiny-mlm-pretrain");
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut prompts = Vec::with_capacity(batch_size);
            let mut targets = Vec::with_capacity(batch_size);
            while prompts.len() < batch_size {
                let sentence = &sentences[uniform_below(&mut rng, sentences.len() as u64) as usize];
                let pos = uniform_below(&mut rng, sentence.len() as u64) as usize;
                let Some(target) = self.vocab.id(&sentence[pos]) else {
                    continue;
                };
                if self.vocab.is_special(target) {
                    continue;
                }
                let masked: Vec<&str> = sentence
                    .iter()
                    .enumerate()
                    .map(|(i, w)| if i == pos { MASK_SURFACE } else { w.as_str() })
                    .collect();
                let prompt = PromptText::new(masked.join(" ")).map_err(|e| {
                    BackendError::BatchMismatch(format!("pretraining prompt invalid: {e}"))
                })?;
                prompts.push(prompt);
                targets.push(vec![target]);
            }
            let loss = self.train_step(&TrainBatch::MaskTargets {
                prompts: &prompts,
                target_sets: &targets,
            })?;
            losses.push(loss / prompts.len() as f64);
        }
        Ok(losses)
    }

    fn to_checkpoint(&self) -> CheckpointFile {
        CheckpointFile {
            kind: "tiny-mlm".to_string(),
            config: self.config.clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            embed: tensor2(&self.embed),
            w1: tensor2(&self.w1),
            b1: tensor1(&self.b1),
            w2: tensor2(&self.w2),
            b2: tensor1(&self.b2),
            cls: self
                .cls
                .as_ref()
                .map(|c| ClsCheckpoint {
                    w: tensor2(&c.w),
                    b: tensor1(&c.b),
                }),
            adam: self.adam.clone(),
        }
    }
}

fn flat2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn flat_mut2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn flat1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn flat_mut1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn add_outer(target: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let mut row = target.row_mut(i);
        for (j, &bj) in b.iter().enumerate() {
            row[j] += ai * bj;
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorData {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn tensor2(a: &Array2<f64>) -> TensorData {
    TensorData {
        shape: vec![a.nrows(), a.ncols()],
        data: a.iter().copied().collect(),
    }
}

fn tensor1(a: &Array1<f64>) -> TensorData {
    TensorData {
        shape: vec![a.len()],
        data: a.to_vec(),
    }
}

fn restore2(t: &TensorData, path: &Path) -> Result<Array2<f64>, BackendError> {
    if t.shape.len() != 2 || t.shape[0] * t.shape[1] != t.data.len() {
        return Err(BackendError::checkpoint(path, "bad tensor shape"));
    }
    Ok(Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).expect("shape checked"))
}

fn restore1(t: &TensorData, path: &Path) -> Result<Array1<f64>, BackendError> {
    if t.shape.len() != 1 || t.shape[0] != t.data.len() {
        return Err(BackendError::checkpoint(path, "bad tensor shape"));
    }
    Ok(Array1::from_vec(t.data.clone()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ClsCheckpoint {
    w: TensorData,
    b: TensorData,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    kind: String,
    config: TinyMlmConfig,
    vocabulary: Vec<String>,
    embed: TensorData,
    w1: TensorData,
    b1: TensorData,
    w2: TensorData,
    b2: TensorData,
    cls: Option<ClsCheckpoint>,
    adam: AdamState,
}

impl CheckpointFile {
    fn into_model(self, path: &Path) -> Result<TinyMlm, BackendError> {
        if self.kind != "tiny-mlm" {
            return Err(BackendError::checkpoint(
                path,
                format!("unexpected checkpoint kind {:?}", self.kind),
            ));
        }
        let vocab = Vocabulary::new(self.vocabulary, &[MASK_SURFACE, UNK_SURFACE])?;
        let mask_id = vocab
            .id(MASK_SURFACE)
            .ok_or_else(|| BackendError::checkpoint(path, "missing mask token"))?
            .index();
        let unk_id = vocab
            .id(UNK_SURFACE)
            .ok_or_else(|| BackendError::checkpoint(path, "missing unk token"))?
            .index();
        let model = TinyMlm {
            mask_id,
            unk_id,
            embed: restore2(&self.embed, path)?,
            w1: restore2(&self.w1, path)?,
            b1: restore1(&self.b1, path)?,
            w2: restore2(&self.w2, path)?,
            b2: restore1(&self.b2, path)?,
            cls: match self.cls {
                Some(c) => Some(ClsHead {
                    w: restore2(&c.w, path)?,
                    b: restore1(&c.b, path)?,
                }),
                None => None,
            },
            adam: self.adam,
            config: self.config,
            vocab,
        };
        if model.embed.nrows() != model.vocab.len()
            || model.embed.ncols() != model.config.embed_dim
        {
            return Err(BackendError::checkpoint(path, "embedding shape mismatch"));
        }
        Ok(model)
    }
}

impl MaskedLmBackend for TinyMlm {
    fn name(&self) -> &'static str {
        "tiny-mlm"
    }

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_embeddings: true,
            has_cls_head: true,
            trainable: true,
        }
    }

    fn mask_distribution(&self, prompts: &[PromptText]) -> Result<VocabDistribution, BackendError> {
        let mut rows = Array2::zeros((prompts.len(), self.vocab.len()));
        for (i, prompt) in prompts.iter().enumerate() {
            let (_, z) = self.mask_forward(prompt, i)?;
            let p = softmax(z.view());
            rows.row_mut(i).assign(&p);
        }
        VocabDistribution::new(rows)
    }

    fn mask_logits(&self, prompts: &[PromptText]) -> Result<MaskLogits, BackendError> {
        let mut rows = Array2::zeros((prompts.len(), self.vocab.len()));
        for (i, prompt) in prompts.iter().enumerate() {
            let (_, z) = self.mask_forward(prompt, i)?;
            rows.row_mut(i).assign(&z);
        }
        MaskLogits::new(rows)
    }

    fn tokenize_label(&self, word: &str) -> Result<Vec<TokenId>, BackendError> {
        greedy_pieces(word, &self.vocab, Some(TokenId(self.unk_id as u32)))
    }

    fn embeddings(&self) -> Result<EmbeddingTable, BackendError> {
        Ok(EmbeddingTable::new(self.embed.clone()))
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

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
                let mut grads = self.zero_grads();
                let mut loss = 0.0;
                for (i, (prompt, targets)) in prompts.iter().zip(target_sets.iter()).enumerate() {
                    if targets.is_empty() {
                        return Err(BackendError::BatchMismatch(format!(
                            "prompt {i} has an empty target set"
                        )));
                    }
                    for &token in targets.iter() {
                        if !self.vocab.contains_id(token) {
                            return Err(BackendError::UnknownTokenId(token.0));
                        }
                    }
                    let (pooled, z) = self.mask_forward(prompt, i)?;
                    let p = softmax(z.view());
                    let k = targets.len() as f64;
                    let mut grad_z = p.clone();
                    for &token in targets.iter() {
                        loss -= p[token.index()].max(PROB_FLOOR).ln() / k;
                        grad_z[token.index()] -= 1.0 / k;
                    }
                    self.backprop(&pooled, &grad_z, OutputHead::Mask, &mut grads);
                }
                self.adam_step(&grads);
                Ok(loss)
            }
            TrainBatch::ClassHead {
                texts,
                labels,
                num_classes,
            } => {
                if texts.len() != labels.len() {
                    return Err(BackendError::BatchMismatch(format!(
                        "{} texts vs {} labels",
                        texts.len(),
                        labels.len()
                    )));
                }
                self.ensure_cls_head(*num_classes)?;
                let mut grads = self.zero_grads();
                let mut loss = 0.0;
                for (i, (text, &label)) in texts.iter().zip(labels.iter()).enumerate() {
                    if label >= *num_classes {
                        return Err(BackendError::BatchMismatch(format!(
                            "label {label} out of range for {num_classes} classes"
                        )));
                    }
                    let ids = self.tokenize_ids(text, i)?;
                    let pooled = self.pool(&ids, false);
                    let cls = self.cls.as_ref().expect("cls head initialized");
                    let z = cls.w.dot(&pooled.h) + &cls.b;
                    let p = softmax(z.view());
                    loss -= p[label].max(PROB_FLOOR).ln();
                    let mut grad_z = p;
                    grad_z[label] -= 1.0;
                    self.backprop(&pooled, &grad_z, OutputHead::Cls, &mut grads);
                }
                self.adam_step(&grads);
                Ok(loss)
            }
        }
    }

    fn cls_logits(&self, texts: &[String]) -> Result<Array2<f64>, BackendError> {
        let cls = self.cls.as_ref().ok_or_else(|| BackendError::Capability {
            backend: "tiny-mlm".to_string(),
            needs: "an initialized classification head".to_string(),
        })?;
        let mut rows = Array2::zeros((texts.len(), cls.w.nrows()));
        for (i, text) in texts.iter().enumerate() {
            let ids = self.tokenize_ids(text, i)?;
            let pooled = self.pool(&ids, false);
            let z = cls.w.dot(&pooled.h) + &cls.b;
            rows.row_mut(i).assign(&z);
        }
        Ok(rows)
    }

    fn snapshot(&self, path: &Path) -> Result<(), BackendError> {
        let json = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| BackendError::checkpoint(path, e))?;
        std::fs::write(path, json).map_err(|e| BackendError::checkpoint(path, e))
    }

    fn restore(&mut self, path: &Path) -> Result<(), BackendError> {
        *self = TinyMlm::load(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_corpus() -> Vec<String> {
        vec![
            "the film was wonderful and amazing".to_string(),
            "the film was terrible and awful".to_string(),
            "it was good and wonderful".to_string(),
            "it was bad and terrible".to_string(),
        ]
    }

    fn toy_model() -> TinyMlm {
        TinyMlm::from_corpus(&toy_corpus(), TinyMlmConfig::default()).unwrap()
    }

    fn prompt(s: &str) -> PromptText {
        PromptText::new(s).unwrap()
    }

    #[test]
    fn softmax_of_logits_matches_distribution() {
        let model = toy_model();
        let p = prompt("the film was [MASK]");
        let dist = model.mask_distribution(&[p.clone()]).unwrap();
        let logits = model.mask_logits(&[p]).unwrap();
        let soft = softmax(logits.row(0));
        let mut max_delta: f64 = 0.0;
        for j in 0..model.vocab().len() {
            max_delta = max_delta.max((soft[j] - dist.row(0)[j]).abs());
        }
        assert!(max_delta < 1e-12, "max delta {max_delta}");
        // argmax agreement follows from softmax monotonicity
        let argmax = |row: ArrayView1<'_, f64>| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let d2 = model.mask_distribution(&[prompt("it was [MASK]")]).unwrap();
        let l2 = model.mask_logits(&[prompt("it was [MASK]")]).unwrap();
        assert_eq!(argmax(d2.row(0)), argmax(l2.row(0)));
    }

    #[test]
    fn batch_equals_concatenated_singletons() {
        let model = toy_model();
        let prompts = vec![prompt("the film was [MASK]"), prompt("it was [MASK]")];
        let batched = model.mask_distribution(&prompts).unwrap();
        for (i, p) in prompts.iter().enumerate() {
            let single = model.mask_distribution(std::slice::from_ref(p)).unwrap();
            for j in 0..model.vocab().len() {
                assert!((batched.row(i)[j] - single.row(0)[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let model = toy_model();
        let p = prompt("the film was [MASK]");
        let a = model.mask_distribution(&[p.clone()]).unwrap();
        let b = model.mask_distribution(&[p]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_reduces_loss_over_five_steps() {
        let mut model = toy_model();
        model.set_learning_rate(0.05);
        let prompts = vec![
            prompt("the film was wonderful and [MASK]"),
            prompt("the film was terrible and [MASK]"),
        ];
        let targets = vec![
            vec![model.vocab().id("amazing").unwrap()],
            vec![model.vocab().id("awful").unwrap()],
        ];
        let mut losses = Vec::new();
        for _ in 0..5 {
            let batch = TrainBatch::MaskTargets {
                prompts: &prompts,
                target_sets: &targets,
            };
            losses.push(model.train_step(&batch).unwrap());
        }
        assert!(
            losses[4] < losses[0],
            "loss trajectory should decrease: {losses:?}"
        );
    }

    #[test]
    fn snapshot_restore_preserves_distributions() {
        let mut model = toy_model();
        model.set_learning_rate(0.05);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.ckpt");
        let p = prompt("the film was [MASK]");
        let before = model.mask_distribution(&[p.clone()]).unwrap();
        model.snapshot(&path).unwrap();

        let prompts = vec![prompt("it was good and [MASK]")];
        let targets = vec![vec![model.vocab().id("wonderful").unwrap()]];
        for _ in 0..3 {
            model
                .train_step(&TrainBatch::MaskTargets {
                    prompts: &prompts,
                    target_sets: &targets,
                })
                .unwrap();
        }
        let trained = model.mask_distribution(&[p.clone()]).unwrap();
        assert_ne!(before, trained);

        model.restore(&path).unwrap();
        let restored = model.mask_distribution(&[p]).unwrap();
        assert_eq!(before, restored);
    }

    #[test]
    fn truncated_checkpoint_is_a_restore_error() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.ckpt");
        model.snapshot(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 3]).unwrap();
        let mut other = toy_model();
        assert!(matches!(
            other.restore(&path).unwrap_err(),
            BackendError::Checkpoint { .. }
        ));
    }

    #[test]
    fn embeddings_snapshot_is_unchanged_by_training() {
        let mut model = toy_model();
        model.set_learning_rate(0.05);
        let table = model.embeddings().unwrap();
        let before = table.matrix().clone();
        let prompts = vec![prompt("the film was [MASK]")];
        let targets = vec![vec![model.vocab().id("wonderful").unwrap()]];
        model
            .train_step(&TrainBatch::MaskTargets {
                prompts: &prompts,
                target_sets: &targets,
            })
            .unwrap();
        assert_eq!(table.matrix(), &before);
        assert_ne!(model.embeddings().unwrap().matrix(), &before);
    }

    #[test]
    fn cls_head_trains_and_scores() {
        let mut model = toy_model();
        model.set_learning_rate(0.05);
        let texts = vec![
            "the film was wonderful and amazing".to_string(),
            "the film was terrible and awful".to_string(),
        ];
        assert!(matches!(
            model.cls_logits(&texts).unwrap_err(),
            BackendError::Capability { .. }
        ));
        let labels = vec![0usize, 1usize];
        let mut losses = Vec::new();
        for _ in 0..30 {
            losses.push(
                model
                    .train_step(&TrainBatch::ClassHead {
                        texts: &texts,
                        labels: &labels,
                        num_classes: 2,
                    })
                    .unwrap(),
            );
        }
        assert!(losses.last().unwrap() < &losses[0]);
        let logits = model.cls_logits(&texts).unwrap();
        assert!(logits[[0, 0]] > logits[[0, 1]]);
        assert!(logits[[1, 1]] > logits[[1, 0]]);
    }

    #[test]
    fn prompt_over_token_limit_errors() {
        let model = TinyMlm::from_corpus(
            &toy_corpus(),
            TinyMlmConfig {
                max_tokens: 4,
                ..TinyMlmConfig::default()
            },
        )
        .unwrap();
        let err = model
            .mask_distribution(&[prompt("the film was wonderful and [MASK]")])
            .unwrap_err();
        assert!(matches!(err, BackendError::PromptTooLong { .. }));
    }

    #[test]
    fn tokenize_label_single_and_multi() {
        let model = toy_model();
        assert_eq!(model.tokenize_label("wonderful").unwrap().len(), 1);
        assert!(model.tokenize_label("napakasama").unwrap().len() >= 2);
    }

    #[test]
    fn pretraining_reduces_loss() {
        let mut model = toy_model();
        let losses = model.pretrain(&toy_corpus(), 120, 8, 0.05, 3).unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "pretraining loss should fall: {head} -> {tail}");
    }
}
