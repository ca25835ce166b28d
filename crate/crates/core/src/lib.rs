//! Few-shot prompt-based text classification built around automatic
//! verbalizer construction.
//!
//! The crate covers the full pipeline: dataset ingestion and seeded few-shot
//! sampling ([`corpus`]), prompt templates with a single mask slot
//! ([`templating`]), a masked-LM backend contract with a table-driven mock
//! and a small trainable model ([`backend`]), verbalizer construction by
//! five strategies ([`verbalizers`]), verbalizer-driven fine-tuning and
//! macro-F1 evaluation ([`training`]), and conjunction-search plus
//! logits-difference interpretation ([`analysis`]).

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod templating;
pub mod training;
pub mod verbalizers;

pub use analysis::{
    aggregate_runs, logits_difference, search_conjunction, AggregateReport, AnalysisError,
    ConjunctionReport, LogitsDiffReport, RunResult,
};
pub use backend::{
    BackendError, Capabilities, EmbeddingTable, MaskLogits, MaskedLmBackend, MockBackend,
    TinyMlm, TokenId, TrainBatch, VocabDistribution, Vocabulary,
};
pub use corpus::{load_dataset, sample_few_shot, CorpusError, DataFormat, Dataset, Example, FewShotSplit, LabelSet};
pub use metrics::EvalReport;
pub use templating::{PromptText, Template, TemplateError, MASK_MARKER};
pub use training::{TrainConfig, TrainError};
pub use verbalizers::{ScoreMatrix, Verbalizer, VerbalizerError};

/// Any error produced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Verbalizer(#[from] VerbalizerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl Error {
    /// True for errors caused by configuration or method applicability
    /// (as opposed to internal failures). The CLI maps these to exit code 2.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Corpus(CorpusError::Sampling { .. }) => true,
            Error::Corpus(_) => true,
            Error::Template(_) => true,
            Error::Backend(BackendError::Capability { .. }) => true,
            Error::Verbalizer(VerbalizerError::MultiTokenLabel { .. }) => true,
            Error::Verbalizer(VerbalizerError::DuplicateLabelWord { .. }) => true,
            Error::Verbalizer(VerbalizerError::MissingLabelWord { .. }) => true,
            Error::Verbalizer(VerbalizerError::EmptyConjunction) => true,
            Error::Train(TrainError::Capability { .. }) => true,
            _ => false,
        }
    }
}
