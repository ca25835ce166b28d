//! Backend construction from the run configuration, with a pretrain cache
//! for the tiny model.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use promptcls_core::backend::{MaskedLmBackend, MockBackend, TinyMlm, TinyMlmConfig};
use promptcls_core::verbalizers::build_pet;

use crate::config::{BackendSpec, Method, RunConfig};
use crate::CliError;

/// A loaded backend prototype; each experiment cell trains on a fresh copy,
/// so cells stay independent (single-writer per handle).
pub enum AppBackend {
    Mock(MockBackend),
    Tiny(TinyMlm),
}

impl AppBackend {
    pub fn fresh(&self) -> Box<dyn MaskedLmBackend> {
        match self {
            AppBackend::Mock(mock) => Box::new(mock.clone()),
            AppBackend::Tiny(tiny) => Box::new(tiny.clone()),
        }
    }

    pub fn as_dyn(&self) -> &dyn MaskedLmBackend {
        match self {
            AppBackend::Mock(mock) => mock,
            AppBackend::Tiny(tiny) => tiny,
        }
    }
}

/// Cache directory for pretrained tiny models: `PROMPTCLS_CACHE_DIR` or
/// `<output_dir>/cache`.
pub fn cache_dir(config: &RunConfig) -> PathBuf {
    match std::env::var_os("PROMPTCLS_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.output_dir.join("cache"),
    }
}

/// Device selection override; only "cpu" is supported.
pub fn device() -> String {
    match std::env::var("PROMPTCLS_DEVICE") {
        Ok(dev) if !dev.is_empty() => dev,
        _ => "cpu".to_string(),
    }
}

pub fn load_backend(config: &RunConfig) -> Result<AppBackend, CliError> {
    let dev = device();
    if dev != "cpu" {
        eprintln!("warning: PROMPTCLS_DEVICE={dev} requested, but only cpu is available; using cpu");
    }
    match &config.backend {
        BackendSpec::Mock { table } => Ok(AppBackend::Mock(MockBackend::from_file(table)?)),
        BackendSpec::Tiny {
            model,
            corpus,
            embed_dim,
            hidden_dim,
            max_tokens,
            pretrain_steps,
            pretrain_batch,
            pretrain_lr,
            pretrain_seed,
        } => {
            if let Some(path) = model {
                return Ok(AppBackend::Tiny(TinyMlm::load(path)?));
            }
            let corpus_path = corpus.as_ref().expect("validated at config load");
            let text = std::fs::read_to_string(corpus_path).map_err(|e| {
                CliError::Config(format!(
                    "cannot read pretraining corpus {}: {e}",
                    corpus_path.display()
                ))
            })?;
            let lines: Vec<String> = text.lines().map(str::to_string).collect();

            // cache key over the corpus content and every pretraining knob
            let mut hasher = Sha256::new();
            hasher.update(text.as_bytes());
            hasher.update(format!(
                "d{embed_dim}-h{hidden_dim}-t{max_tokens}-s{pretrain_steps}-b{pretrain_batch}-lr{pretrain_lr}-seed{pretrain_seed}"
            ));
            let digest = hasher.finalize();
            let key: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
            let cache = cache_dir(config);
            std::fs::create_dir_all(&cache)?;
            let cached = cache.join(format!("tiny-{key}.ckpt"));
            if cached.exists() {
                return Ok(AppBackend::Tiny(TinyMlm::load(&cached)?));
            }

            let mut tiny = TinyMlm::from_corpus(
                &lines,
                TinyMlmConfig {
                    embed_dim: *embed_dim,
                    hidden_dim: *hidden_dim,
                    max_tokens: *max_tokens,
                    seed: *pretrain_seed,
                },
            )?;
            eprintln!(
                "pretraining tiny model: {} sentences, {} steps",
                lines.len(),
                pretrain_steps
            );
            tiny.pretrain(
                &lines,
                *pretrain_steps,
                *pretrain_batch,
                *pretrain_lr,
                *pretrain_seed,
            )?;
            tiny.snapshot(&cached)?;
            eprintln!("cached pretrained model at {}", cached.display());
            Ok(AppBackend::Tiny(tiny))
        }
    }
}

/// Fail fast on method-specific requirements (exit code 2 paths).
pub fn validate_method(config: &RunConfig, backend: &dyn MaskedLmBackend) -> Result<(), CliError> {
    let label_set = promptcls_core::corpus::LabelSet::new(config.labels.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    match config.method {
        Method::Pet => {
            // surfaces the offending word in the error message
            build_pet(&label_set, backend).map_err(|e| CliError::Applicability(e.to_string()))?;
        }
        Method::Npprompt => {
            if !backend.capabilities().has_embeddings {
                return Err(CliError::Applicability(format!(
                    "method npprompt needs token embeddings, which backend {:?} does not expose",
                    backend.name()
                )));
            }
        }
        Method::TraditionalFt => {
            if !backend.capabilities().has_cls_head {
                return Err(CliError::Applicability(format!(
                    "method traditional_ft needs a classification head, which backend {:?} does not expose",
                    backend.name()
                )));
            }
        }
        Method::Laav => {
            if config.conj.trim().is_empty() {
                return Err(CliError::Config("method laav needs a non-empty conjunction".into()));
            }
        }
        _ => {}
    }
    Ok(())
}
