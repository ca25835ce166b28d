//! Experiment cells, the run record, the full grid runner, and reporting.
//!
//! Each (shots, seed) cell is an independent unit: it samples its split,
//! builds its verbalizer, fine-tunes a fresh backend handle, evaluates on
//! the test partition, and persists its artifacts under
//! `<output_dir>/<run_id>/cells/shots<N>_seed<S>/`. A cell whose `eval.json`
//! already exists is resumed, so re-running a partially failed grid only
//! redoes the failed cells.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use promptcls_core::analysis::{
    aggregate_runs, render_table, write_aggregate_csv, write_bar_chart, RunResult,
};
use promptcls_core::backend::MaskedLmBackend;
use promptcls_core::corpus::{
    load_examples, sample_few_shot, Dataset, Example, FewShotSplit, LabelSet,
};
use promptcls_core::metrics::EvalReport;
use promptcls_core::templating::Template;
use promptcls_core::training::{evaluate, evaluate_cls, fine_tune, traditional_ft, EpochRecord};
use promptcls_core::verbalizers::{
    build_amulap, build_laav_with_template, build_npprompt, build_pet, build_petal, Verbalizer,
};

use crate::backend_setup::{device, AppBackend};
use crate::config::{Method, RunConfig};
use crate::CliError;

/// The three template families resolved from the config (derived forms are
/// filled in when the config does not override them).
pub struct Templates {
    pub base: Template,
    pub label_aware: Template,
    pub conj_search: Template,
}

pub fn templates(config: &RunConfig) -> Result<Templates, CliError> {
    let base = Template::parse(&config.template_base)?;
    let label_aware = match &config.template_label_aware {
        Some(spec) => Template::parse(spec)?,
        None => base.derive_label_aware()?,
    };
    let conj_search = match &config.template_conj_search {
        Some(spec) => Template::parse(spec)?,
        None => base.derive_conj_search()?,
    };
    Ok(Templates {
        base,
        label_aware,
        conj_search,
    })
}

pub fn label_set(config: &RunConfig) -> Result<LabelSet, CliError> {
    LabelSet::new(config.labels.clone()).map_err(|e| CliError::Config(e.to_string()))
}

/// Load the train pool (and the test partition, when configured).
pub fn load_dataset_full(config: &RunConfig) -> Result<Dataset, CliError> {
    let format = config.data_format()?;
    let labels = label_set(config)?;
    let train = load_examples(&config.dataset_train, format, &labels)?;
    let mut dataset = Dataset::from_examples(train, labels.clone(), "train")
        .map_err(CliError::from)?;
    if let Some(test_path) = &config.dataset_test {
        let test = load_examples(test_path, format, &labels)?;
        dataset.add_partition("test", test)?;
    }
    Ok(dataset)
}

pub fn test_examples(dataset: &Dataset) -> Result<Vec<Example>, CliError> {
    if !dataset.has_partition("test") {
        return Err(CliError::Config(
            "evaluation needs a test set: set dataset.test in the config".into(),
        ));
    }
    Ok(dataset
        .partition("test")
        .map_err(CliError::from)?
        .into_iter()
        .cloned()
        .collect())
}

/// Build the configured method's verbalizer for one split.
pub fn build_verbalizer(
    config: &RunConfig,
    templates: &Templates,
    labels: &LabelSet,
    split: &FewShotSplit,
    backend: &dyn MaskedLmBackend,
) -> Result<Verbalizer, CliError> {
    let k = config.train.k;
    let max_chars = config.train.max_chars;
    let batch = config.train.batch_size;
    let verbalizer = match config.method {
        Method::Pet => build_pet(labels, backend)?,
        Method::Amulap => {
            build_amulap(split, &templates.base, labels, backend, k, max_chars, batch)?
        }
        Method::Laav => build_laav_with_template(
            split,
            &templates.label_aware,
            labels,
            backend,
            k,
            &config.conj,
            max_chars,
            batch,
        )?,
        Method::Petal => {
            build_petal(split, &templates.base, labels, backend, max_chars, batch)?
        }
        Method::Npprompt => build_npprompt(labels, backend, k)?,
        Method::TraditionalFt => {
            return Err(CliError::Config(
                "traditional_ft does not build a verbalizer".into(),
            ))
        }
    };
    Ok(verbalizer)
}

/// Verbalizer JSON with its provenance block.
pub fn verbalizer_file_json(
    config: &RunConfig,
    templates: &Templates,
    verbalizer: &Verbalizer,
    seed: u64,
) -> serde_json::Value {
    let mut value = verbalizer.to_json_value();
    let scoring_template = match config.method {
        Method::Laav => templates.label_aware.spec().to_string(),
        _ => templates.base.spec().to_string(),
    };
    let mut provenance = serde_json::Map::new();
    provenance.insert("method".into(), config.method.name().into());
    provenance.insert("template".into(), scoring_template.into());
    provenance.insert("train_template".into(), templates.base.spec().into());
    provenance.insert("seed".into(), seed.into());
    provenance.insert("k".into(), (config.train.k as u64).into());
    if config.method == Method::Npprompt {
        // which embedding matrix NPPrompt ranked against
        provenance.insert("embeddings".into(), "input".into());
    }
    value["provenance"] = serde_json::Value::Object(provenance);
    value
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)?;
    for record in history {
        file.write_all(serde_json::to_string(record)?.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn cell_dir(run_dir: &Path, shots: usize, seed: u64) -> PathBuf {
    run_dir.join("cells").join(format!("shots{shots}_seed{seed}"))
}

/// Artifacts of one completed cell.
pub struct CellArtifacts {
    pub report: EvalReport,
    pub paths: BTreeMap<String, String>,
}

/// Run one (shots, seed) cell end to end on a fresh backend handle.
pub fn run_cell(
    config: &RunConfig,
    dataset: &Dataset,
    prototype: &AppBackend,
    templates: &Templates,
    shots: usize,
    seed: u64,
    dir: &Path,
) -> Result<CellArtifacts, CliError> {
    std::fs::create_dir_all(dir)?;
    let labels = dataset.label_set().clone();
    let split = sample_few_shot(dataset, shots, seed)?;
    let test = test_examples(dataset)?;
    let train_config = config.train_for_seed(seed);
    let mut backend = prototype.fresh();
    let mut paths = BTreeMap::new();

    let report = if config.method == Method::TraditionalFt {
        let result = traditional_ft(&split, &labels, backend.as_mut(), &train_config, dir)?;
        write_history(&dir.join("history.jsonl"), &result.history)?;
        paths.insert("checkpoint".into(), result.checkpoint.display().to_string());
        paths.insert("history".into(), dir.join("history.jsonl").display().to_string());
        evaluate_cls(&result.checkpoint, &test, &labels, backend.as_mut(), &train_config)?
    } else {
        let verbalizer = build_verbalizer(config, templates, &labels, &split, backend.as_ref())?;
        let verbalizer_path = dir.join("verbalizer.json");
        write_json(
            &verbalizer_path,
            &verbalizer_file_json(config, templates, &verbalizer, seed),
        )?;
        paths.insert("verbalizer".into(), verbalizer_path.display().to_string());

        let result = fine_tune(
            &split,
            &labels,
            &verbalizer,
            &templates.base,
            backend.as_mut(),
            &train_config,
            dir,
        )?;
        write_history(&dir.join("history.jsonl"), &result.history)?;
        paths.insert("checkpoint".into(), result.checkpoint.display().to_string());
        paths.insert("history".into(), dir.join("history.jsonl").display().to_string());
        evaluate(
            &result.checkpoint,
            &test,
            &labels,
            &verbalizer,
            &templates.base,
            backend.as_mut(),
            &train_config,
            config.method.name(),
        )?
    };

    let eval_path = dir.join("eval.json");
    write_json(&eval_path, &serde_json::to_value(&report)?)?;
    paths.insert("eval".into(), eval_path.display().to_string());
    Ok(CellArtifacts { report, paths })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CellRecord {
    pub shots: usize,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

/// Provenance of one experiment run; sufficient to locate and reproduce
/// every cell.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub created_at: String,
    pub finished_at: Option<String>,
    pub device: String,
    /// Optimizer hyperparameters used by trainable backends.
    pub optimizer: serde_json::Value,
    pub cells: Vec<CellRecord>,
}

impl RunRecord {
    pub fn new(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            finished_at: None,
            device: device(),
            optimizer: serde_json::json!({
                "name": "adam",
                "beta1": 0.9,
                "beta2": 0.999,
                "eps": 1e-8,
                "weight_decay": 0.0,
            }),
            cells: Vec::new(),
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), CliError> {
        write_json(&run_dir.join("run_record.json"), &serde_json::to_value(self)?)
    }
}

/// The full grid: every (shots, seed) cell, then aggregation. Failed cells
/// are recorded and skipped by the aggregate; rerunning the same config
/// resumes only the incomplete cells.
pub fn cmd_run_experiment(config: &RunConfig) -> Result<(), CliError> {
    let run_id = config.run_id();
    let run_dir = config.run_dir();
    std::fs::create_dir_all(&run_dir)?;
    let config_path = run_dir.join("config.json");
    if !config_path.exists() {
        write_json(&config_path, &serde_json::to_value(config)?)?;
    }

    let dataset = load_dataset_full(config)?;
    let templates = templates(config)?;
    let prototype = crate::backend_setup::load_backend(config)?;
    crate::backend_setup::validate_method(config, prototype.as_dyn())?;

    let mut record = RunRecord::new(&run_id);
    let mut results = Vec::new();
    let mut failures = 0usize;
    for &shots in &config.shots {
        for &seed in &config.seeds {
            let dir = cell_dir(&run_dir, shots, seed);
            let eval_path = dir.join("eval.json");
            if eval_path.exists() {
                let report: EvalReport =
                    serde_json::from_str(&std::fs::read_to_string(&eval_path)?)?;
                println!(
                    "cell shots={shots} seed={seed}: resumed (macro-F1 {:.4})",
                    report.macro_f1
                );
                results.push(RunResult {
                    method: config.method.name().to_string(),
                    shots,
                    report,
                });
                record.cells.push(CellRecord {
                    shots,
                    seed,
                    status: "resumed".into(),
                    message: None,
                    artifacts: BTreeMap::from([(
                        "eval".to_string(),
                        eval_path.display().to_string(),
                    )]),
                });
                continue;
            }
            match run_cell(config, &dataset, &prototype, &templates, shots, seed, &dir) {
                Ok(artifacts) => {
                    println!(
                        "cell shots={shots} seed={seed}: macro-F1 {:.4}",
                        artifacts.report.macro_f1
                    );
                    results.push(RunResult {
                        method: config.method.name().to_string(),
                        shots,
                        report: artifacts.report,
                    });
                    record.cells.push(CellRecord {
                        shots,
                        seed,
                        status: "ok".into(),
                        message: None,
                        artifacts: artifacts.paths,
                    });
                }
                Err(err) => {
                    failures += 1;
                    eprintln!("warning: cell shots={shots} seed={seed} failed: {err}");
                    record.cells.push(CellRecord {
                        shots,
                        seed,
                        status: "failed".into(),
                        message: Some(err.to_string()),
                        artifacts: BTreeMap::new(),
                    });
                }
            }
        }
    }

    if results.is_empty() {
        record.save(&run_dir)?;
        return Err(CliError::Internal("every experiment cell failed".into()));
    }
    if failures > 0 {
        eprintln!("warning: aggregating over {} completed cells ({failures} failed)", results.len());
    }

    let aggregate = aggregate_runs(&results)?;
    write_json(&run_dir.join("aggregate.json"), &serde_json::to_value(&aggregate)?)?;
    write_aggregate_csv(&aggregate, &run_dir.join("aggregate.csv"))?;
    let table = render_table(&aggregate);
    std::fs::write(run_dir.join("table.txt"), &table)?;

    let bars: Vec<(String, f64)> = aggregate
        .cells
        .iter()
        .map(|c| (format!("{}-shot", c.shots), c.mean_macro_f1))
        .collect();
    write_bar_chart(
        &run_dir.join(format!("{run_id}_macro_f1.svg")),
        &format!("{} macro-F1 by shots", config.method.name()),
        &bars,
    )?;

    record.finished_at = Some(chrono::Utc::now().to_rfc3339());
    record.save(&run_dir)?;

    println!("\nmacro-F1, mean (std) over seeds:\n{table}");
    println!("artifacts: {}", run_dir.display());
    Ok(())
}

/// Merge completed cells from one or more run directories into one table.
/// Falls back to scanning `cells/*/eval.json` when a run was interrupted
/// before its record was written.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<(), CliError> {
    let mut results = Vec::new();
    for run_dir in run_dirs {
        let record_path = run_dir.join("run_record.json");
        if record_path.exists() {
            let record: RunRecord =
                serde_json::from_str(&std::fs::read_to_string(&record_path)?)?;
            for cell in &record.cells {
                let Some(eval) = cell.artifacts.get("eval") else {
                    continue;
                };
                let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(eval)?)?;
                results.push(RunResult {
                    method: report.method.clone(),
                    shots: cell.shots,
                    report,
                });
            }
            continue;
        }
        let cells = run_dir.join("cells");
        if !cells.is_dir() {
            return Err(CliError::Config(format!(
                "{} has neither run_record.json nor a cells directory",
                run_dir.display()
            )));
        }
        for entry in std::fs::read_dir(&cells)? {
            let dir = entry?.path();
            let eval = dir.join("eval.json");
            if !eval.exists() {
                continue;
            }
            // cell directories are named shots<N>_seed<S>
            let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
            let shots = name
                .strip_prefix("shots")
                .and_then(|rest| rest.split('_').next())
                .and_then(|n| n.parse::<usize>().ok())
                .ok_or_else(|| {
                    CliError::Config(format!("unrecognized cell directory name {name:?}"))
                })?;
            let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(&eval)?)?;
            results.push(RunResult {
                method: report.method.clone(),
                shots,
                report,
            });
        }
    }
    if results.is_empty() {
        return Err(CliError::Config(
            "no completed cells found in the given run directories".into(),
        ));
    }
    let aggregate = aggregate_runs(&results)?;
    print!("{}", render_table(&aggregate));
    Ok(())
}
