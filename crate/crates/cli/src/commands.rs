//! The single-shot subcommands: build-verbalizer, train, evaluate,
//! search-conjunction, and interpret.

use std::path::{Path, PathBuf};

use promptcls_core::analysis::{
    logits_difference, search_conjunction, write_bar_chart, write_conjunction_csv,
    write_logits_diff_csv,
};
use promptcls_core::corpus::sample_few_shot;
use promptcls_core::training::{evaluate, evaluate_cls, fine_tune, traditional_ft};
use promptcls_core::verbalizers::Verbalizer;

use crate::backend_setup::{load_backend, validate_method};
use crate::config::{Method, RunConfig};
use crate::experiment::{
    build_verbalizer, cell_dir, load_dataset_full, run_cell, templates, test_examples,
    verbalizer_file_json, write_history, write_json,
};
use crate::CliError;

fn first_shots(config: &RunConfig) -> usize {
    config.shots[0]
}

fn first_seed(config: &RunConfig) -> u64 {
    config.seeds[0]
}

fn load_verbalizer_file(path: &Path) -> Result<Verbalizer, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read verbalizer {}: {e}", path.display())))?;
    Ok(Verbalizer::from_json_str(&text)?)
}

/// Build the configured verbalizer from one seeded split and write it (plus
/// a provenance block) as JSON.
pub fn cmd_build_verbalizer(config: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    if config.method == Method::TraditionalFt {
        return Err(CliError::Config(
            "traditional_ft has no verbalizer to build".into(),
        ));
    }
    let dataset = load_dataset_full(config)?;
    let templates = templates(config)?;
    let backend = load_backend(config)?;
    validate_method(config, backend.as_dyn())?;

    let shots = first_shots(config);
    let seed = first_seed(config);
    let split = sample_few_shot(&dataset, shots, seed)?;
    let verbalizer = build_verbalizer(
        config,
        &templates,
        dataset.label_set(),
        &split,
        backend.as_dyn(),
    )?;

    let out = match out {
        Some(path) => path,
        None => {
            let dir = config.run_dir();
            std::fs::create_dir_all(&dir)?;
            dir.join("verbalizer.json")
        }
    };
    write_json(&out, &verbalizer_file_json(config, &templates, &verbalizer, seed))?;
    println!("{}", out.display());
    Ok(())
}

/// Fine-tune one cell (first shots x first seed unless overridden via the
/// global --shots/--seeds flags), optionally with a pre-built verbalizer.
pub fn cmd_train(config: &RunConfig, verbalizer_path: Option<PathBuf>) -> Result<(), CliError> {
    let dataset = load_dataset_full(config)?;
    let templates = templates(config)?;
    let prototype = load_backend(config)?;
    validate_method(config, prototype.as_dyn())?;

    let shots = first_shots(config);
    let seed = first_seed(config);
    let dir = cell_dir(&config.run_dir(), shots, seed);
    std::fs::create_dir_all(&dir)?;

    if let Some(path) = verbalizer_path {
        // train with an explicit verbalizer instead of rebuilding one
        let verbalizer = load_verbalizer_file(&path)?;
        let labels = dataset.label_set().clone();
        let split = sample_few_shot(&dataset, shots, seed)?;
        let mut backend = prototype.fresh();
        verbalizer.validate(backend.vocab())?;
        let result = fine_tune(
            &split,
            &labels,
            &verbalizer,
            &templates.base,
            backend.as_mut(),
            &config.train_for_seed(seed),
            &dir,
        )?;
        write_history(&dir.join("history.jsonl"), &result.history)?;
        println!(
            "trained {} epochs; best validation macro-F1 {:.4} at epoch {}",
            result.history.len(),
            result.best_val_f1,
            result.best_epoch
        );
        println!("checkpoint: {}", result.checkpoint.display());
        return Ok(());
    }

    if config.method == Method::TraditionalFt {
        let labels = dataset.label_set().clone();
        let split = sample_few_shot(&dataset, shots, seed)?;
        let mut backend = prototype.fresh();
        let result = traditional_ft(
            &split,
            &labels,
            backend.as_mut(),
            &config.train_for_seed(seed),
            &dir,
        )?;
        write_history(&dir.join("history.jsonl"), &result.history)?;
        println!(
            "trained {} epochs; best validation macro-F1 {:.4} at epoch {}",
            result.history.len(),
            result.best_val_f1,
            result.best_epoch
        );
        println!("checkpoint: {}", result.checkpoint.display());
        return Ok(());
    }

    let artifacts = run_cell(config, &dataset, &prototype, &templates, shots, seed, &dir)?;
    println!("test macro-F1 {:.4}", artifacts.report.macro_f1);
    for (name, path) in &artifacts.paths {
        println!("{name}: {path}");
    }
    Ok(())
}

/// Evaluate a checkpoint on the test partition.
pub fn cmd_evaluate(
    config: &RunConfig,
    checkpoint: &Path,
    verbalizer_path: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let dataset = load_dataset_full(config)?;
    let templates = templates(config)?;
    let prototype = load_backend(config)?;
    let labels = dataset.label_set().clone();
    let test = test_examples(&dataset)?;
    let train_config = config.train_for_seed(first_seed(config));
    let mut backend = prototype.fresh();

    let report = if config.method == Method::TraditionalFt {
        evaluate_cls(checkpoint, &test, &labels, backend.as_mut(), &train_config)?
    } else {
        let path = verbalizer_path.ok_or_else(|| {
            CliError::Config("evaluate needs --verbalizer for verbalizer methods".into())
        })?;
        let verbalizer = load_verbalizer_file(&path)?;
        verbalizer.validate(backend.vocab())?;
        evaluate(
            checkpoint,
            &test,
            &labels,
            &verbalizer,
            &templates.base,
            backend.as_mut(),
            &train_config,
            config.method.name(),
        )?
    };

    println!("macro-F1: {:.4}", report.macro_f1);
    for (class, f1) in report.classes.iter().zip(report.per_class_f1.iter()) {
        println!("  {class}: F1 {f1:.4}");
    }
    if let Some(path) = out {
        write_json(&path, &serde_json::to_value(&report)?)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

/// Rank connective candidates with the mask-between-label-and-token probe;
/// optionally evaluate a shortlist of candidates end to end.
pub fn cmd_search_conjunction(
    config: &RunConfig,
    shortlist: Option<Vec<String>>,
    evaluate_shortlist: bool,
) -> Result<(), CliError> {
    let dataset = load_dataset_full(config)?;
    let templates = templates(config)?;
    let prototype = load_backend(config)?;

    let shots = first_shots(config);
    let seed = first_seed(config);
    let split = sample_few_shot(&dataset, shots, seed)?;
    let report = search_conjunction(
        &split,
        &templates.base,
        Some(&templates.conj_search),
        dataset.label_set(),
        prototype.as_dyn(),
        config.train.k,
        config.train.max_chars,
        config.train.batch_size,
    )?;

    let run_dir = config.run_dir();
    std::fs::create_dir_all(&run_dir)?;
    write_json(
        &run_dir.join("conjunction_search.json"),
        &serde_json::to_value(&report)?,
    )?;
    write_conjunction_csv(&report, &run_dir.join("conjunction_search.csv"), 50)?;

    println!("top connective candidates (mean mask probability over {} probes):", report.prompts_scored);
    for (rank, candidate) in report.top(10).iter().enumerate() {
        println!("  {:>2}. {:<12} {:.6}", rank + 1, candidate.token, candidate.score);
    }

    if !evaluate_shortlist {
        println!("artifacts: {}", run_dir.display());
        return Ok(());
    }

    // evaluate the configured shortlist plus the top search hit, each as the
    // conjunction of a full LAAV grid; report mean macro-F1 across all cells
    let mut candidates = shortlist.unwrap_or_else(|| config.conj_shortlist.clone());
    if let Some(top) = report.ranked.first() {
        if !candidates.contains(&top.token) {
            candidates.push(top.token.clone());
        }
    }
    let mut rows = Vec::new();
    for candidate in &candidates {
        let mut candidate_config = config.clone();
        candidate_config.method = Method::Laav;
        candidate_config.conj = candidate.clone();
        let mut f1s = Vec::new();
        for &shots in &config.shots {
            for &seed in &config.seeds {
                let dir = run_dir
                    .join("conj_eval")
                    .join(candidate)
                    .join(format!("shots{shots}_seed{seed}"));
                let artifacts = run_cell(
                    &candidate_config,
                    &dataset,
                    &prototype,
                    &templates,
                    shots,
                    seed,
                    &dir,
                )?;
                f1s.push(artifacts.report.macro_f1);
            }
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        rows.push((candidate.clone(), mean, f1s.len()));
    }
    let value = serde_json::json!({
        "per_candidate": rows
            .iter()
            .map(|(c, mean, cells)| serde_json::json!({
                "conj": c,
                "mean_macro_f1": mean,
                "cells": cells,
            }))
            .collect::<Vec<_>>(),
    });
    write_json(&run_dir.join("conjunction_eval.json"), &value)?;
    println!("\nshortlist evaluation (mean macro-F1 over the full grid):");
    for (candidate, mean, cells) in &rows {
        println!("  {candidate:<12} {:.4}  ({cells} cells)", mean);
    }
    println!("artifacts: {}", run_dir.display());
    Ok(())
}

/// Logits-difference interpretation of a trained verbalizer on the test set.
pub fn cmd_interpret(
    config: &RunConfig,
    checkpoint: &Path,
    verbalizer_path: &Path,
) -> Result<(), CliError> {
    let dataset = load_dataset_full(config)?;
    let templates = templates(config)?;
    let prototype = load_backend(config)?;
    let test = test_examples(&dataset)?;
    let verbalizer = load_verbalizer_file(verbalizer_path)?;
    let mut backend = prototype.fresh();
    verbalizer.validate(backend.vocab())?;

    let report = logits_difference(
        &test,
        dataset.label_set(),
        &verbalizer,
        &templates.base,
        checkpoint,
        backend.as_mut(),
        config.train.max_chars,
        config.train.batch_size,
    )?;

    let run_dir = config.run_dir();
    std::fs::create_dir_all(&run_dir)?;
    let run_id = config.run_id();
    write_json(
        &run_dir.join(format!("{run_id}_logits_diff.json")),
        &serde_json::to_value(&report)?,
    )?;
    write_logits_diff_csv(&report, &run_dir.join(format!("{run_id}_logits_diff.csv")))?;

    println!(
        "average logits difference ({}): {:.4}",
        report.method, report.average_difference
    );
    let mut bars = Vec::new();
    for (class, diffs) in &report.per_class {
        println!("  class {class}:");
        for diff in diffs.iter().take(5) {
            println!("    {:<14} {:+.4}", diff.token, diff.difference);
        }
        if let Some(top) = diffs.first() {
            bars.push((format!("{class}:{}", top.token), top.difference));
        }
    }
    write_bar_chart(
        &run_dir.join(format!("{run_id}_logits_diff.svg")),
        &format!("per-class top logits difference ({})", report.method),
        &bars,
    )?;
    println!("artifacts: {}", run_dir.display());
    Ok(())
}
