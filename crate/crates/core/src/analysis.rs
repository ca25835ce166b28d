//! Conjunction search, logits-difference verbalizer interpretation, and
//! multi-seed result aggregation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, MaskedLmBackend, TokenId};
use crate::corpus::{Example, FewShotSplit, LabelSet};
use crate::metrics::EvalReport;
use crate::templating::{conjunction_search_render, render, Template, TemplateError};
use crate::training::TrainError;
use crate::verbalizers::{build_amulap, Verbalizer, VerbalizerError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Verbalizer(#[from] VerbalizerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("class {class:?} has no test examples")]
    MissingClassInTest { class: String },
    #[error("aggregation over mixed label sets: {0}")]
    MixedLabelSets(String),
    #[error("empty report group")]
    EmptyGroup,
    #[error("verbalizer has no tokens to analyze")]
    EmptyVerbalizer,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One connective candidate with its aggregate score (a mean probability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub token_id: TokenId,
    pub token: String,
    pub score: f64,
}

/// Ranked connective candidates from the mask-between-label-and-token probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjunctionReport {
    /// All candidate tokens sorted by aggregate score descending.
    pub ranked: Vec<CandidateScore>,
    /// Per-class breakdown with the same ordering rule.
    pub per_class: Vec<(String, Vec<CandidateScore>)>,
    /// Number of probe prompts the means were taken over.
    pub prompts_scored: usize,
}

impl ConjunctionReport {
    pub fn top(&self, n: usize) -> &[CandidateScore] {
        &self.ranked[..n.min(self.ranked.len())]
    }
}

fn rank_candidates(
    sums: &[f64],
    count: usize,
    backend: &dyn MaskedLmBackend,
) -> Vec<CandidateScore> {
    let vocab = backend.vocab();
    let mut out: Vec<CandidateScore> = (0..vocab.len())
        .filter(|&v| !vocab.is_special(TokenId(v as u32)))
        .map(|v| CandidateScore {
            token_id: TokenId(v as u32),
            token: vocab.surface(TokenId(v as u32)).unwrap().to_string(),
            score: if count == 0 { 0.0 } else { sums[v] / count as f64 },
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.token_id.cmp(&b.token_id)));
    out
}

/// Search for connective words: build an AMuLaP verbalizer, then for every
/// class, every training example of that class, and every verbalizer token
/// of that class, ask the backend what fills the mask between the label word
/// and the token. Candidate scores are mean probabilities over all probe
/// prompts, so they stay in [0, 1] and classes with different token counts
/// contribute comparably.
#[allow(clippy::too_many_arguments)]
pub fn search_conjunction(
    split: &FewShotSplit,
    base_template: &Template,
    conj_search_template: Option<&Template>,
    label_set: &LabelSet,
    backend: &dyn MaskedLmBackend,
    k: usize,
    max_chars: usize,
    batch_size: usize,
) -> Result<ConjunctionReport, AnalysisError> {
    let derived;
    let search_template = match conj_search_template {
        Some(t) => t,
        None => {
            derived = base_template.derive_conj_search()?;
            &derived
        }
    };
    let amulap = build_amulap(split, base_template, label_set, backend, k, max_chars, batch_size)?;

    let vocab_size = backend.vocab().len();
    let batch_size = batch_size.max(1);
    let mut total_sums = vec![0.0; vocab_size];
    let mut total_count = 0usize;
    let mut per_class = Vec::with_capacity(label_set.len());

    for (class_idx, class) in label_set.classes().iter().enumerate() {
        let mut class_sums = vec![0.0; vocab_size];
        let mut class_count = 0usize;
        let mut prompts = Vec::new();
        for ex in split.train.iter().filter(|ex| ex.label == *class) {
            for entry in &amulap.class_tokens[class_idx] {
                prompts.push(conjunction_search_render(
                    search_template,
                    &ex.text,
                    label_set.label_word(class_idx),
                    &entry.token,
                    max_chars,
                )?);
            }
        }
        for chunk in prompts.chunks(batch_size) {
            let dist = backend.mask_distribution(chunk)?;
            for i in 0..chunk.len() {
                let row = dist.row(i);
                for v in 0..vocab_size {
                    class_sums[v] += row[v];
                    total_sums[v] += row[v];
                }
            }
            class_count += chunk.len();
            total_count += chunk.len();
        }
        per_class.push((
            class.clone(),
            rank_candidates(&class_sums, class_count, backend),
        ));
    }

    Ok(ConjunctionReport {
        ranked: rank_candidates(&total_sums, total_count, backend),
        per_class,
        prompts_scored: total_count,
    })
}

/// One verbalizer token's discriminative-power statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDiff {
    pub token_id: TokenId,
    pub token: String,
    pub in_class_mean: f64,
    pub out_class_mean: f64,
    /// `in_class_mean - out_class_mean`, exactly.
    pub difference: f64,
}

/// Per-token mean-logit differences between in-class and out-of-class test
/// examples, plus the per-verbalizer average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsDiffReport {
    pub method: String,
    /// Per class, sorted by difference descending.
    pub per_class: Vec<(String, Vec<TokenDiff>)>,
    /// Mean of `difference` over all tokens of all classes.
    pub average_difference: f64,
}

/// For each class and each of its verbalizer tokens, the mean raw logit over
/// in-class test examples minus the mean over all other test examples, using
/// the base template and the checkpointed model.
#[allow(clippy::too_many_arguments)]
pub fn logits_difference(
    test: &[Example],
    label_set: &LabelSet,
    verbalizer: &Verbalizer,
    base_template: &Template,
    checkpoint: &Path,
    backend: &mut dyn MaskedLmBackend,
    max_chars: usize,
    batch_size: usize,
) -> Result<LogitsDiffReport, AnalysisError> {
    backend.restore(checkpoint)?;

    let mut gold = Vec::with_capacity(test.len());
    for ex in test {
        let class = label_set.class_index(&ex.label).ok_or_else(|| {
            AnalysisError::Verbalizer(VerbalizerError::Validation(format!(
                "label {:?} is not registered",
                ex.label
            )))
        })?;
        gold.push(class);
    }

    // one logits row per test example, in test order
    let batch_size = batch_size.max(1);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(test.len());
    for chunk in test.chunks(batch_size) {
        let prompts: Result<Vec<_>, TemplateError> = chunk
            .iter()
            .map(|ex| render(base_template, &ex.text, None, None, max_chars))
            .collect();
        let logits = backend.mask_logits(&prompts?)?;
        for i in 0..chunk.len() {
            rows.push(logits.row(i).to_vec());
        }
    }

    logits_difference_from_rows(&rows, &gold, label_set, verbalizer)
}

/// The grouped-mean computation behind [`logits_difference`], on
/// already-extracted logits rows (one per example, aligned with `gold`).
pub fn logits_difference_from_rows(
    rows: &[Vec<f64>],
    gold: &[usize],
    label_set: &LabelSet,
    verbalizer: &Verbalizer,
) -> Result<LogitsDiffReport, AnalysisError> {
    if verbalizer.total_tokens() == 0 {
        return Err(AnalysisError::EmptyVerbalizer);
    }
    for (class_idx, class) in label_set.classes().iter().enumerate() {
        if !gold.iter().any(|&g| g == class_idx) {
            return Err(AnalysisError::MissingClassInTest {
                class: class.clone(),
            });
        }
    }

    let mut per_class = Vec::with_capacity(label_set.len());
    let mut diff_sum = 0.0;
    let mut diff_count = 0usize;
    for (class_idx, class) in label_set.classes().iter().enumerate() {
        let in_rows: Vec<usize> = (0..rows.len()).filter(|&i| gold[i] == class_idx).collect();
        let out_rows: Vec<usize> = (0..rows.len()).filter(|&i| gold[i] != class_idx).collect();
        let mut diffs = Vec::with_capacity(verbalizer.class_tokens[class_idx].len());
        for entry in &verbalizer.class_tokens[class_idx] {
            let v = entry.token_id.index();
            let in_mean = in_rows.iter().map(|&i| rows[i][v]).sum::<f64>() / in_rows.len() as f64;
            let out_mean = if out_rows.is_empty() {
                0.0
            } else {
                out_rows.iter().map(|&i| rows[i][v]).sum::<f64>() / out_rows.len() as f64
            };
            let difference = in_mean - out_mean;
            diff_sum += difference;
            diff_count += 1;
            diffs.push(TokenDiff {
                token_id: entry.token_id,
                token: entry.token.clone(),
                in_class_mean: in_mean,
                out_class_mean: out_mean,
                difference,
            });
        }
        diffs.sort_by(|a, b| b.difference.total_cmp(&a.difference).then(a.token_id.cmp(&b.token_id)));
        per_class.push((class.clone(), diffs));
    }

    Ok(LogitsDiffReport {
        method: verbalizer.method.clone(),
        per_class,
        average_difference: diff_sum / diff_count as f64,
    })
}

/// One completed experiment cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub shots: usize,
    pub report: EvalReport,
}

/// Mean and sample standard deviation of macro-F1 for one (method, shots)
/// group. `std_macro_f1` is absent for single-seed groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub method: String,
    pub shots: usize,
    pub mean_macro_f1: f64,
    pub std_macro_f1: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub cells: Vec<AggregateCell>,
}

/// Group results by (method, shots) and compute mean and sample standard
/// deviation of macro-F1 per group. Group order follows first appearance;
/// seed order within a group does not matter.
pub fn aggregate_runs(results: &[RunResult]) -> Result<AggregateReport, AnalysisError> {
    if results.is_empty() {
        return Err(AnalysisError::EmptyGroup);
    }
    let classes = &results[0].report.classes;
    for result in results {
        if &result.report.classes != classes {
            return Err(AnalysisError::MixedLabelSets(format!(
                "{:?} vs {:?}",
                classes, result.report.classes
            )));
        }
    }

    let mut order: Vec<(String, usize)> = Vec::new();
    for result in results {
        let key = (result.method.clone(), result.shots);
        if !order.contains(&key) {
            order.push(key);
        }
    }

    let mut cells = Vec::with_capacity(order.len());
    for (method, shots) in order {
        let f1s: Vec<f64> = results
            .iter()
            .filter(|r| r.method == method && r.shots == shots)
            .map(|r| r.report.macro_f1)
            .collect();
        let n = f1s.len();
        let mean = f1s.iter().sum::<f64>() / n as f64;
        let std = if n >= 2 {
            let var = f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        cells.push(AggregateCell {
            method,
            shots,
            mean_macro_f1: mean,
            std_macro_f1: std,
            seeds: n,
        });
    }
    Ok(AggregateReport { cells })
}

/// Render the aggregate as an aligned plain-text table: one row per shot
/// setting, one column per method, "mean (std)" cells in percent.
pub fn render_table(report: &AggregateReport) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut shots: Vec<usize> = Vec::new();
    for cell in &report.cells {
        if !methods.contains(&cell.method.as_str()) {
            methods.push(&cell.method);
        }
        if !shots.contains(&cell.shots) {
            shots.push(cell.shots);
        }
    }
    shots.sort_unstable();

    let cell_text = |method: &str, n: usize| -> String {
        report
            .cells
            .iter()
            .find(|c| c.method == method && c.shots == n)
            .map(|c| match c.std_macro_f1 {
                Some(std) => format!("{:.1} ({:.1})", c.mean_macro_f1 * 100.0, std * 100.0),
                None => format!("{:.1}", c.mean_macro_f1 * 100.0),
            })
            .unwrap_or_else(|| "-".to_string())
    };

    let mut widths: Vec<usize> = methods.iter().map(|m| m.len()).collect();
    for (j, method) in methods.iter().enumerate() {
        for &n in &shots {
            widths[j] = widths[j].max(cell_text(method, n).len());
        }
    }
    let shots_header = "shots";
    let shots_width = shots
        .iter()
        .map(|n| n.to_string().len())
        .max()
        .unwrap_or(0)
        .max(shots_header.len());

    let mut out = String::new();
    out.push_str(&format!("{shots_header:<shots_width$}"));
    for (j, method) in methods.iter().enumerate() {
        out.push_str(&format!("  {:>width$}", method, width = widths[j]));
    }
    out.push('\n');
    for &n in &shots {
        out.push_str(&format!("{n:<shots_width$}"));
        for (j, method) in methods.iter().enumerate() {
            out.push_str(&format!("  {:>width$}", cell_text(method, n), width = widths[j]));
        }
        out.push('\n');
    }
    out
}

/// Write the aggregate as CSV: method,shots,mean_macro_f1,std_macro_f1,seeds.
pub fn write_aggregate_csv(report: &AggregateReport, path: &Path) -> Result<(), AnalysisError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["method", "shots", "mean_macro_f1", "std_macro_f1", "seeds"])?;
    for cell in &report.cells {
        writer.write_record([
            cell.method.clone(),
            cell.shots.to_string(),
            format!("{}", cell.mean_macro_f1),
            cell.std_macro_f1.map(|s| format!("{s}")).unwrap_or_default(),
            cell.seeds.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Write the ranked conjunction candidates as CSV (top `limit`).
pub fn write_conjunction_csv(
    report: &ConjunctionReport,
    path: &Path,
    limit: usize,
) -> Result<(), AnalysisError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["rank", "token_id", "token", "score"])?;
    for (rank, candidate) in report.ranked.iter().take(limit).enumerate() {
        writer.write_record([
            (rank + 1).to_string(),
            candidate.token_id.to_string(),
            candidate.token.clone(),
            format!("{}", candidate.score),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Write per-token logits differences as CSV.
pub fn write_logits_diff_csv(report: &LogitsDiffReport, path: &Path) -> Result<(), AnalysisError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "class",
        "token_id",
        "token",
        "in_class_mean",
        "out_class_mean",
        "difference",
    ])?;
    for (class, diffs) in &report.per_class {
        for d in diffs {
            writer.write_record([
                class.clone(),
                d.token_id.to_string(),
                d.token.clone(),
                format!("{}", d.in_class_mean),
                format!("{}", d.out_class_mean),
                format!("{}", d.difference),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Emit a static SVG bar chart (labels on the x axis, one bar per value).
pub fn write_bar_chart(
    path: &Path,
    title: &str,
    bars: &[(String, f64)],
) -> Result<(), AnalysisError> {
    let width = 720.0;
    let height = 360.0;
    let margin = 50.0;
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let max_abs = bars
        .iter()
        .map(|(_, v)| v.abs())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let baseline = margin + plot_h / 2.0;
    let scale = (plot_h / 2.0 - 8.0) / max_abs;
    let n = bars.len().max(1) as f64;
    let slot = plot_w / n;
    let bar_w = (slot * 0.6).min(80.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    ));
    svg.push_str(&format!(
        "  <line x1=\"{margin}\" y1=\"{baseline:.1}\" x2=\"{:.1}\" y2=\"{baseline:.1}\" stroke=\"#444\"/>\n",
        width - margin
    ));
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = margin + slot * i as f64 + (slot - bar_w) / 2.0;
        let bar_h = value.abs() * scale;
        let y = if *value >= 0.0 { baseline - bar_h } else { baseline };
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{bar_h:.1}\" fill=\"#4878a8\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            x + bar_w / 2.0,
            height - margin / 2.0,
            xml_escape(label)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>\n",
            x + bar_w / 2.0,
            if *value >= 0.0 { y - 4.0 } else { y + bar_h + 12.0 },
            value
        ));
    }
    svg.push_str("</svg>\n");

    let mut file = std::fs::File::create(path)?;
    file.write_all(svg.as_bytes())?;
    Ok(())
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
