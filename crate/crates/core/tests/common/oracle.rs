//! Independent brute-force reference implementations.
//!
//! Everything here recomputes results from first principles on raw table
//! rows, sharing no code with the crate's implementation paths. Summations
//! follow training-example order, matching the documented contract, so
//! score-matrix comparisons can be exact.

use promptcls_core::backend::TokenId;
use promptcls_core::verbalizers::Verbalizer;

const FLOOR: f64 = 1e-12;

/// Eq. 1 / Eq. 4 scoring: `s(v, y) = sum over examples of class y of row[v]`.
pub fn score_sums(
    rows: &[Vec<f64>],
    example_class: &[usize],
    vocab_size: usize,
    num_classes: usize,
) -> Vec<Vec<f64>> {
    let mut scores = vec![vec![0.0f64; num_classes]; vocab_size];
    for y in 0..num_classes {
        for (i, &class) in example_class.iter().enumerate() {
            if class != y {
                continue;
            }
            for v in 0..vocab_size {
                scores[v][y] += rows[i][v];
            }
        }
    }
    scores
}

/// Argmax class assignment (ties to the lowest class index) followed by
/// per-class top-k (score descending, ties to the lowest token id).
pub fn assign_topk(
    scores: &[Vec<f64>],
    k: usize,
    num_classes: usize,
    is_special: impl Fn(usize) -> bool,
) -> Vec<Vec<(usize, f64)>> {
    let mut assigned: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_classes];
    for (v, class_scores) in scores.iter().enumerate() {
        if is_special(v) {
            continue;
        }
        let mut winner = 0usize;
        for y in 1..num_classes {
            if class_scores[y] > class_scores[winner] {
                winner = y;
            }
        }
        assigned[winner].push((v, class_scores[winner]));
    }
    for tokens in &mut assigned {
        // selection sort keeps this visibly independent of the library path
        for i in 0..tokens.len() {
            let mut best = i;
            for j in i + 1..tokens.len() {
                let better = tokens[j].1 > tokens[best].1
                    || (tokens[j].1 == tokens[best].1 && tokens[j].0 < tokens[best].0);
                if better {
                    best = j;
                }
            }
            tokens.swap(i, best);
        }
        tokens.truncate(k);
    }
    assigned
}

/// AMuLaP or LAAV by brute force, depending on which rows are passed in.
pub fn build_score_based(
    rows: &[Vec<f64>],
    example_class: &[usize],
    vocab_size: usize,
    num_classes: usize,
    k: usize,
) -> Vec<Vec<(usize, f64)>> {
    let scores = score_sums(rows, example_class, vocab_size, num_classes);
    assign_topk(&scores, k, num_classes, |_| false)
}

/// PETAL by brute force: assignment and selection over per-class summed
/// floored log-likelihoods, k = 1.
pub fn build_petal(
    rows: &[Vec<f64>],
    example_class: &[usize],
    vocab_size: usize,
    num_classes: usize,
) -> Vec<Vec<(usize, f64)>> {
    let mut log_likelihood = vec![vec![0.0f64; num_classes]; vocab_size];
    for y in 0..num_classes {
        for (i, &class) in example_class.iter().enumerate() {
            if class != y {
                continue;
            }
            for v in 0..vocab_size {
                log_likelihood[v][y] += rows[i][v].max(FLOOR).ln();
            }
        }
    }
    assign_topk(&log_likelihood, 1, num_classes, |_| false)
}

/// Flatten a crate verbalizer into the oracle's `(token index, score)` form.
pub fn flatten(verbalizer: &Verbalizer) -> Vec<Vec<(usize, f64)>> {
    verbalizer
        .class_tokens
        .iter()
        .map(|tokens| {
            tokens
                .iter()
                .map(|e| (e.token_id.index(), e.score))
                .collect()
        })
        .collect()
}

/// Eq. 2: per-class mean floored log-probability.
pub fn class_scores(row: &[f64], token_sets: &[Vec<TokenId>]) -> Vec<f64> {
    token_sets
        .iter()
        .map(|tokens| {
            let total: f64 = tokens
                .iter()
                .map(|t| row[t.index()].max(FLOOR).ln())
                .sum();
            total / tokens.len() as f64
        })
        .collect()
}

/// Eq. 3 in its literal indicator double-sum form.
pub fn training_loss(rows: &[Vec<f64>], gold: &[usize], token_sets: &[Vec<TokenId>]) -> f64 {
    let mut loss = 0.0;
    for (row, &g) in rows.iter().zip(gold.iter()) {
        let scores = class_scores(row, token_sets);
        for (y, &score) in scores.iter().enumerate() {
            let indicator = if y == g { 1.0 } else { 0.0 };
            loss -= indicator * score;
        }
    }
    loss
}

/// Argmax prediction with ties to the lowest class index.
pub fn predict(row: &[f64], token_sets: &[Vec<TokenId>]) -> usize {
    let scores = class_scores(row, token_sets);
    let mut best = 0;
    for (y, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = y;
        }
    }
    best
}

/// Conjunction aggregation by exhaustive enumeration: mean probability of
/// every vocabulary token over the given probe rows, ranked descending with
/// ties to the lowest token id.
pub fn conjunction_ranking(probe_rows: &[Vec<f64>], vocab_size: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = (0..vocab_size)
        .map(|v| {
            let total: f64 = probe_rows.iter().map(|row| row[v]).sum();
            (v, total / probe_rows.len() as f64)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Relative-error comparison with an absolute fallback near zero.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    if scale < tol {
        (a - b).abs() < tol
    } else {
        (a - b).abs() / scale < tol
    }
}
