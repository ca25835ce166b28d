//! Confusion matrices and macro-F1.

use serde::{Deserialize, Serialize};

/// Evaluation result of one (method, shots, seed) cell.
///
/// `confusion[gold][predicted]` counts; `per_class_f1` and `confusion` rows
/// are aligned with `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub classes: Vec<String>,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(
        method: &str,
        seed: u64,
        classes: &[String],
        gold: &[usize],
        predicted: &[usize],
    ) -> Self {
        let confusion = confusion_matrix(gold, predicted, classes.len());
        let per_class_f1 = per_class_f1(&confusion);
        let macro_f1 = macro_f1(&per_class_f1);
        Self {
            method: method.to_string(),
            seed,
            classes: classes.to_vec(),
            macro_f1,
            per_class_f1,
            confusion,
        }
    }
}

/// `result[gold][predicted]` over aligned gold/predicted class indices.
pub fn confusion_matrix(gold: &[usize], predicted: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    assert_eq!(gold.len(), predicted.len(), "gold/predicted length mismatch");
    let mut matrix = vec![vec![0usize; num_classes]; num_classes];
    for (&g, &p) in gold.iter().zip(predicted.iter()) {
        matrix[g][p] += 1;
    }
    matrix
}

/// Per-class F1 with the zero-division convention: a class with no true
/// positives and no false positives/negatives scores 0.
pub fn per_class_f1(confusion: &[Vec<usize>]) -> Vec<f64> {
    let n = confusion.len();
    (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let fp: usize = (0..n).filter(|&g| g != c).map(|g| confusion[g][c]).sum();
            let fn_: usize = (0..n).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 scores.
pub fn macro_f1(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        return 0.0;
    }
    per_class.iter().sum::<f64>() / per_class.len() as f64
}
