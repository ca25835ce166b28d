//! Shared fixtures for integration tests: random mock-table cases and the
//! independent brute-force oracle.
//!
//! Each integration-test binary compiles this module and uses a subset.
#![allow(dead_code)]

pub mod oracle;

use promptcls_core::backend::{MockBackend, MockBackendBuilder};
use promptcls_core::corpus::{Example, FewShotSplit, LabelSet};
use promptcls_core::rng::{seeded_rng, uniform_below, uniform_f64};
use rand_chacha::ChaCha8Rng;

/// A randomly generated table-driven scenario: a vocabulary, a label set,
/// training examples, and exact probability rows for the base and
/// label-aware prompt of every example.
pub struct RandomCase {
    pub vocab: Vec<String>,
    pub label_set: LabelSet,
    pub split: FewShotSplit,
    /// Class index of each training example, aligned with `split.train`.
    pub example_class: Vec<usize>,
    /// Base-template row per training example.
    pub base_rows: Vec<Vec<f64>>,
    /// Label-aware row per training example (own label word + "and").
    pub aware_rows: Vec<Vec<f64>>,
    pub k: usize,
}

pub fn random_probability_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| uniform_f64(rng) + 1e-3).collect();
    // sprinkle exact zeros so the floor paths get exercised
    if len > 2 && uniform_below(rng, 3) == 0 {
        let at = uniform_below(rng, len as u64) as usize;
        row[at] = 0.0;
    }
    let sum: f64 = row.iter().sum();
    for x in &mut row {
        *x /= sum;
    }
    row
}

pub fn random_case(case_seed: u64) -> RandomCase {
    let mut rng = seeded_rng(case_seed, "acceptance-random-case");
    let vocab_size = 2 + uniform_below(&mut rng, 19) as usize; // 2..=20
    let num_classes = 2 + uniform_below(&mut rng, 4) as usize; // 2..=5
    let num_examples = 1 + uniform_below(&mut rng, 8) as usize; // 1..=8
    let k = [1usize, 2, 3, 32][uniform_below(&mut rng, 4) as usize];

    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("t{i}")).collect();
    let label_set = LabelSet::new(
        (0..num_classes)
            .map(|c| (format!("c{c}"), format!("w{c}")))
            .collect(),
    )
    .unwrap();

    let mut train = Vec::with_capacity(num_examples);
    let mut example_class = Vec::with_capacity(num_examples);
    let mut base_rows = Vec::with_capacity(num_examples);
    let mut aware_rows = Vec::with_capacity(num_examples);
    for i in 0..num_examples {
        let class = uniform_below(&mut rng, num_classes as u64) as usize;
        train.push(Example {
            text: format!("x{i}"),
            label: format!("c{class}"),
        });
        example_class.push(class);
        base_rows.push(random_probability_row(&mut rng, vocab_size));
        aware_rows.push(random_probability_row(&mut rng, vocab_size));
    }

    RandomCase {
        vocab,
        label_set,
        split: FewShotSplit {
            train,
            validation: Vec::new(),
            shots_per_class: 1,
            seed: case_seed,
        },
        example_class,
        base_rows,
        aware_rows,
        k,
    }
}

impl RandomCase {
    pub fn base_prompt(&self, example: usize) -> String {
        format!("{} It was [MASK]", self.split.train[example].text)
    }

    pub fn aware_prompt(&self, example: usize) -> String {
        let class = self.example_class[example];
        format!(
            "{} It was {} and [MASK]",
            self.split.train[example].text,
            self.label_set.label_word(class)
        )
    }

    pub fn mock(&self) -> MockBackend {
        let mut builder: MockBackendBuilder = MockBackend::builder(self.vocab.clone());
        for i in 0..self.split.train.len() {
            builder = builder
                .row(&self.base_prompt(i), self.base_rows[i].clone())
                .row(&self.aware_prompt(i), self.aware_rows[i].clone());
        }
        builder.build().expect("rows are normalized")
    }
}
