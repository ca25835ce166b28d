//! Shared fixtures for the pipeline benchmarks.

use promptcls_core::backend::{MockBackend, TinyMlm, TinyMlmConfig};
use promptcls_core::corpus::{Example, FewShotSplit, LabelSet};
use promptcls_core::rng::{seeded_rng, uniform_f64};
use promptcls_core::synth;

/// A mock backend over `vocab_size` tokens with base rows for
/// `examples_per_class` examples in each of `num_classes` classes.
pub fn mock_fixture(
    vocab_size: usize,
    num_classes: usize,
    examples_per_class: usize,
) -> (MockBackend, LabelSet, FewShotSplit) {
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("t{i}")).collect();
    let label_set = LabelSet::new(
        (0..num_classes)
            .map(|c| (format!("c{c}"), format!("w{c}")))
            .collect(),
    )
    .unwrap();

    let mut rng = seeded_rng(7, "bench-mock");
    let mut builder = MockBackend::builder(vocab);
    let mut train = Vec::new();
    for class in 0..num_classes {
        for i in 0..examples_per_class {
            let text = format!("c{class}x{i}");
            let mut row: Vec<f64> = (0..vocab_size).map(|_| uniform_f64(&mut rng) + 1e-3).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
            builder = builder.row(&format!("{text} It was [MASK]"), row);
            train.push(Example {
                text,
                label: format!("c{class}"),
            });
        }
    }
    let split = FewShotSplit {
        train,
        validation: Vec::new(),
        shots_per_class: examples_per_class,
        seed: 7,
    };
    (builder.build().unwrap(), label_set, split)
}

/// A pretrained tiny model over the synthetic corpus.
pub fn tiny_fixture() -> TinyMlm {
    let corpus = synth::pretraining_corpus(300, 7);
    let mut model = TinyMlm::from_corpus(&corpus, TinyMlmConfig::default()).unwrap();
    model.pretrain(&corpus, 50, 8, 0.05, 7).unwrap();
    model
}
