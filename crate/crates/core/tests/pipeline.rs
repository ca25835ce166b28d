//! Cross-module pipeline tests on both backends.

mod common;

use promptcls_core::analysis::{logits_difference, search_conjunction};
use promptcls_core::backend::{
    cosine, MaskedLmBackend, MockBackend, TinyMlm, TinyMlmConfig, TokenId,
};
use promptcls_core::corpus::{sample_few_shot, Example, FewShotSplit, LabelSet};
use promptcls_core::rng::{seeded_rng, uniform_f64};
use promptcls_core::synth;
use promptcls_core::templating::Template;
use promptcls_core::training::{evaluate, evaluate_cls, fine_tune, traditional_ft, TrainConfig};
use promptcls_core::verbalizers::{build_amulap, build_laav, build_npprompt, build_pet, build_petal};

#[test]
fn full_mock_pipeline_builds_trains_and_evaluates_every_method() {
    // two texts per class; rows chosen so that "ta" marks pos and "tb" neg
    let mut builder = MockBackend::builder(vec!["ta", "tb", "good", "bad"]);
    for (text, row) in [
        ("p1", vec![0.6, 0.1, 0.25, 0.05]),
        ("p2", vec![0.55, 0.15, 0.25, 0.05]),
        ("p3", vec![0.5, 0.2, 0.25, 0.05]),
        ("p4", vec![0.65, 0.05, 0.25, 0.05]),
        ("n1", vec![0.1, 0.6, 0.05, 0.25]),
        ("n2", vec![0.15, 0.55, 0.05, 0.25]),
        ("n3", vec![0.2, 0.5, 0.05, 0.25]),
        ("n4", vec![0.05, 0.65, 0.05, 0.25]),
    ] {
        builder = builder.row(&format!("{text} It was [MASK]"), row.clone());
        let label = if text.starts_with('p') { "good" } else { "bad" };
        builder = builder.row(&format!("{text} It was {label} and [MASK]"), row);
    }
    let mut mock = builder
        .embeddings(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
            vec![0.1, 0.9],
        ])
        .build()
        .unwrap();

    let label_set = LabelSet::new(vec![
        ("pos".to_string(), "good".to_string()),
        ("neg".to_string(), "bad".to_string()),
    ])
    .unwrap();
    let split = FewShotSplit {
        train: vec![
            Example { text: "p1".into(), label: "pos".into() },
            Example { text: "p2".into(), label: "pos".into() },
            Example { text: "n1".into(), label: "neg".into() },
            Example { text: "n2".into(), label: "neg".into() },
        ],
        validation: vec![
            Example { text: "p3".into(), label: "pos".into() },
            Example { text: "n3".into(), label: "neg".into() },
        ],
        shots_per_class: 2,
        seed: 1,
    };
    let test = vec![
        Example { text: "p4".into(), label: "pos".into() },
        Example { text: "n4".into(), label: "neg".into() },
    ];
    let template = Template::parse("{TEXT} It was {MASK}").unwrap();
    let config = TrainConfig {
        max_epochs: 3,
        patience: 1,
        k: 2,
        ..TrainConfig::default()
    };

    let verbalizers = vec![
        build_pet(&label_set, &mock).unwrap(),
        build_amulap(&split, &template, &label_set, &mock, 2, 500, 8).unwrap(),
        build_laav(&split, &template, &label_set, &mock, 2, "and", 500, 8).unwrap(),
        build_petal(&split, &template, &label_set, &mock, 500, 8).unwrap(),
        build_npprompt(&label_set, &mock, 2).unwrap(),
    ];
    for verbalizer in verbalizers {
        verbalizer.validate(mock.vocab()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let result = fine_tune(
            &split,
            &label_set,
            &verbalizer,
            &template,
            &mut mock,
            &config,
            dir.path(),
        )
        .unwrap();
        let report = evaluate(
            &result.checkpoint,
            &test,
            &label_set,
            &verbalizer,
            &template,
            &mut mock,
            &config,
            &verbalizer.method,
        )
        .unwrap();
        assert_eq!(
            report.macro_f1, 1.0,
            "method {} should separate the mock test set",
            verbalizer.method
        );

        let diff = logits_difference(
            &test,
            &label_set,
            &verbalizer,
            &template,
            &result.checkpoint,
            &mut mock,
            500,
            8,
        )
        .unwrap();
        assert!(
            diff.average_difference > 0.0,
            "method {} should have positive discriminative power",
            verbalizer.method
        );
    }

    // conjunction search end-to-end needs the probe prompts in the table;
    // cover it with its own small table instead of extending this one
    let probe = MockBackend::builder(vec!["and", "ta"])
        .row("p It was [MASK]", vec![0.2, 0.8])
        .row("p It was good [MASK] ta", vec![0.9, 0.1])
        .build()
        .unwrap();
    let labels = LabelSet::new(vec![("pos".to_string(), "good".to_string())]).unwrap();
    let single = FewShotSplit {
        train: vec![Example { text: "p".into(), label: "pos".into() }],
        validation: Vec::new(),
        shots_per_class: 1,
        seed: 0,
    };
    let report = search_conjunction(&single, &template, None, &labels, &probe, 1, 500, 8).unwrap();
    assert_eq!(report.ranked[0].token, "and");
}

#[test]
fn fine_tuning_improves_validation_f1_on_a_separable_task() {
    // start from a randomly initialized tiny model (no pretraining): the
    // first-epoch validation F1 sits near chance and training must lift it
    let dataset = synth::sentiment_dataset(40, 10, 91);
    let corpus: Vec<String> = dataset
        .partition("train")
        .unwrap()
        .iter()
        .map(|ex| ex.text.clone())
        .collect();
    let mut model = TinyMlm::from_corpus(&corpus, TinyMlmConfig::default()).unwrap();

    let split = sample_few_shot(&dataset, 8, 17).unwrap();
    let template = Template::parse("{TEXT} it was {MASK}").unwrap();
    let label_set = dataset.label_set().clone();
    let verbalizer =
        build_amulap(&split, &template, &label_set, &model, 2, 500, 8).unwrap();

    let config = TrainConfig {
        learning_rate: 0.02,
        max_epochs: 40,
        patience: 40,
        batch_size: 8,
        seed: 5,
        max_chars: 500,
        k: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    let result = fine_tune(
        &split,
        &label_set,
        &verbalizer,
        &template,
        &mut model,
        &config,
        dir.path(),
    )
    .unwrap();

    let first = result.history.first().unwrap().val_macro_f1;
    assert!(
        result.best_val_f1 > first,
        "validation F1 should improve: first {first}, best {}",
        result.best_val_f1
    );
    assert!(
        result.best_val_f1 >= 0.75,
        "best validation F1 {} too low",
        result.best_val_f1
    );
    // early stopping never returns a checkpoint below the best observed
    let best_in_history = result
        .history
        .iter()
        .map(|r| r.val_macro_f1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(result.best_val_f1, best_in_history);
}

#[test]
fn traditional_ft_improves_and_evaluates_on_the_tiny_backend() {
    let dataset = synth::sentiment_dataset(40, 30, 23);
    let corpus: Vec<String> = dataset
        .partition("train")
        .unwrap()
        .iter()
        .map(|ex| ex.text.clone())
        .collect();
    let mut model = TinyMlm::from_corpus(&corpus, TinyMlmConfig::default()).unwrap();

    let split = sample_few_shot(&dataset, 8, 3).unwrap();
    let label_set = dataset.label_set().clone();
    let config = TrainConfig {
        learning_rate: 0.02,
        max_epochs: 40,
        patience: 40,
        batch_size: 8,
        seed: 9,
        max_chars: 500,
        k: 32,
    };
    let dir = tempfile::tempdir().unwrap();
    let result = traditional_ft(&split, &label_set, &mut model, &config, dir.path()).unwrap();
    let first = result.history.first().unwrap().val_macro_f1;
    assert!(
        result.best_val_f1 > first,
        "validation F1 should improve: first {first}, best {}",
        result.best_val_f1
    );

    let test: Vec<Example> = dataset
        .partition("test")
        .unwrap()
        .into_iter()
        .cloned()
        .collect();
    let report = evaluate_cls(&result.checkpoint, &test, &label_set, &mut model, &config).unwrap();
    assert_eq!(report.method, "traditional_ft");
    assert!(
        report.macro_f1 > 0.6,
        "test macro-F1 {} too low for a separable task",
        report.macro_f1
    );
}

#[test]
fn npprompt_matches_exhaustive_cosine_oracle_on_random_embeddings() {
    // random 6-token x 4-dim table, 2 classes, k = 2 (single-token label
    // words are tokens 0 and 1)
    let mut rng = seeded_rng(4242, "npprompt-oracle");
    let vocab = vec!["w0", "w1", "t2", "t3", "t4", "t5"];
    for case in 0..50 {
        let table: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| uniform_f64(&mut rng) * 2.0 - 1.0).collect())
            .collect();
        let mock = MockBackend::builder(vocab.clone())
            .embeddings(table.clone())
            .build()
            .unwrap();
        let label_set = LabelSet::new(vec![
            ("a".to_string(), "w0".to_string()),
            ("b".to_string(), "w1".to_string()),
        ])
        .unwrap();
        let verbalizer = build_npprompt(&label_set, &mock, 2).unwrap();

        // brute force: cosine of every token against both anchors, argmax
        // assignment, top-2 per class
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let cos = |a: &[f64], b: &[f64]| -> f64 {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot(a, b) / (na * nb)
            }
        };
        let mut assigned: Vec<Vec<(usize, f64)>> = vec![Vec::new(), Vec::new()];
        for v in 0..6 {
            let sims = [cos(&table[v], &table[0]), cos(&table[v], &table[1])];
            let class = if sims[1] > sims[0] { 1 } else { 0 };
            assigned[class].push((v, sims[class]));
        }
        for tokens in &mut assigned {
            tokens.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            tokens.truncate(2);
        }
        for class in 0..2 {
            let ours: Vec<(usize, f64)> = verbalizer.class_tokens[class]
                .iter()
                .map(|e| (e.token_id.index(), e.score))
                .collect();
            assert_eq!(ours, assigned[class], "case {case}, class {class}");
        }
        // self-similarity puts each label word first in its own class
        assert_eq!(verbalizer.class_tokens[0][0].token, "w0");
        assert!((verbalizer.class_tokens[0][0].score - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cosine_top_neighbor_matches_brute_force_on_random_table() {
    let mut rng = seeded_rng(99, "cosine-neighbor");
    let table: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..4).map(|_| uniform_f64(&mut rng) * 2.0 - 1.0).collect())
        .collect();
    let mock = MockBackend::builder(vec!["a", "b", "c", "d", "e"])
        .embeddings(table.clone())
        .build()
        .unwrap();
    let embeddings = mock.embeddings().unwrap();
    for query in 0..5u32 {
        let ours = (0..5u32)
            .filter(|&v| v != query)
            .max_by(|&x, &y| {
                cosine(embeddings.row(TokenId(x)), embeddings.row(TokenId(query)))
                    .total_cmp(&cosine(embeddings.row(TokenId(y)), embeddings.row(TokenId(query))))
            })
            .unwrap();
        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        let brute = (0..5)
            .filter(|&v| v != query as usize)
            .max_by(|&x, &y| {
                let cx = dot(&table[x], &table[query as usize])
                    / (dot(&table[x], &table[x]).sqrt()
                        * dot(&table[query as usize], &table[query as usize]).sqrt());
                let cy = dot(&table[y], &table[query as usize])
                    / (dot(&table[y], &table[y]).sqrt()
                        * dot(&table[query as usize], &table[query as usize]).sqrt());
                cx.total_cmp(&cy)
            })
            .unwrap();
        assert_eq!(ours as usize, brute);
    }
}

#[test]
fn laav_picks_class_coherent_tokens_on_the_tiny_backend() {
    // after pretraining, the label-aware probe "it was good and [MASK]"
    // should surface positive adjectives for the positive class
    let corpus = synth::pretraining_corpus(800, 7);
    let mut model = TinyMlm::from_corpus(&corpus, TinyMlmConfig::default()).unwrap();
    model.pretrain(&corpus, 800, 16, 0.05, 7).unwrap();

    let dataset = synth::sentiment_dataset(32, 10, 51);
    let split = sample_few_shot(&dataset, 4, 19).unwrap();
    let template = Template::parse("{TEXT} it was {MASK}").unwrap();
    let verbalizer = build_laav(
        &split,
        &template,
        dataset.label_set(),
        &model,
        3,
        "and",
        500,
        8,
    )
    .unwrap();

    let pos_tokens: Vec<&str> = verbalizer.class_tokens[0]
        .iter()
        .map(|e| e.token.as_str())
        .collect();
    let pos_hits = pos_tokens
        .iter()
        .filter(|t| synth::POS_ADJECTIVES.contains(&t.as_ref()))
        .count();
    assert!(
        pos_hits >= 2,
        "positive class should collect positive adjectives, got {pos_tokens:?}"
    );
    let neg_tokens: Vec<&str> = verbalizer.class_tokens[1]
        .iter()
        .map(|e| e.token.as_str())
        .collect();
    let neg_hits = neg_tokens
        .iter()
        .filter(|t| synth::NEG_ADJECTIVES.contains(&t.as_ref()))
        .count();
    assert!(
        neg_hits >= 2,
        "negative class should collect negative adjectives, got {neg_tokens:?}"
    );
}
