use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array2;

use promptcls_bench::{mock_fixture, tiny_fixture};
use promptcls_core::backend::{MaskedLmBackend, TrainBatch};
use promptcls_core::rng::{seeded_rng, uniform_f64};
use promptcls_core::templating::{render, PromptText, Template};
use promptcls_core::training::{predict, TrainConfig};
use promptcls_core::verbalizers::{
    assign_and_topk, build_amulap, score_matrix, ScoreMatrix, ScoreMode, TemplateFamily,
};
use promptcls_core::{LabelSet, Vocabulary};

fn bench_score_matrix(c: &mut Criterion) {
    let (mock, label_set, split) = mock_fixture(2000, 4, 32);
    let template = Template::parse("{TEXT} It was {MASK}").unwrap();
    c.bench_function("score_matrix 2000 tokens x 4 classes x 128 examples", |b| {
        b.iter(|| {
            score_matrix(
                black_box(&split),
                &template,
                &label_set,
                &mock,
                ScoreMode::Base,
                500,
                8,
            )
            .unwrap()
        })
    });
}

fn bench_assign_and_topk(c: &mut Criterion) {
    let vocab_size = 50_000;
    let num_classes = 4;
    let vocab = Vocabulary::new((0..vocab_size).map(|i| format!("t{i}")).collect(), &[]).unwrap();
    let label_set = LabelSet::new(
        (0..num_classes)
            .map(|c| (format!("c{c}"), format!("w{c}")))
            .collect(),
    )
    .unwrap();
    let mut rng = seeded_rng(3, "bench-assign");
    let scores = Array2::from_shape_fn((vocab_size, num_classes), |_| uniform_f64(&mut rng));
    let matrix = ScoreMatrix::new(scores, TemplateFamily::Base).unwrap();
    c.bench_function("assign_and_topk 50k tokens, k=32", |b| {
        b.iter(|| assign_and_topk(black_box(&matrix), 32, &label_set, &vocab).unwrap())
    });
}

fn bench_predict(c: &mut Criterion) {
    let (mock, label_set, split) = mock_fixture(2000, 4, 8);
    let template = Template::parse("{TEXT} It was {MASK}").unwrap();
    let verbalizer = build_amulap(
        &split,
        &template,
        &label_set,
        &mock,
        TrainConfig::default().k,
        500,
        8,
    )
    .unwrap();
    let prompt = render(&template, &split.train[0].text, None, None, 500).unwrap();
    let dist = mock.mask_distribution(&[prompt]).unwrap();
    c.bench_function("predict over 2000-token row, k=32 x 4 classes", |b| {
        b.iter(|| predict(black_box(dist.row(0)), &verbalizer).unwrap())
    });
}

fn bench_tiny_model(c: &mut Criterion) {
    let model = tiny_fixture();
    let prompt = PromptText::new("the film was really wonderful and [MASK]").unwrap();
    let prompts = vec![prompt; 8];
    c.bench_function("tiny-mlm mask_distribution, batch of 8", |b| {
        b.iter(|| model.mask_distribution(black_box(&prompts)).unwrap())
    });

    let targets: Vec<Vec<promptcls_core::TokenId>> = (0..8)
        .map(|_| vec![model.vocab().id("amazing").unwrap()])
        .collect();
    c.bench_function("tiny-mlm train_step, batch of 8", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| {
                m.train_step(&TrainBatch::MaskTargets {
                    prompts: &prompts,
                    target_sets: &targets,
                })
                .unwrap()
            },
            criterion::BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_score_matrix,
    bench_assign_and_topk,
    bench_predict,
    bench_tiny_model
);
criterion_main!(benches);
