//! Deterministic synthetic sentiment data for demos and end-to-end tests.
//!
//! The generated reviews are lexically separable: every positive review
//! contains words only from the positive adjective pool, and likewise for
//! negative. The pretraining corpus couples each label word ("good"/"bad")
//! with its class's adjectives through "it was <label> and <adj>" patterns,
//! which is exactly the association the label-aware scoring template probes.

use crate::corpus::{Dataset, Example, LabelSet};
use crate::rng::{seeded_rng, uniform_below};
use rand_chacha::ChaCha8Rng;

pub const POS_ADJECTIVES: [&str; 8] = [
    "wonderful",
    "amazing",
    "delightful",
    "superb",
    "excellent",
    "charming",
    "brilliant",
    "lovely",
];

pub const NEG_ADJECTIVES: [&str; 8] = [
    "terrible",
    "awful",
    "dreadful",
    "horrible",
    "boring",
    "miserable",
    "clumsy",
    "shallow",
];

const NOUNS: [&str; 8] = [
    "film", "movie", "plot", "acting", "story", "cast", "script", "ending",
];

const INTENSIFIERS: [&str; 4] = ["really", "quite", "truly", "simply"];

/// The class -> label-word pairs the synthetic data is built around.
pub fn sentiment_label_words() -> Vec<(String, String)> {
    vec![
        ("pos".to_string(), "good".to_string()),
        ("neg".to_string(), "bad".to_string()),
    ]
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[uniform_below(rng, pool.len() as u64) as usize]
}

fn review(rng: &mut ChaCha8Rng, positive: bool) -> String {
    let adjectives: &[&str] = if positive {
        &POS_ADJECTIVES
    } else {
        &NEG_ADJECTIVES
    };
    let noun = pick(rng, &NOUNS);
    let noun2 = pick(rng, &NOUNS);
    let adj1 = pick(rng, adjectives);
    let adj2 = pick(rng, adjectives);
    let intensifier = pick(rng, &INTENSIFIERS);
    match uniform_below(rng, 3) {
        0 => format!("the {noun} was {intensifier} {adj1} and {adj2}"),
        1 => format!("the {noun} felt {adj1} and the {noun2} was {adj2}"),
        _ => format!("{intensifier} {adj1} {noun} with a {adj2} {noun2}"),
    }
}

/// A balanced two-class review dataset with disjoint `train` and `test`
/// partitions, fully determined by `seed`.
pub fn sentiment_dataset(train_per_class: usize, test_per_class: usize, seed: u64) -> Dataset {
    let label_set = LabelSet::new(sentiment_label_words()).expect("static label set");
    let mut rng = seeded_rng(seed, "synth-sentiment-train");
    let mut train = Vec::with_capacity(2 * train_per_class);
    for _ in 0..train_per_class {
        train.push(Example {
            text: review(&mut rng, true),
            label: "pos".into(),
        });
        train.push(Example {
            text: review(&mut rng, false),
            label: "neg".into(),
        });
    }
    let mut dataset =
        Dataset::from_examples(train, label_set, "train").expect("labels are registered");

    let mut rng = seeded_rng(seed, "synth-sentiment-test");
    let mut test = Vec::with_capacity(2 * test_per_class);
    for _ in 0..test_per_class {
        test.push(Example {
            text: review(&mut rng, true),
            label: "pos".into(),
        });
        test.push(Example {
            text: review(&mut rng, false),
            label: "neg".into(),
        });
    }
    dataset
        .add_partition("test", test)
        .expect("labels are registered");
    dataset
}

/// Plain sentences for masked-token pretraining. Roughly half couple a label
/// word with same-class adjectives ("it was good and wonderful"); the rest
/// are plain reviews, so the base template sees class words in context too.
pub fn pretraining_corpus(sentences: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded_rng(seed, "synth-pretrain");
    let mut corpus = Vec::with_capacity(sentences);
    for i in 0..sentences {
        let positive = i % 2 == 0;
        let adjectives: &[&str] = if positive {
            &POS_ADJECTIVES
        } else {
            &NEG_ADJECTIVES
        };
        let label_word = if positive { "good" } else { "bad" };
        let line = match uniform_below(&mut rng, 4) {
            0 => {
                let body = review(&mut rng, positive);
                let adj = pick(&mut rng, adjectives);
                format!("{body} . it was {label_word} and {adj}")
            }
            1 => {
                let adj1 = pick(&mut rng, adjectives);
                let adj2 = pick(&mut rng, adjectives);
                format!("it was {label_word} and {adj1} and {adj2}")
            }
            2 => {
                let body = review(&mut rng, positive);
                let adj = pick(&mut rng, adjectives);
                format!("{body} . it was {adj}")
            }
            _ => review(&mut rng, positive),
        };
        corpus.push(line);
    }
    corpus
}
