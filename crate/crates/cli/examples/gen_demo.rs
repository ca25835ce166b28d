//! Generate a self-contained demo: a synthetic two-class review dataset, a
//! pretraining corpus for the tiny backend, and a ready-to-run config.
//!
//! Usage:
//!   cargo run -p promptcls-cli --example gen_demo -- demo
//!   cargo run -p promptcls-cli -- --config demo/config.toml run-experiment

use std::io::Write;
use std::path::Path;

use promptcls_core::synth;

fn write_jsonl(path: &Path, examples: &[&promptcls_core::Example]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    for ex in examples {
        let line = serde_json::json!({"text": ex.text, "label": ex.label});
        writeln!(file, "{line}")?;
    }
    Ok(())
}

const CONFIG: &str = r#"# Demo run: LAAV on the synthetic sentiment dataset with the tiny backend.
method = "laav"
conj = "and"
shots = [4, 8]
seeds = [13, 21, 42]
output_dir = "runs"

[dataset]
train = "train.jsonl"
test = "test.jsonl"
format = "jsonl"

[[labels]]
class = "pos"
word = "good"

[[labels]]
class = "neg"
word = "bad"

[template]
# lowercase to match the demo corpus vocabulary
base = "{TEXT} it was {MASK}"

[train]
k = 3

[backend]
kind = "tiny"
corpus = "pretrain.txt"
"#;

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "demo".to_string());
    let dir = Path::new(&out);
    std::fs::create_dir_all(dir)?;

    let dataset = synth::sentiment_dataset(64, 100, 33);
    write_jsonl(&dir.join("train.jsonl"), &dataset.partition("train").unwrap())?;
    write_jsonl(&dir.join("test.jsonl"), &dataset.partition("test").unwrap())?;

    let corpus = synth::pretraining_corpus(1200, 7);
    std::fs::write(dir.join("pretrain.txt"), corpus.join("\n") + "\n")?;

    std::fs::write(dir.join("config.toml"), CONFIG)?;

    println!("demo written to {}/", dir.display());
    println!("next: cargo run -p promptcls-cli -- --config {}/config.toml run-experiment", dir.display());
    Ok(())
}
