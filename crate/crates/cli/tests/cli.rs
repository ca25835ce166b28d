//! End-to-end tests against the compiled binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_promptcls"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let output = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        output.status.success(),
        "command {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Vocabulary shared by every fixture table.
const VOCAB: [&str; 8] = ["ta", "tb", "and", "good", "bad", "na", "pa", "kasama"];

fn row(ta: f64, tb: f64, and: f64, good: f64, bad: f64) -> Vec<f64> {
    vec![ta, tb, and, good, bad, 0.0, 0.0, 0.0]
}

/// Build a mock table covering base, label-aware, and connective-probe
/// prompts for a small two-class dataset, plus the dataset files and a run
/// config. Returns the config path.
fn write_fixture(dir: &Path) -> PathBuf {
    let pos_texts = ["p0", "p1", "p2", "p3"];
    let neg_texts = ["n0", "n1", "n2", "n3"];
    let test_pos = ["tp0", "tp1"];
    let test_neg = ["tn0", "tn1"];

    let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for text in pos_texts.iter().chain(test_pos.iter()) {
        rows.insert(
            format!("{text} It was [MASK]"),
            row(0.6, 0.1, 0.05, 0.2, 0.05),
        );
        rows.insert(
            format!("{text} It was good and [MASK]"),
            row(0.7, 0.05, 0.05, 0.15, 0.05),
        );
    }
    for text in neg_texts.iter().chain(test_neg.iter()) {
        rows.insert(
            format!("{text} It was [MASK]"),
            row(0.1, 0.6, 0.05, 0.05, 0.2),
        );
        rows.insert(
            format!("{text} It was bad and [MASK]"),
            row(0.05, 0.7, 0.05, 0.05, 0.15),
        );
    }
    // connective probes: mask between the label word and any vocab token
    for (texts, word) in [(pos_texts, "good"), (neg_texts, "bad")] {
        for text in texts {
            for token in VOCAB {
                rows.insert(
                    format!("{text} It was {word} [MASK] {token}"),
                    row(0.05, 0.05, 0.8, 0.05, 0.05),
                );
            }
        }
    }

    let table = json!({
        "vocabulary": VOCAB,
        "rows": rows,
    });
    std::fs::write(dir.join("table.json"), serde_json::to_string_pretty(&table).unwrap()).unwrap();

    let mut train = String::new();
    for text in pos_texts {
        train.push_str(&serde_json::to_string(&json!({"text": text, "label": "pos"})).unwrap());
        train.push('\n');
    }
    for text in neg_texts {
        train.push_str(&serde_json::to_string(&json!({"text": text, "label": "neg"})).unwrap());
        train.push('\n');
    }
    std::fs::write(dir.join("train.jsonl"), train).unwrap();

    let mut test = String::new();
    for text in test_pos {
        test.push_str(&serde_json::to_string(&json!({"text": text, "label": "pos"})).unwrap());
        test.push('\n');
    }
    for text in test_neg {
        test.push_str(&serde_json::to_string(&json!({"text": text, "label": "neg"})).unwrap());
        test.push('\n');
    }
    std::fs::write(dir.join("test.jsonl"), test).unwrap();

    let config = r#"
method = "laav"
conj = "and"
shots = [2]
seeds = [1, 2]
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
base = "{TEXT} It was {MASK}"

[train]
k = 2
max_epochs = 3
patience = 1

[backend]
kind = "mock"
table = "table.json"
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn build_verbalizer_is_deterministic_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());

    run_ok(
        &["--config", "run.toml", "build-verbalizer", "--out", "v1.json"],
        dir.path(),
    );
    run_ok(
        &["--config", "run.toml", "build-verbalizer", "--out", "v2.json"],
        dir.path(),
    );
    let a = std::fs::read(dir.path().join("v1.json")).unwrap();
    let b = std::fs::read(dir.path().join("v2.json")).unwrap();
    assert_eq!(a, b, "verbalizer output must be byte-identical across runs");

    let value: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(value["method"], "laav");
    assert_eq!(value["conj"], "and");
    assert_eq!(value["provenance"]["k"], 2);
    let classes = value["classes"].as_object().unwrap();
    let mut seen = std::collections::HashSet::new();
    for (_, entries) in classes {
        let entries = entries.as_array().unwrap();
        assert!(entries.len() <= 2, "at most k tokens per class");
        for entry in entries {
            assert!(
                seen.insert(entry["token_id"].as_u64().unwrap()),
                "classes must be disjoint"
            );
        }
    }
}

#[test]
fn pet_multi_token_label_exits_2_naming_the_word() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_fixture(dir.path());
    let config = std::fs::read_to_string(&config_path)
        .unwrap()
        .replace("word = \"bad\"", "word = \"napakasama\"");
    std::fs::write(dir.path().join("pet.toml"), config).unwrap();

    let output = bin()
        .args(["--config", "pet.toml", "--method", "pet", "build-verbalizer"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("napakasama"),
        "error must name the offending word, got: {stderr}"
    );
}

#[test]
fn run_experiment_aggregates_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());

    let output = run_ok(&["--config", "run.toml", "run-experiment"], dir.path());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("macro-F1"), "stdout: {stdout}");

    // artifacts exist under runs/<run_id>/
    let runs = dir.path().join("runs");
    let run_dir = std::fs::read_dir(&runs)
        .unwrap()
        .filter_map(Result::ok)
        .map(|e| e.path())
        .find(|p| p.is_dir() && p.file_name().unwrap() != "cache")
        .expect("run directory exists");
    for artifact in ["config.json", "aggregate.json", "aggregate.csv", "table.txt", "run_record.json"] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("run_record.json")).unwrap())
            .unwrap();
    let cells = record["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2, "shots=[2] x seeds=[1,2]");
    assert!(cells.iter().all(|c| c["status"] == "ok"));

    // the mock separates the test set perfectly
    let aggregate: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("aggregate.json")).unwrap())
            .unwrap();
    let mean = aggregate["cells"][0]["mean_macro_f1"].as_f64().unwrap();
    assert_eq!(mean, 1.0);
    assert_eq!(aggregate["cells"][0]["seeds"], 2);

    // delete one cell's eval and rerun: that cell recomputes, the other resumes
    let victim = run_dir.join("cells").join("shots2_seed1").join("eval.json");
    std::fs::remove_file(&victim).unwrap();
    let output = run_ok(&["--config", "run.toml", "run-experiment"], dir.path());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("seed=2: resumed"), "stdout: {stdout}");
    assert!(victim.exists(), "failed cell was recomputed");
}

#[test]
fn search_conjunction_ranks_and_first() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let output = run_ok(&["--config", "run.toml", "search-conjunction"], dir.path());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let first_candidate = stdout
        .lines()
        .find(|l| l.trim_start().starts_with("1."))
        .expect("ranked list printed");
    assert!(first_candidate.contains("and"), "got: {first_candidate}");

    let runs = dir.path().join("runs");
    let run_dir = std::fs::read_dir(&runs)
        .unwrap()
        .filter_map(Result::ok)
        .map(|e| e.path())
        .find(|p| p.is_dir())
        .unwrap();
    assert!(run_dir.join("conjunction_search.json").exists());
    assert!(run_dir.join("conjunction_search.csv").exists());
}

#[test]
fn train_evaluate_and_interpret_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());

    let output = run_ok(&["--config", "run.toml", "train"], dir.path());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("test macro-F1 1.0000"), "stdout: {stdout}");

    let runs = dir.path().join("runs");
    let run_dir = std::fs::read_dir(&runs)
        .unwrap()
        .filter_map(Result::ok)
        .map(|e| e.path())
        .find(|p| p.is_dir())
        .unwrap();
    let cell = run_dir.join("cells").join("shots2_seed1");
    let checkpoint = cell.join("best.ckpt");
    let verbalizer = cell.join("verbalizer.json");
    assert!(checkpoint.exists() && verbalizer.exists());
    assert!(cell.join("history.jsonl").exists());

    let output = run_ok(
        &[
            "--config",
            "run.toml",
            "evaluate",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--verbalizer",
            verbalizer.to_str().unwrap(),
        ],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("macro-F1: 1.0000"), "stdout: {stdout}");

    let output = run_ok(
        &[
            "--config",
            "run.toml",
            "interpret",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--verbalizer",
            verbalizer.to_str().unwrap(),
        ],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("average logits difference"), "stdout: {stdout}");
    let diff_files: Vec<_> = std::fs::read_dir(&run_dir)
        .unwrap()
        .filter_map(Result::ok)
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|name| name.contains("logits_diff"))
        .collect();
    assert!(
        diff_files.iter().any(|f| f.ends_with(".json"))
            && diff_files.iter().any(|f| f.ends_with(".csv"))
            && diff_files.iter().any(|f| f.ends_with(".svg")),
        "expected json+csv+svg, got {diff_files:?}"
    );

    // the report subcommand reads the run record back
    let output = run_ok(
        &["report", "--run-dir", run_dir.to_str().unwrap()],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("laav"), "stdout: {stdout}");
    assert!(stdout.contains("100.0"), "stdout: {stdout}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let output = bin().args(["run-experiment"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--config"), "stderr: {stderr}");
}
