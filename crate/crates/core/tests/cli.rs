use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vistopic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vistopic")).args(args).output().unwrap()
}

fn out_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(vistopic(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(vistopic(&["train", "--lr", "fast"]).status.code(), Some(2));
    assert_eq!(vistopic(&["--help"]).status.code(), Some(0));
}

#[test]
fn help_states_precedence() {
    let o = vistopic(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("flag > config file"), "{text}");
}

#[test]
fn missing_input_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = vistopic(&["topics", "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:") && err.contains("corpus.json"), "{err}");
}

#[test]
fn malformed_dataset_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("edges.tsv"), "a\tb\n").unwrap();
    fs::write(dir.path().join("items.jsonl"), "{\"item\": \"x\", \"text\": \"hi\"}\nnot json\n").unwrap();
    fs::write(dir.path().join("adoptions.jsonl"), "").unwrap();
    let o = vistopic(&["ingest", "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("items.jsonl:2"), "{err}");
}

#[test]
fn config_file_is_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert!(vistopic(&["simulate", "--preset", "tiny", "--seed", "2", "--out", out]).status.success());
    assert!(vistopic(&["ingest", "--out", out]).status.success());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"topics.k": 3, "topics.iters": 20, "topics.top_words": 4}"#).unwrap();
    let o = vistopic(&["topics", "--config", cfg.to_str().unwrap(), "--iters", "10", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("topics.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["topics.k"], 3);
    assert_eq!(manifest["config"]["topics.iters"], 10);
    assert_eq!(manifest["config"]["topics.beta"], 0.01);
    let inputs = manifest["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 1);
    assert!(inputs.values().all(|d| d.as_str().unwrap().len() == 64));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"topics.kk": 3}"#).unwrap();
    let o = vistopic(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("topics.kk"));
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let steps: [&[&str]; 6] = [
        &["simulate", "--preset", "tiny", "--seed", "4"],
        &["ingest"],
        &["topics", "--k", "4", "--iters", "50"],
        &["visibility"],
        &["train", "--k", "4", "--epochs", "5", "--json"],
        &["evaluate", "--folds", "3", "--models", "random,full", "--epochs", "5"],
    ];
    for step in steps {
        let mut args = step.to_vec();
        args.extend(["--out", out]);
        let o = vistopic(&args);
        assert!(o.status.success(), "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = vistopic(&["analyze", "--model-file", &format!("{out}/model.bin"), "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "corpus.json",
        "topics.bin",
        "topics.txt",
        "visibility.csv",
        "model.bin",
        "model.json",
        "eval_report.json",
        "eval_report.csv",
        "netstats.csv",
        "curves_ftd_vs_nd.csv",
        "nd_histogram.csv",
        "analysis.json",
        "analyze.manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["models"].as_array().unwrap().len(), 2);
    assert_eq!(report["num_folds"], 3);

    // a K mismatch between flags and the topics file is a data error
    let o = vistopic(&["train", "--k", "7", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
}
