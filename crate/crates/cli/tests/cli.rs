use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ettag(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ettag"));
    c.args(args).env_remove("ETTAG_THREADS");
    if let Some(t) = threads {
        c.env("ETTAG_THREADS", t);
    }
    c.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ettag(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn input_errors_exit_one_with_structured_stderr() {
    let out = ettag(&["eval", "--pred", "/nonexistent/p.jsonl", "--gold", "/nonexistent/g.jsonl"], None);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");

    let out = ettag(&["tag", "--bogus"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(ettag(&["--help"], None).status.success());
}

#[test]
fn tag_output_is_deterministic_and_evaluable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out-dir", p(d), "--seed", "5"]);
    let (cat, kb, model) = (d.join("catalog.txt"), d.join("kb"), d.join("model"));
    let stats: serde_json::Value = serde_json::from_str(&ok(&["build-kb", "--kb", p(&cat), "--cache-out", p(&kb)])).unwrap();
    assert_eq!(stats["entity_count"], 50);
    ok(&["train", "--train", p(&d.join("train.jsonl")), "--kb", p(&kb), "--model-out", p(&model), "--epochs", "3"]);
    for f in ["model.bin", "input_vocab.tsv", "output_vocab.tsv", "run_config.json", "loss_curve.csv"] {
        assert!(model.join(f).exists(), "missing {f}");
    }
    let eval = d.join("eval.jsonl");
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = d.join(format!("pred{threads}.jsonl"));
        let o = ettag(
            &["tag", "--model", p(&model), "--kb-cache", p(&kb), "--in", p(&eval), "--out", p(&out), "--beam", "5"],
            Some(threads),
        );
        assert!(o.status.success());
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    let ids: Vec<String> =
        text.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["doc_id"].as_str().unwrap().to_owned()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(d.join("pred1.jsonl.run_config.json").exists());

    let table = ok(&["eval", "--pred", p(&d.join("pred1.jsonl")), "--gold", p(&eval), "--style", "pr"]);
    assert!(table.contains("eval P") && table.contains("Avg. R"));
}

#[test]
fn config_file_is_merged_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out-dir", p(d)]);
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{"train": {"epochs": 2, "lr": 0.05}, "seed": 9}"#).unwrap();
    let model = d.join("m");
    ok(&["--config", p(&cfg), "train", "--train", p(&d.join("train.jsonl")), "--kb", p(&d.join("catalog.txt")),
        "--model-out", p(&model)]);
    let rc: serde_json::Value = serde_json::from_str(&fs::read_to_string(model.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(rc["train"]["epochs"], 2);
    assert_eq!(rc["train"]["seed"], 9);
    assert_eq!(rc["reference"]["backbone"], "t5-base");
    assert_eq!(fs::read_to_string(model.join("loss_curve.csv")).unwrap().lines().count(), 3);

    fs::write(&cfg, r#"{"unknown": true}"#).unwrap();
    let out = ettag(&["--config", p(&cfg), "synth", "--out-dir", p(d)], None);
    assert_eq!(out.status.code(), Some(1));
}
