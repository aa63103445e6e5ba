use std::path::Path;
use std::process::{Command, Output};

fn plad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.trim().lines().count(), 1, "one JSON document: {text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("data");
    let out = plad(&["synth", "--out", s(&out_dir), "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert!(!out_dir.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn invalid_values_fail_before_touching_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("m.plad");
    let cases: Vec<Vec<&str>> = vec![
        vec!["synth", "--out", s(&data), "--per-defect", "0"],
        vec!["train", "--data", s(&data), "--out", s(&model), "--algo", "nope"],
        vec!["train", "--data", s(&data), "--out", s(&model), "--algo", "patchcore", "--epsilon", "0.1"],
        vec!["train", "--data", s(&data), "--out", s(&model), "--algo", "padim", "--coreset-ratio", "0.5"],
        vec!["train", "--data", s(&data), "--out", s(&model), "--coreset-ratio", "1.5"],
        vec!["bench", "--sizes", "3", "--out", s(&model)],
    ];
    for args in cases {
        let out = plad(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0, "{args:?}");
    }
}

#[test]
fn missing_inputs_are_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = plad(&[
        "score",
        "--model",
        s(&tmp.path().join("absent.plad")),
        "--image",
        s(&tmp.path().join("absent.png")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(plad(&["--help"]).status.code(), Some(0));
    assert_eq!(plad(&["--version"]).status.code(), Some(0));
    assert_eq!(plad(&[]).status.code(), Some(1));
}

#[test]
fn synth_train_eval_score_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model = tmp.path().join("model.plad");
    let report = tmp.path().join("report.json");
    let heat = tmp.path().join("heat");

    let out = plad(&["--json", "synth", "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["images"], 40);

    let out = plad(&["--json", "train", "--data", s(&data), "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["algorithm"], "patchcore");

    let out = plad(&[
        "--json",
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--report",
        s(&report),
        "--heatmap-dir",
        s(&heat),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = json(&out);
    let saved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(printed, saved);
    for field in ["confusion", "auroc", "per_class", "f1_macro", "timings", "peak_model_bytes"] {
        assert!(saved.get(field).is_some(), "{field}");
    }
    for field in ["tp", "fp", "fn", "tn"] {
        assert!(saved["confusion"].get(field).is_some(), "{field}");
    }
    assert!(saved["f1_macro"].as_f64().unwrap() >= 0.9, "{saved}");
    assert!(saved["timings"]["train_seconds"].is_null());
    assert!(heat.join("test/missing_gear/000.png").is_file());

    let train_image = data.join("train/good/000.png");
    let heatmap = tmp.path().join("one.png");
    let out = plad(&[
        "score",
        "--model",
        s(&model),
        "--image",
        s(&train_image),
        "--heatmap-out",
        s(&heatmap),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["label"], "Normal");
    assert!(v["confidence_pct"].as_f64().unwrap() > 50.0);
    assert!(heatmap.is_file());

    let out = plad(&["score", "--model", s(&model), "--image", s(&data.join("test/missing_gear/000.png"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["label"], "Anomalous");
}

#[test]
fn quiet_prints_nothing_for_synth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let out = plad(&[
        "--quiet", "--seed", "7", "synth", "--out", s(&data), "--train-normal", "2",
        "--test-normal", "1", "--per-defect", "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(data.join("manifest.json").is_file());
}
