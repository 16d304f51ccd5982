use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dmgcrn");

const SUBCOMMANDS: [(&str, &[&str]); 7] = [
    ("build-graphs", &["--edges", "--sensors", "--out", "--epsilon-d", "--epsilon-l", "--seed"]),
    ("train", &["--config", "--data", "--graphs", "--out"]),
    ("evaluate", &["--ckpt", "--data", "--graphs", "--out"]),
    ("predict", &["--ckpt", "--window", "--out"]),
    ("export-attention", &["--ckpt", "--window", "--out"]),
    ("synth", &["--spec", "--out"]),
    ("baseline-ha", &["--data", "--out"]),
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_on_every_subcommand() {
    let top = ok(&["--help"]);
    for (cmd, flags) in SUBCOMMANDS {
        assert!(top.contains(cmd), "{cmd} missing from top-level help");
        let help = ok(&[cmd, "--help"]);
        for flag in flags {
            assert!(help.contains(flag), "{cmd} help lacks {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["baseline-ha", "--data", p(&dir.path().join("none")), "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none"));
}

#[test]
fn end_to_end_pipeline_and_hash_guard() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.json"), r#"{"nodes": 10, "steps": 700, "seed": 3}"#).unwrap();
    std::fs::write(
        d.join("run.json"),
        r#"{"model": {"hidden": 4, "batch_size": 8},
            "train": {"epochs": 2, "lr_milestones": [1], "max_train_windows": 16, "max_eval_windows": 8}}"#,
    )
    .unwrap();
    let data = d.join("data");
    ok(&["synth", "--spec", p(&d.join("spec.json")), "--out", p(&data)]);
    for f in ["series.csv", "sensors.csv", "edges.csv"] {
        assert!(data.join(f).exists());
    }
    let graphs = d.join("graphs");
    let edges = data.join("edges.csv");
    let sensors = data.join("sensors.csv");
    ok(&["build-graphs", "--edges", p(&edges), "--sensors", p(&sensors), "--out", p(&graphs)]);
    let ckpt = d.join("model.json");
    ok(&["train", "--config", p(&d.join("run.json")), "--data", p(&data), "--graphs", p(&graphs), "--out", p(&ckpt)]);
    let log = std::fs::read_to_string(d.join("model.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let report = d.join("report.json");
    ok(&["evaluate", "--ckpt", p(&ckpt), "--data", p(&data), "--graphs", p(&graphs), "--out", p(&report)]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["horizon"], 12);
    assert_eq!(json["buckets"].as_array().unwrap().len(), 3);
    let (mae, rmse) = (json["overall"]["mae"].as_f64().unwrap(), json["overall"]["rmse"].as_f64().unwrap());
    assert!(mae > 0.0 && mae <= rmse);

    let series = std::fs::read_to_string(data.join("series.csv")).unwrap();
    let window: Vec<&str> = series.lines().take(13).collect();
    std::fs::write(d.join("window.csv"), window.join("\n")).unwrap();
    let pred = d.join("pred.csv");
    ok(&["predict", "--ckpt", p(&ckpt), "--window", p(&d.join("window.csv")), "--out", p(&pred)]);
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 13);
    let att = d.join("att.csv");
    ok(&["export-attention", "--ckpt", p(&ckpt), "--window", p(&d.join("window.csv")), "--out", p(&att)]);
    let att = std::fs::read_to_string(&att).unwrap();
    assert!(att.starts_with("timestep,sensor_id,channel,region,alpha"));
    assert_eq!(att.lines().count(), 1 + 24 * 10 * 2 * 4);

    ok(&["baseline-ha", "--data", p(&data), "--out", p(&d.join("ha.json"))]);

    let other = d.join("graphs-other");
    ok(&["build-graphs", "--edges", p(&edges), "--sensors", p(&sensors), "--out", p(&other), "--epsilon-l", "0.3"]);
    let refused = run(&["evaluate", "--ckpt", p(&ckpt), "--data", p(&data), "--graphs", p(&other), "--out", p(&report)]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("hash mismatch"));
}
