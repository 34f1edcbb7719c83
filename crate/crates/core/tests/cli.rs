use std::path::Path;
use std::process::{Command, Output};

use cmdn::mixture::Gmm2D;

const SMALL: &str = "train_size = 400\ndev_size = 100\ntest_size = 100\nepochs = 2\nseed = 3\n";

fn cmdn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdn"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cmdn(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Temp dir holding `data/` generated from `SMALL` plus `extra` settings.
fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), format!("{SMALL}{extra}")).unwrap();
    ok(
        dir.path(),
        &["gen-data", "--config", "run.cfg", "--out", "data"],
    );
    dir
}

#[test]
fn gen_data_is_seeded_and_sized() {
    let dir = setup("");
    let p = dir.path();
    ok(p, &["gen-data", "--config", "run.cfg", "--out", "again"]);
    for f in [
        "train.jsonl",
        "dev.jsonl",
        "test.jsonl",
        "config.txt",
        "generator.toml",
    ] {
        assert_eq!(
            std::fs::read(p.join("data").join(f)).unwrap(),
            std::fs::read(p.join("again").join(f)).unwrap(),
            "{f}"
        );
    }
    let lines = |f: &str| {
        std::fs::read_to_string(p.join("data").join(f))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(
        (
            lines("train.jsonl"),
            lines("dev.jsonl"),
            lines("test.jsonl")
        ),
        (400, 100, 100)
    );
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = cmdn(p, &["gen-data", "--spec", "missing.toml", "--out", "d"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    std::fs::write(p.join("bad.cfg"), "model = cnn\n").unwrap();
    assert_eq!(
        code(&cmdn(
            p,
            &["train", "--config", "bad.cfg", "--data", "d", "--out", "r"]
        )),
        1
    );
    std::fs::write(p.join("bad.cfg"), "filters = 0\n").unwrap();
    assert_eq!(code(&cmdn(p, &["grad-check", "--config", "bad.cfg"])), 1);
    assert_eq!(code(&cmdn(p, &["predict"])), 1);
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = setup("");
    let p = dir.path();
    std::fs::write(p.join("data/train.jsonl"), "{\"text\":\"a\",\"lat\":1.0}\n").unwrap();
    let out = cmdn(
        p,
        &[
            "train", "--config", "run.cfg", "--data", "data", "--out", "run",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn density_run_evaluates_and_predicts() {
    let dir = setup("model = cmdn\nsweep_points = 7\n");
    let p = dir.path();
    let train_before = std::fs::read(p.join("data/train.jsonl")).unwrap();
    ok(
        p,
        &[
            "train", "--config", "run.cfg", "--data", "data", "--out", "run",
        ],
    );
    for f in [
        "checkpoint.json",
        "vocab.txt",
        "history.csv",
        "config.txt",
        "generator.toml",
    ] {
        assert!(p.join("run").join(f).is_file(), "{f}");
    }
    assert_eq!(
        std::fs::read(p.join("data/train.jsonl")).unwrap(),
        train_before
    );

    let eval = |out: &str| {
        ok(
            p,
            &[
                "eval",
                "--run",
                "run",
                "--corpus",
                "data/test.jsonl",
                "--out",
                out,
                "--sweep",
                "--hist",
            ],
        );
    };
    eval("e1");
    eval("e2");
    for f in ["records.csv", "summary.json", "sweep.csv", "histogram.csv"] {
        assert_eq!(
            std::fs::read(p.join("e1").join(f)).unwrap(),
            std::fs::read(p.join("e2").join(f)).unwrap(),
            "{f}"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("e1/summary.json")).unwrap()).unwrap();
    assert!(summary["mean_km"].is_f64() && summary["median_km"].is_f64());
    let sweep = std::fs::read_to_string(p.join("e1/sweep.csv")).unwrap();
    let rows = sweep.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 7);
    let records = std::fs::read_to_string(p.join("e1/records.csv")).unwrap();
    assert!(records.starts_with("# config_hash="));
    assert!(records.lines().nth(1).unwrap() == "# seed=3");

    // refuses to overwrite
    assert_eq!(
        code(&cmdn(
            p,
            &[
                "eval",
                "--run",
                "run",
                "--corpus",
                "data/test.jsonl",
                "--out",
                "e1"
            ]
        )),
        1
    );

    let lines = ok(
        p,
        &[
            "predict",
            "--run",
            "run",
            "--emit-density",
            "twin1 w004",
            "",
        ],
    );
    let lines: Vec<serde_json::Value> = lines
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert!(l["likelihood"].as_f64().unwrap() > 0.0);
        let g: Gmm2D = serde_json::from_value(l["density"].clone()).unwrap();
        assert_eq!(g.k(), 5);
    }
    assert_eq!(lines[1]["text"], "");
}

#[test]
fn regression_run_rejects_density_options() {
    let dir = setup("model = mlp-l2\n");
    let p = dir.path();
    ok(
        p,
        &[
            "train", "--config", "run.cfg", "--data", "data", "--out", "run",
        ],
    );
    let out = cmdn(
        p,
        &[
            "eval",
            "--run",
            "run",
            "--corpus",
            "data/test.jsonl",
            "--out",
            "e",
            "--sweep",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("likelihood"));
    assert_eq!(
        code(&cmdn(
            p,
            &["predict", "--run", "run", "--emit-density", "w001"]
        )),
        1
    );
    let line = ok(p, &["predict", "--run", "run", "w001"]);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(v["likelihood"].is_null() && v["lat"].is_f64());
}

#[test]
fn mean_baseline_checkpoint_is_one_point() {
    let dir = setup("model = mean\n");
    let p = dir.path();
    ok(
        p,
        &[
            "train", "--config", "run.cfg", "--data", "data", "--out", "run",
        ],
    );
    let ck: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("run/checkpoint.json")).unwrap())
            .unwrap();
    assert_eq!(ck["payload"]["type"], "constant");
    assert_eq!(ck["payload"]["point"].as_array().unwrap().len(), 2);
    let out = ok(p, &["predict", "--run", "run", "a", "b c"]);
    let v: Vec<&str> = out.lines().collect();
    let strip = |s: &str| {
        let j: serde_json::Value = serde_json::from_str(s).unwrap();
        (j["lat"].as_f64(), j["lon"].as_f64())
    };
    assert_eq!(strip(v[0]), strip(v[1]));
}

#[test]
fn l1_and_l2_configs_differ_only_in_model() {
    let dir = setup("");
    let p = dir.path();
    std::fs::write(p.join("l1.cfg"), format!("{SMALL}model = cnn-l1\n")).unwrap();
    std::fs::write(p.join("l2.cfg"), format!("{SMALL}model = cnn-l2\n")).unwrap();
    ok(
        p,
        &[
            "train", "--config", "l1.cfg", "--data", "data", "--out", "r1",
        ],
    );
    ok(
        p,
        &[
            "train", "--config", "l2.cfg", "--data", "data", "--out", "r2",
        ],
    );
    let read = |d: &str| std::fs::read_to_string(p.join(d).join("config.txt")).unwrap();
    let (a, b) = (read("r1"), read("r2"));
    let diff: Vec<(&str, &str)> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(diff.len(), 2, "{diff:?}");
    assert!(diff[0].0.starts_with("# config_hash="));
    assert_eq!(diff[1], ("model = cnn-l1", "model = cnn-l2"));
}

#[test]
fn grad_check_reports_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["grad-check"]);
    for kind in ["cnn-l1", "cnn-l2", "mlp-l2", "cmdn"] {
        assert!(out.lines().any(|l| l.starts_with(kind)), "{kind}");
    }
    assert!(out.contains("embedding") && out.contains("head.weight"));
}

#[test]
fn custom_generator_is_included() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["init-spec", "--out", "spec.toml"]);
    let spec = std::fs::read_to_string(p.join("spec.toml")).unwrap();
    std::fs::write(
        p.join("spec.toml"),
        spec.replacen("min_fillers = 4", "min_fillers = 1", 1),
    )
    .unwrap();
    std::fs::write(p.join("run.cfg"), format!("generator = spec.toml\n{SMALL}")).unwrap();
    ok(p, &["gen-data", "--config", "run.cfg", "--out", "data"]);
    let copied = std::fs::read_to_string(p.join("data/generator.toml")).unwrap();
    assert!(copied.contains("min_fillers = 1"));
}
