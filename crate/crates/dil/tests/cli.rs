use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dil::config::{Preset, RunConfig};
use dil::eval::EnvMetrics;
use dil::models;
use dil::synthdata::load_csv;

fn dil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dil")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = dil(args);
    assert!(out.status.success(), "dil {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> usize {
    // task comment and column header
    fs::read_to_string(path).unwrap().lines().count() - 2
}

#[test]
fn gen_suite_regression_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("suite");
    ok(&["gen-suite", "regression", "--seed", "3", "--out", s(&out)]);
    assert_eq!(data_rows(&out.join("train.csv")), 2200);
    let mut tests: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("test"))
        .collect();
    tests.sort();
    assert_eq!(tests.len(), 6);
    for name in &tests {
        assert_eq!(data_rows(&out.join(name)), 1000, "{name}");
    }
    let train = load_csv(out.join("train.csv")).unwrap();
    let env = train.env.unwrap();
    assert_eq!(env.iter().filter(|&&e| e == 1).count(), 200);
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        ok(&["gen", "--task", "spurious-class", "--r", "0.8", "--n", "50", "--seed", "11", "--out", s(p)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.csv");
    ok(&["gen", "--task", "spurious-class", "--r", "0.8", "--n", "50", "--seed", "12", "--out", s(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn gen_rejects_weak_selection_bias() {
    let dir = tempfile::tempdir().unwrap();
    let out = dil(&["gen", "--task", "selection-bias", "--r", "0.5", "--n", "10", "--seed", "1", "--out", s(&dir.path().join("x.csv"))]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn train_writes_checkpoint_trace_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    ok(&["gen", "--task", "selection-bias", "--r", "2.0", "--n", "120", "--seed", "5", "--out", s(&data)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[dil]\nouter_iters = 5\ninner_epochs = 20\n").unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--method", "dil-kl", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);

    let model = models::load(out.join("model.json")).unwrap();
    assert_eq!(model.architecture().d_in(), load_csv(&data).unwrap().samples.dim());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 5);
    let echoed = RunConfig::load(out.join("config.toml"), Preset::Classification).unwrap();
    assert_eq!(echoed.seed, 5);
    assert_eq!(echoed.dil.outer_iters, 5);
    assert_eq!(echoed, RunConfig::load(&cfg, Preset::Regression).unwrap());
}

#[test]
fn train_rejects_config_without_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    ok(&["gen", "--task", "selection-bias", "--r", "2.0", "--n", "30", "--seed", "5", "--out", s(&data)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[dil]\nlambda = 1.0\n").unwrap();
    let out = dil(&["train", "--method", "erm", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
}

#[test]
fn dil_without_penalty_matches_erm() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    ok(&["gen", "--task", "selection-bias", "--r", "2.0", "--n", "100", "--seed", "8", "--out", s(&data)]);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 8\n[dil]\nlambda = 0.0\nouter_iters = 1\ninner_epochs = 40\nlearning_rate = 0.05\n[baseline]\nepochs = 40\nlearning_rate = 0.05\n",
    )
    .unwrap();
    let (erm, dil_dir) = (dir.path().join("erm"), dir.path().join("dil"));
    ok(&["train", "--method", "erm", "--config", s(&cfg), "--data", s(&data), "--out", s(&erm)]);
    ok(&["train", "--method", "dil-mmd", "--config", s(&cfg), "--data", s(&data), "--out", s(&dil_dir)]);
    let a = models::load(erm.join("model.json")).unwrap();
    let b = models::load(dil_dir.join("model.json")).unwrap();
    for (p, q) in a.params().iter().zip(b.params()) {
        assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()), "{p} vs {q}");
    }
}

#[test]
fn eval_reports_every_test_environment() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    ok(&["gen-suite", "regression", "--seed", "2", "--out", s(&suite)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 2\n[baseline]\nepochs = 30\n").unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--method", "erm", "--config", s(&cfg), "--data", s(&suite.join("train.csv")), "--out", s(&run)]);
    let metrics = dir.path().join("metrics.json");
    ok(&["eval", "--model", s(&run.join("model.json")), "--data-dir", s(&suite), "--out", s(&metrics)]);
    let m: EnvMetrics = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m.per_env.len(), 6);
    assert!(m.std_error.is_some());
    assert!(m.worst_error >= m.mean_error);
    assert!(m.accuracy.is_none());
}

#[test]
fn probe_on_constant_target_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    let mut text = String::from("# task=regression\nx0,x1,y\n");
    for i in 0..60 {
        let (a, b) = ((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos());
        text += &format!("{a:.16e},{b:.16e},2.5e0\n");
    }
    fs::write(&data, text).unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n[baseline]\nepochs = 10\n").unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--method", "erm", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let out = dir.path().join("probe.json");
    ok(&["probe", "--model", s(&run.join("model.json")), "--data", s(&data), "--alpha0", "0.2", "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["delta_hat"].as_f64().unwrap() < 1e-6, "{v}");
    assert_eq!(v["lower_bound"], serde_json::Value::Bool(true));
    assert_eq!(v["weights"].as_array().unwrap().len(), 60);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    ok(&["gen-suite", "classification", "--seed", "4", "--out", s(&suite)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 4\n[sweep]\ninner_epochs = 5\nepochs = 5\n").unwrap();
    let out = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--alphas",
        "0.1:0.2:0.1",
        "--config",
        s(&cfg),
        "--train",
        s(&suite.join("train.csv")),
        "--test",
        s(&suite.join("test_r0.0.csv")),
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(out.join("config.toml").exists());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,alpha0,test_acc,test_loss,seed");
    assert_eq!(lines.len(), 1 + 4);
    let methods: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["dil-mmd", "dil-mmd", "dro", "dro"]);
}
