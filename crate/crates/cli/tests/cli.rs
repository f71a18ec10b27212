use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fightnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fightnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

fn cfg() -> String {
    config().display().to_string()
}

#[test]
fn count_params_reports_aggregator() {
    let o = fightnet(&["count-params"]);
    assert!(o.status.success());
    let line = stdout(&o).lines().find(|l| l.starts_with("aggregator")).unwrap().to_string();
    assert!(line.ends_with("4,719,616"), "{line}");

    let o = fightnet(&["count-params", "--json", "--set", "model.aggregator=lstm"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["aggregator"], 20_388_000);
}

#[test]
fn missing_manifest_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fightnet(&[
        "train",
        "--config",
        &cfg(),
        "--set",
        "data.manifest=/does/not/exist.csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn bad_config_exits_2() {
    for set in ["train.lr=0.1", "train.batch_size=1", "model.head=[8, 2]", "pipeline.crop=31"] {
        let o = fightnet(&["count-params", "--config", &cfg(), "--set", set]);
        assert_eq!(o.status.code(), Some(2), "{set}");
    }
    assert_eq!(fightnet(&["gradcheck", "--subjects", "softmax"]).status.code(), Some(2));
    assert_eq!(fightnet(&["count-params", "--config", "/nope.toml"]).status.code(), Some(2));
}

#[test]
fn gradcheck_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.json");
    let o = fightnet(&["gradcheck", "--subjects", "conv2d,lstm:2", "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v[0]["max_rel_error"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = fightnet(&["train", "-c", &cfg(), "--set", "train.iterations=40", "--fold", "1", "--out", run_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["weights.fnl", "norm.json", "run.jsonl", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("run.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 42);

    let o = fightnet(&["eval", "-c", &cfg(), "--checkpoint", run_s, "--fold", "1", "--json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["predictions"].as_array().unwrap().len(), 4);

    let o = fightnet(&["eval", "-c", &cfg(), "--checkpoint", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<Vec<serde_json::Value>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = fightnet(&["train", "-c", &cfg(), "--set", "train.iterations=10", "--out", out.to_str().unwrap()]);
            assert!(o.status.success());
            std::fs::read_to_string(out.join("run.jsonl"))
                .unwrap()
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .filter(|v: &serde_json::Value| v["kind"] == "iteration")
                .collect()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
    let a = std::fs::read(dir.path().join("a/weights.fnl")).unwrap();
    let b = std::fs::read(dir.path().join("b/weights.fnl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn make_folds_writes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("folds.json");
    let o = fightnet(&["make-folds", "-c", &cfg(), "--out", plan.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(plan).unwrap()).unwrap();
    assert_eq!(v["k"], 5);
    assert_eq!(v["folds"].as_array().unwrap().iter().map(|f| f.as_array().unwrap().len()).sum::<usize>(), 20);
}

#[test]
fn bench_reports_throughput() {
    let o = fightnet(&["bench", "-c", &cfg(), "--clips", "2", "--repeats", "1", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v[0]["frames_per_second"].as_f64().unwrap() > 0.0);
}
