use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.txt")
}

fn usoftmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usoftmax")).args(args).output().unwrap()
}

fn with_data<'a>(sub: &'a str, data: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![sub, "--data", data, "--index-base", "1"];
    v.extend_from_slice(rest);
    v
}

#[test]
fn ingest_prints_a_summary() {
    let data = fixture();
    let out = usoftmax(&with_data("ingest", data.to_str().unwrap(), &[]));
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["N"], 80);
    assert_eq!(v["K"], 4);
    assert_eq!(v["D"], 8);
}

#[test]
fn deterministic_train_output_is_reproducible() {
    let data = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let out = usoftmax(&with_data(
            "train",
            data.to_str().unwrap(),
            &["--method", "umax", "--eta0", "1", "--epochs", "20", "--seed", "3", "--deterministic", "--out", csv.to_str().unwrap()],
        ));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(csv).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("method,dataset,formulation,eta0,epoch,log_loss,error_rate,elapsed_sec,failed"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn bench_writes_one_block_per_method() {
    let data = fixture();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = usoftmax(&with_data(
        "bench",
        data.to_str().unwrap(),
        &["--method", "isgd,umax,ove", "--eta0", "1", "--epochs", "10", "--out", csv.to_str().unwrap()],
    ));
    assert!(out.status.success());
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 10);
}

#[test]
fn train_save_and_evaluate() {
    let data = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let out = usoftmax(&with_data(
        "train",
        data.to_str().unwrap(),
        &["--method", "isgd", "--eta0", "10", "--epochs", "5", "--model-out", model.to_str().unwrap()],
    ));
    assert!(out.status.success());
    let out = usoftmax(&with_data("evaluate", data.to_str().unwrap(), &["--model", model.to_str().unwrap()]));
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["log_loss"].as_f64().unwrap() < 80.0 * 4f64.ln());
}

#[test]
fn compare_formulations_reports_the_ratio() {
    let data = fixture();
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("s.json");
    let csv = dir.path().join("c.csv");
    let out = usoftmax(&with_data(
        "compare-formulations",
        data.to_str().unwrap(),
        &["--grid", "0.1,1", "--epochs", "5", "--out", csv.to_str().unwrap(), "--summary", summary.to_str().unwrap()],
    ));
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(v["reference_ratio"], 3.08);
    assert_eq!(v["pairs"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let data = fixture();
    let data = data.to_str().unwrap();
    let code = |args: Vec<&str>| usoftmax(&args).status.code();
    assert_eq!(code(vec!["train", "--data", "/no/such/file", "--method", "isgd", "--eta0", "1"]), Some(3));
    assert_eq!(code(with_data("train", data, &["--method", "isgd", "--eta0", "1", "--decay", "2"])), Some(4));
    assert_eq!(code(with_data("train", data, &["--method", "nope", "--eta0", "1"])), Some(4));
    assert_eq!(
        code(with_data("tune", data, &["--method", "vanilla", "--grid", "1e6", "--epochs", "5", "--subsample", "1"])),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a model").unwrap();
    assert_eq!(code(with_data("evaluate", data, &["--model", bad.to_str().unwrap()])), Some(3));
}
