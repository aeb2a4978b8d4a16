use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_actisleep"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_nonzero() {
    for args in [
        vec![],
        vec!["train"],
        vec!["train", "--model", "transformer", "--out", "x"],
        vec!["evaluate", "--report", "r.txt"],
        vec!["evaluate", "--ckpt", "m.ckpt", "--report", "r.txt"],
        vec!["cluster", "--out", "x"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.csv");
    let out = run(&["evaluate", "--confusion", s(&missing), "--report", s(&dir.path().join("r.txt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepoch = 3\n").unwrap();
    let out = run(&["generate", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stored_confusion_matrix_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("table.txt");
    let stdout = ok(&["evaluate", "--confusion", s(&fixture("table4_confusion.csv")), "--report", s(&report), "--title", "mtl"]);
    assert!(stdout.starts_with("mtl\n"));
    let metrics = std::fs::read_to_string(dir.path().join("table.metrics.csv")).unwrap();
    let wake = metrics.lines().find(|l| l.starts_with("W,")).unwrap();
    let cols: Vec<&str> = wake.split(',').collect();
    let precision: f64 = cols[1].parse().unwrap();
    assert_eq!(precision, 54009.0 / 54114.0);
    assert_eq!(&cols[4..], ["54114", "54270"]);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout.lines().take_while(|l| !l.starts_with("wrote")).map(|l| format!("{l}\n")).collect::<String>());
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = fixture("small.toml");
    let data = d.join("data");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    assert!(data.join("patient01.csv").exists() && data.join("patient02.csv").exists());

    let ckpt = d.join("seq.ckpt");
    let stdout = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--model", "seq-cnn", "--out", s(&ckpt)]);
    assert!(stdout.contains("best epoch"));
    for ext in ["ckpt", "metrics.csv", "confusion.csv", "convergence.csv", "timing.csv"] {
        assert!(d.join(format!("seq.{ext}")).exists(), "{ext}");
    }
    let curve = std::fs::read_to_string(d.join("seq.convergence.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    ok(&["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&d.join("eval.txt"))]);
    assert_eq!(
        std::fs::read_to_string(d.join("eval.metrics.csv")).unwrap(),
        std::fs::read_to_string(d.join("seq.metrics.csv")).unwrap()
    );
    ok(&["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--report", s(&d.join("all.txt")), "--all-windows"]);

    let pred = d.join("pred.csv");
    ok(&["predict", "--ckpt", s(&ckpt), "--data", s(&data.join("patient01.csv")), "--out", s(&pred)]);
    let rows = std::fs::read_to_string(&pred).unwrap().lines().count();
    assert_eq!(rows, 1 + 2 * 2880);

    let cl = d.join("cluster");
    let stdout = ok(&["cluster", "--config", s(&cfg), "--data", s(&data), "--out", s(&cl), "--use-predictions", s(&ckpt)]);
    assert!(stdout.contains("attack purity"));
    for f in ["distances.csv", "tree.nwk", "tree.json", "assignments.csv", "separation.csv"] {
        assert!(cl.join(f).exists(), "{f}");
    }
    let nwk = std::fs::read_to_string(cl.join("tree.nwk")).unwrap();
    assert!(nwk.trim_end().ends_with(';'));

    let other = d.join("other.ckpt");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--model", "mtl-cnn", "--out", s(&other), "--patient", "patient02", "--epochs", "1"]);
    let out = run(&["train", "--config", s(&cfg), "--data", s(&data), "--model", "seq-cnn", "--out", s(&other), "--patient", "nobody"]);
    assert_eq!(out.status.code(), Some(1));
}
