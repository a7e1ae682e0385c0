use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn manvb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_manvb")).args(args).output().expect("binary runs")
}

fn toy_csv(dir: &Path) -> String {
    let mut text = String::from("a,b,c,label\n");
    for i in 0..60 {
        let (a, b, c) = ((i * 7 % 13) as f64 / 6.0 - 1.0, (i * 5 % 11) as f64 / 5.0 - 1.0, (i % 4) as f64);
        let label = u8::from(a + 0.5 * b > 0.0);
        text.push_str(&format!("{a},{b},{c},{label}\n"));
    }
    let path = dir.join("toy.csv");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn check_passes() {
    let out = manvb(&["check", "--instances", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 22);
}

#[test]
fn fit_writes_trace_summary_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_csv(dir.path());
    let trace = dir.path().join("trace.csv");
    let summary = dir.path().join("summary.json");
    let ckpt = dir.path().join("fit.ckpt");
    let out = manvb(&[
        "fit", "--data", &data, "--param", "S", "--rule", "cRGD-M", "-p", "2", "--max-iters", "300",
        "--trace", trace.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
        "--checkpoint", ckpt.to_str().unwrap(), "--no-timing",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace_text = fs::read_to_string(&trace).unwrap();
    assert!(trace_text.lines().nth(1).unwrap().starts_with("iter,elbo_sample"));
    assert_eq!(trace_text.lines().count(), 2 + 30);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(json["metrics"]["train_error"].as_f64().unwrap() < 0.2);
    assert_eq!(&fs::read(&ckpt).unwrap()[..8], b"MANVBCK1");
}

#[test]
fn bad_input_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "1,2,0\n3,x,1\n").unwrap();
    let out = manvb(&["fit", "--data", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
