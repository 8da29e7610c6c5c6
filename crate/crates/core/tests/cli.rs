use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgfm::cli::{EXIT_DIMENSION, EXIT_IO, EXIT_USAGE};

fn karate() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/karate.edges")
}

fn rgfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgfm"))
        .args(args)
        .env("RGFM_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--dim", "4", "--hidden", "8", "--seed", "3"];

#[test]
fn zero_epoch_pretrain_writes_checkpoint_and_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let graph = karate();
    let ckpt = dir.path().join("model.ckpt");
    let mut args = vec!["pretrain", "--graph", s(&graph), "--epochs", "0", "--out", s(&ckpt)];
    args.extend(SMALL);
    let out = rgfm(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    let trace = std::fs::read_to_string(dir.path().join("model.ckpt.trace")).unwrap();
    // header only, no loss lines
    assert!(trace.lines().all(|l| l.starts_with('#')), "{trace}");
    assert!(trace.contains("command = pretrain"));
}

#[test]
fn pretrain_embed_and_eval_link_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graph = karate();
    let ckpt = dir.path().join("m.ckpt");
    let emb = dir.path().join("m.emb");
    let rep = dir.path().join("link.txt");

    let mut args = vec!["pretrain", "--graph", s(&graph), "--epochs", "2", "--out", s(&ckpt)];
    args.extend(SMALL);
    assert!(rgfm(&args).status.success());

    let out = rgfm(&[
        "embed",
        "--graph",
        s(&graph),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&emb),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(&emb).unwrap();
    let body: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "34 8");
    assert_eq!(body.len(), 35);
    for (i, line) in body[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(' ').collect();
        assert_eq!(fields[0], i.to_string());
        assert_eq!(fields.len(), 9);
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
    }

    let out = rgfm(&[
        "eval-link",
        "--graph",
        s(&graph),
        "--checkpoint",
        s(&ckpt),
        "--seed",
        "7",
        "--out",
        s(&rep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("link.txt.json")).unwrap()).unwrap();
    let auc = json["auc"].as_f64().unwrap();
    assert!(auc.is_finite() && (0.0..=1.0).contains(&auc));
    assert_eq!(json["seed"], 7);
    assert!(std::fs::read_to_string(&rep).unwrap().starts_with("# config"));
}

#[test]
fn eval_node_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let graph = karate();
    let labels = graph.with_file_name("karate.labels");
    let ckpt = dir.path().join("m.ckpt");
    let rep = dir.path().join("node.txt");
    let mut args = vec!["pretrain", "--graph", s(&graph), "--epochs", "0", "--out", s(&ckpt)];
    args.extend(SMALL);
    assert!(rgfm(&args).status.success());
    let out = rgfm(&[
        "eval-node",
        "--graph",
        s(&graph),
        "--labels",
        s(&labels),
        "--checkpoint",
        s(&ckpt),
        "--k-shots",
        "3",
        "--out",
        s(&rep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("node.txt.json")).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&json["acc"].as_f64().unwrap()));
    assert!(json["weighted_f1"].as_f64().unwrap().is_finite());
    assert_eq!(json["k"], 3);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let graph = karate();
    let ckpt = dir.path().join("m.ckpt");
    let out_path = dir.path().join("x");

    let missing = rgfm(&["pretrain", "--graph", "/nonexistent/g.edges", "--out", s(&out_path)]);
    assert_eq!(missing.status.code(), Some(EXIT_IO));
    assert!(!missing.stderr.is_empty());

    assert_eq!(rgfm(&["pretrain", "--bogus"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(rgfm(&["train"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(
        rgfm(&["pretrain", "--graph", s(&graph), "--out", s(&out_path), "--lr=-1"])
            .status
            .code(),
        Some(EXIT_USAGE)
    );

    let mut args = vec!["pretrain", "--graph", s(&graph), "--epochs", "0", "--out", s(&ckpt)];
    args.extend(SMALL);
    assert!(rgfm(&args).status.success());
    let mismatch = rgfm(&[
        "embed",
        "--graph",
        s(&graph),
        "--checkpoint",
        s(&ckpt),
        "--dim",
        "6",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(mismatch.status.code(), Some(EXIT_DIMENSION));

    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let corrupt = rgfm(&[
        "embed",
        "--graph",
        s(&graph),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(corrupt.status.code(), Some(EXIT_IO));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let ckpt = dir.path().join("m.ckpt");
    std::fs::write(&cfg, "dim = 4\nhidden = 8\nepochs = 0\nseed = 11\n").unwrap();
    let out = rgfm(&[
        "pretrain",
        "--config",
        s(&cfg),
        "--graph",
        s(&karate()),
        "--seed",
        "12",
        "--out",
        s(&ckpt),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("m.ckpt.trace")).unwrap();
    assert!(
        trace.contains("# seed = 12") && trace.contains("# dim_h = 4"),
        "{trace}"
    );
}

#[test]
fn selfcheck_passes_on_a_fresh_build() {
    let out = rgfm(&["selfcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("0 failed"));
    assert!(!stdout.contains("FAIL"));
}
