use std::path::Path;
use std::process::{Command, Output};

use nets_core::labels::{read_labels, write_labels, LabelRecord, PlayClass};

fn nets(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nets"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = nets(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "ingest",
        "segment",
        "weaklabel",
        "synth",
        "pretrain",
        "finetune",
        "evaluate",
        "export-embeddings",
        "annotate-serve",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let out = nets(&["finetune", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--labels", "--val-labels", "--from-checkpoint", "--seed", "--patience", "--lr", "--batch", "--stage"] {
        assert!(text.contains(flag), "{flag} missing from finetune help");
    }
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = nets(&["dunk"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = nets(&["weaklabel", "--segments", "/nonexistent/s.jsonl", "--output", p(&dir.path().join("l.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_thresholds_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nets(&["synth", "--out-dir", p(d), "--pick-and-roll", "2", "--handoff", "2", "--spread", "1", "--random-walk", "1"]).status.code(), Some(0));
    std::fs::write(d.join("t.cfg"), "pnr_max_handler_screener = banana\n").unwrap();
    let out = nets(&[
        "weaklabel",
        "--segments",
        p(&d.join("segments.jsonl")),
        "--thresholds",
        p(&d.join("t.cfg")),
        "--output",
        p(&d.join("weak.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let rec = |id: &str, c| LabelRecord::weak(id, c, None, "t");
    use PlayClass::*;
    let truth = [rec("a", PickAndRoll), rec("b", Handoff), rec("c", Other), rec("d", Other)];
    let pred = [rec("a", PickAndRoll), rec("b", Other), rec("c", Other), rec("d", Other)];
    write_labels(&dir.path().join("truth.jsonl"), &truth).unwrap();
    write_labels(&dir.path().join("pred.jsonl"), &pred).unwrap();
    let out = nets(&[
        "evaluate",
        "--labels",
        p(&dir.path().join("truth.jsonl")),
        "--pred",
        p(&dir.path().join("pred.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["confusion"], serde_json::json!([[1, 0, 0], [0, 0, 1], [0, 0, 2]]));
    assert_eq!(v["per_class"]["pick_and_roll"]["f1"], 1.0);
    // handoff has no true positives and no predictions: precision undefined
    assert!(v["per_class"]["handoff"]["f1"].is_null());
    assert!((v["per_class"]["other"]["f1"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    write_labels(&dir.path().join("short.jsonl"), &pred[..3]).unwrap();
    let out = nets(&[
        "evaluate",
        "--labels",
        p(&dir.path().join("truth.jsonl")),
        "--pred",
        p(&dir.path().join("short.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_and_segment_synthetic_frames() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nets(&["synth", "--out-dir", p(d), "--pick-and-roll", "3", "--handoff", "0", "--spread", "0", "--random-walk", "0", "--sigma", "0"]).status.code(), Some(0));
    let out = nets(&["ingest", "--input", p(&d.join("frames.jsonl")), "--output", p(&d.join("clean.jsonl")), "--rejects", p(&d.join("rej.csv"))]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(d.join("rej.csv")).unwrap().lines().count(), 1);
    let out = nets(&["segment", "--frames", p(&d.join("clean.jsonl")), "--output", p(&d.join("seg.jsonl"))]);
    assert_eq!(out.status.code(), Some(0));
    let segs = nets_core::segment::read_store(&d.join("seg.jsonl")).unwrap();
    let synth = nets_core::segment::read_store(&d.join("segments.jsonl")).unwrap();
    // the synthetic store keeps the first window of each play
    for s in &synth {
        let again = segs.iter().find(|x| x.segment_id == s.segment_id).unwrap();
        assert_eq!(again, s);
    }
    let out = nets(&["weaklabel", "--segments", p(&d.join("seg.jsonl")), "--output", p(&d.join("weak.jsonl"))]);
    assert_eq!(out.status.code(), Some(0));
    assert!(d.join("weak.audit.csv").exists());
    let weak = read_labels(&d.join("weak.jsonl")).unwrap();
    assert_eq!(weak.len(), segs.len());
}

#[test]
fn busy_port_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nets(&["synth", "--out-dir", p(d), "--pick-and-roll", "2", "--handoff", "2", "--spread", "2", "--random-walk", "0"]).status.code(), Some(0));
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = nets(&[
        "annotate-serve",
        "--segments",
        p(&d.join("segments.jsonl")),
        "--weak-labels",
        p(&d.join("truth.jsonl")),
        "--output",
        p(&d.join("manual.jsonl")),
        "--port",
        &port,
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn export_needs_classification_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nets(&["synth", "--out-dir", p(d), "--pick-and-roll", "10", "--handoff", "10", "--spread", "10", "--random-walk", "0"]).status.code(), Some(0));
    let seg = d.join("segments.jsonl");
    let ckpt = d.join("pre.ckpt");
    let out = nets(&["pretrain", "--segments", p(&seg), "--out", p(&ckpt), "--preset", "gradcheck", "--max-epochs", "1"]);
    // the gradcheck preset predicts 4 steps, the store has 10
    assert_eq!(out.status.code(), Some(1));
    let out = nets(&["pretrain", "--segments", p(&seg), "--out", p(&ckpt), "--max-epochs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = nets(&["export-embeddings", "--checkpoint", p(&ckpt), "--segments", p(&seg), "--output", p(&d.join("e.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}
