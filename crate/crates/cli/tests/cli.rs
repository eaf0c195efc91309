use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "model.motion.widths=[8,8,8]",
    "--set",
    "model.context.channels=[4,4,6,6]",
    "--set",
    "model.patchmatch.dim=6",
    "--set",
    "model.fusion.down=[4,4,6,6]",
    "--set",
    "model.fusion.up=[6,4,4,4]",
    "--set",
    "data.crop=32",
    "--set",
    "train.batch_size=2",
    "--set",
    "train.max_steps=2",
];

fn hstrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hstrnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy corpus plus a two-step checkpoint of the small model.
fn trained(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let prep = dir.join("prep");
    let out = hstrnet(&["prepare-data", "--root", s(&data), "--toy", "2", "--toy-size", "32", "--out", s(&prep)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let index = prep.join("index.json");
    let run = dir.join("run");
    let mut args = vec!["train", "--index", s(&index), "--out", s(&run)];
    args.extend_from_slice(SMALL);
    let out = hstrnet(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    (index, run.join("final.tar"))
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (index, ckpt) = trained(dir.path());
    let run = dir.path().join("run");
    for f in ["train_log.jsonl", "epoch_log.jsonl", "resolved_config.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let echo: serde_json::Value = serde_json::from_slice(&fs::read(run.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(echo["run"]["command"], "train");
    assert_eq!(echo["settings"]["model"]["motion"]["widths"], serde_json::json!([8, 8, 8]));

    // The checkpoint carries its own model settings.
    let ev = dir.path().join("eval");
    let out = hstrnet(&["eval", "--ckpt", s(&ckpt), "--index", s(&index), "--out", s(&ev)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 2);
    assert!(ev.join("per_sample.csv").exists());

    // Reusing the echoed settings reproduces the run's configuration.
    let again = dir.path().join("again");
    let out = hstrnet(&[
        "--config",
        s(&run.join("resolved_config.json")),
        "eval",
        "--ckpt",
        s(&ckpt),
        "--index",
        s(&index),
        "--out",
        s(&again),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(ev.join("report.json")).unwrap(), fs::read(again.join("report.json")).unwrap());

    let frames = dir.path().join("data/sequences/toy000");
    let png = dir.path().join("out.png");
    let out = hstrnet(&[
        "infer",
        "--lr",
        s(&frames.join("im4.png")),
        "--ref",
        s(&frames.join("im5.png")),
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&png),
        "--gt",
        s(&frames.join("im4.png")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(png.exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("PSNR"));
}

#[test]
fn mismatched_variant_names_a_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (index, ckpt) = trained(dir.path());
    let mut args = vec!["eval", "--ckpt", s(&ckpt), "--index", s(&index), "--out", "unused"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--set", "model.variant=i"]);
    let out = hstrnet(&args);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("parameter \"context.deform0"), "{}", stderr(&out));
}

#[test]
fn infer_size_mismatch_names_both_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    hstrnet::ImageF::filled(16, 24, 0.5).save_png(&a).unwrap();
    hstrnet::ImageF::filled(16, 32, 0.5).save_png(&b).unwrap();
    let out = hstrnet(&["infer", "--lr", s(&a), "--ref", s(&b), "--ckpt", "missing.tar", "--out", "x.png"]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("16x24") && err.contains("16x32"), "{err}");
}

#[test]
fn upsample_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let seq = dir.path().join("seq");
    let prep = dir.path().join("seq_prep");
    let out = hstrnet(&[
        "prepare-data",
        "--root",
        s(&seq),
        "--layout",
        "sequence",
        "--toy",
        "1",
        "--toy-size",
        "32",
        "--out",
        s(&prep),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let up = dir.path().join("up");
    let out = hstrnet(&["upsample4x", "--sequence", s(&seq.join("seq000")), "--ckpt", s(&ckpt), "--out", s(&up)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(up.join("psnr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let b = dir.path().join("bench");
    let out = hstrnet(&["bench", "--ckpt", s(&ckpt), "--height", "32", "--width", "48", "--out", s(&b)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let timing: serde_json::Value = serde_json::from_slice(&fs::read(b.join("bench.json")).unwrap()).unwrap();
    assert_eq!(timing["width"], 48);
    assert_eq!(timing["device"], "cpu");

    let out = hstrnet(&["bench", "--ckpt", s(&ckpt), "--iterations", "3"]);
    assert_eq!(code(&out), 2);
    let out = Command::new(env!("CARGO_BIN_EXE_hstrnet"))
        .args(["bench", "--ckpt", s(&ckpt), "--height", "32", "--width", "32"])
        .env("HSTRNET_DEVICE", "cuda")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn configuration_errors_exit_2() {
    let out = hstrnet(&["--set", "train.learning_rat=1", "bench"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rat"));
    let out = hstrnet(&["--set", "train.learning_rate=-1", "bench"]);
    assert_eq!(code(&out), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{\"model\": {\"variant\": \"full\", \"depth\": 3}}").unwrap();
    assert_eq!(code(&hstrnet(&["--config", s(&cfg), "bench"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir_all(empty.join("sequences")).unwrap();
    let out = hstrnet(&["train", "--index", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn selftest_passes() {
    let out = hstrnet(&["selftest"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 7, "{text}");
}
