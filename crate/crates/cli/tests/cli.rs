use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hvts::anomaly::{detect_outliers, scaled_k};
use hvts::dataio::{read_segments, sidecar_path};
use hvts::evalmetrics::{error_matrix, ErrorMatrix, ModelReconstructor};
use hvts::models::load_checkpoint;

fn hvts_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hvts")).args(args).output().expect("spawn hvts")
}

fn ok(args: &[&str]) -> String {
    let out = hvts_bin(args);
    assert!(
        out.status.success(),
        "hvts {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, serde_json::Value) {
    let out = hvts_bin(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let json = stderr.lines().rev().find_map(|l| serde_json::from_str(l).ok()).unwrap_or(serde_json::Value::Null);
    (out.status.code().unwrap_or(-1), json)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["synth", "--out", s(&out), "--n", "8", "--seed", "4", "--labels", "2"];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn train(dir: &Path, data: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "train", "--data", s(data), "--out", s(&out), "--epochs", "2", "--runs", "1", "--batch", "4", "--split",
        "all-train", "--seed", "3",
    ]);
    out
}

#[test]
fn synth_is_deterministic_and_annotated() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), "a.hvsg", &["--saturate-frac", "0.25"]);
    let b = synth(tmp.path(), "b.hvsg", &["--saturate-frac", "0.25"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let segs = read_segments(&a).unwrap();
    assert_eq!(segs.len(), 8);
    assert_eq!((segs[0].channels(), segs[0].len()), (8, 256));
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&a)).unwrap()).unwrap();
    let saturated = side["details"]["saturated"].as_array().unwrap();
    assert_eq!(saturated.len(), 2);
    for i in saturated {
        let seg = &segs[i.as_u64().unwrap() as usize];
        assert!(seg.samples().iter().any(|v| v.abs() == 100.0));
    }
}

#[test]
fn train_score_detect_match_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth(dir, "d.hvsg", &["--saturate-frac", "0.25"]);
    let run = train(dir, &data, "run");
    for f in ["manifest.json", "timings.json", "metrics/run00.json", "metrics/curves.tsv", "plots/loss.svg"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let ckpt = run.join("checkpoints/run00_epoch0002.hvts");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["outputs"]["checkpoints/run00_epoch0002.hvts"].is_string());
    assert_eq!(manifest["seeds"]["seed"], 3);

    let score = dir.join("score");
    ok(&["score", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&score)]);
    let cli_matrix: ErrorMatrix =
        serde_json::from_str(&std::fs::read_to_string(score.join("metrics/average_error.json")).unwrap()).unwrap();
    let model = load_checkpoint(&ckpt).unwrap();
    let segs = read_segments(&data).unwrap();
    let lib_matrix = error_matrix(&ModelReconstructor::deterministic(&model), &segs, "checkpoint00").unwrap();
    assert_eq!(cli_matrix.values, lib_matrix.values);

    let det = dir.join("detect");
    ok(&["detect", "--matrix", s(&score.join("metrics/average_error.json")), "--out", s(&det), "--k-auto"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(det.join("metrics/outliers.json")).unwrap()).unwrap();
    let lib = detect_outliers(&lib_matrix, scaled_k(lib_matrix.rows)).unwrap();
    let lib_json: serde_json::Value = serde_json::from_str(&lib.to_json().unwrap()).unwrap();
    assert_eq!(report, lib_json);
}

#[test]
fn reconstruct_and_spectra_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth(dir, "d.hvsg", &[]);
    let run = train(dir, &data, "run");
    let ckpt = run.join("checkpoints/run00_epoch0002.hvts");
    let rec = dir.join("rec.hvsg");
    ok(&["reconstruct", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&rec), "--level", "z1"]);
    let out = read_segments(&rec).unwrap();
    let inp = read_segments(&data).unwrap();
    assert_eq!(out.len(), inp.len());
    assert_eq!(out[3].repetition, inp[3].repetition);

    let spec = dir.join("spectra");
    ok(&["spectra", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&spec), "--window", "128", "--overlap", "64"]);
    let tsv = std::fs::read_to_string(spec.join("metrics/psd_reconstruction.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 65);
}

#[test]
fn error_categories_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = dir.join("nope.hvsg");

    let (c, _) = code(&["train", "--bogus"]);
    assert_eq!(c, 2);

    let (c, j) = code(&["score", "--data", s(&missing), "--checkpoint", s(&missing), "--out", s(&dir.join("o"))]);
    assert_eq!((c, j["error"]["category"].as_str()), (3, Some("missing_input")));

    let junk = dir.join("junk.hvsg");
    std::fs::write(&junk, b"not a segment file").unwrap();
    let (c, _) = code(&["train", "--data", s(&junk), "--out", s(&dir.join("o"))]);
    assert_eq!(c, 4);

    let data = synth(dir, "d.hvsg", &[]);
    let (c, _) = code(&["synth", "--out", s(&data)]);
    assert_eq!(c, 7, "existing output without --force");
    ok(&["synth", "--out", s(&data), "--force", "--n", "8", "--labels", "2"]);

    let (c, _) = code(&["train", "--data", s(&data), "--out", s(&dir.join("o")), "--lr=-1"]);
    assert_eq!(c, 6);

    let run = train(dir, &data, "run");
    let other = synth(dir, "other.hvsg", &["--channels", "4"]);
    let ckpt = run.join("checkpoints/run00_epoch0002.hvts");
    let (c, _) = code(&["score", "--data", s(&other), "--checkpoint", s(&ckpt), "--out", s(&dir.join("s"))]);
    assert_eq!(c, 5);

    let (c, _) = code(&["reconstruct", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&data), "--force"]);
    assert_eq!(c, 6, "writing over an input is refused");
}
