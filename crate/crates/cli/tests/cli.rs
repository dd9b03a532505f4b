use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gridbary_core::io::{load_measure, save_measure};
use gridbary_core::GridMeasure;

fn gridbary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridbary"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("GRIDBARY_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, size: usize, pairs: usize) -> std::path::PathBuf {
    let cfg = dir.join("gen.json");
    let data = dir.join("data");
    fs::write(
        &cfg,
        format!(r#"{{"size": {size}, "seed": 5, "n_shapes": 6, "n_pairs": {pairs}, "out": "{}"}}"#, s(&data)),
    )
    .unwrap();
    let out = gridbary(&["gen-dataset", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn shape_files(data: &Path) -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = fs::read_dir(data.join("shapes")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

#[test]
fn dataset_bary_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 32, 4);
    let manifest = fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 4);

    let shapes = shape_files(&data);
    let out = dir.path().join("b.wbgm");
    let run = gridbary(&["bary", "linearized", s(&shapes[0]), s(&shapes[1]), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(load_measure(&out).unwrap().shape(), (32, 32));
    assert!(out.with_extension("pgm").exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"size": 16, "n_shapes": 2, "n_pairs": 2, "colour": 1}"#).unwrap();
    assert_eq!(code(&gridbary(&["gen-dataset", s(&bad)])), 2);
    assert_eq!(code(&gridbary(&["bary", "simplex", s(&shapes[0]), s(&shapes[1]), "--out", s(&out)])), 2);

    let big: Vec<_> = (0..2)
        .map(|k| {
            let p = dir.path().join(format!("big{k}.wbgm"));
            save_measure(&GridMeasure::uniform(64, 64).unwrap(), &p).unwrap();
            p
        })
        .collect();
    assert_eq!(code(&gridbary(&["bary", "lp", s(&big[0]), s(&big[1]), "--out", s(&out)])), 4);
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 32, 6);
    let model = dir.path().join("m.wbck");
    let log = dir.path().join("log.jsonl");
    let run = gridbary(&[
        "train", "--data", s(&data), "--out", s(&model), "--depth", "2", "--widths", "4,8", "--batch-size", "2",
        "--max-steps", "3", "--log", s(&log),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);

    let shapes = shape_files(&data);
    let (a, b) = (s(&shapes[0]), s(&shapes[1]));
    let (p3, p2) = (dir.path().join("p3.wbgm"), dir.path().join("p2.wbgm"));
    let m = s(&model);
    assert_eq!(code(&gridbary(&["predict", "--model", m, a, b, a, "--weights", "0.2,0.5,0.3", "--out", s(&p3)])), 0);
    assert_eq!(code(&gridbary(&["predict", "--model", m, a, b, "--weights", "0.5,0.5", "--out", s(&p2)])), 0);
    assert_eq!(fs::read(&p3).unwrap(), fs::read(&p2).unwrap());

    let csv = dir.path().join("eval.csv");
    assert_eq!(code(&gridbary(&["eval", "--data", s(&data), "--self-targets", "--out", s(&csv)])), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("record_id,n_inputs,kl,l1"));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);

    assert_eq!(code(&gridbary(&["eval", "--data", s(&data), "--model", m, "--out", s(&csv)])), 0);
    assert_eq!(code(&gridbary(&["predict", "--model", s(&dir.path().join("none.wbck")), a, b, "--out", s(&p2)])), 2);
}

#[test]
fn bench_skips_failures_and_notes_them() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let run = gridbary(&["bench", "--methods", "model,linearized,lp", "--sizes", "32", "--reps", "2", "--out", s(&csv)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lp = text.lines().find(|l| l.starts_with("lp,")).unwrap();
    assert!(lp.contains("skipped"));
    assert!(text.lines().any(|l| l.starts_with("model,32,") && !l.contains("skipped")));
    assert!(text.contains("published"));
}

#[test]
fn color_transfer_writes_image_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("t.png");
    let source = dir.path().join("s.png");
    image::RgbImage::from_fn(32, 24, |x, y| image::Rgb([(x * 8) as u8, (y * 10) as u8, 120])).save(&target).unwrap();
    image::RgbImage::from_fn(32, 24, |x, y| image::Rgb([200, (x * 4) as u8, (y * 5) as u8])).save(&source).unwrap();
    let out = dir.path().join("o.png");
    let diag = dir.path().join("d.json");
    let inter = dir.path().join("inter");
    let run = gridbary(&[
        "color-transfer", s(&target), s(&source), s(&target), "--bins", "16", "--out", s(&out), "--diag", s(&diag),
        "--keep-intermediates", s(&inter),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(image::open(&out).unwrap().to_rgb8().dimensions(), (32, 24));
    let d: serde_json::Value = serde_json::from_str(&fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(d["n_sources"], 2);
    assert!(inter.join("barycenter.wbgm").exists());
}
