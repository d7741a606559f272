use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gandetect::image::load_image;
use gandetect_bench::detector::{Payload, TrainedDetector};

const BIN: &str = env!("CARGO_BIN_EXE_gandetect");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small 16×16 corpus with every detector kind that trains quickly.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
seed = 5
out_dir = "out"

[dataset]
dir = "data"

[dataset.synth]
seed = 5
side = 16
alpha_range = [0.8, 1.6]
generators = [
  {{ tag = "gen-a", base_side = 8, upsampler = "zero-insertion", kernel = [[0.25, 0.5, 0.25], [0.5, 1.1, 0.5], [0.25, 0.5, 0.25]], stages = 1, artifact_gain = 0.8 }},
  {{ tag = "gen-b", base_side = 4, upsampler = "zero-insertion", kernel = [[0.0, 0.0, 0.0], [0.0, 1.1, 1.0], [0.0, 1.0, 1.0]], stages = 2, artifact_gain = 0.8 }},
]
splits = [
  {{ name = "train", real = 12, fake = 12, generators = ["gen-a"] }},
  {{ name = "test", real = 10, fake = 10, generators = ["gen-b"] }},
]

[train]
epochs = 2
batch_size = 8
side = 16
linear_steps = 100

[sweep]
jpeg_qualities = [90, 50]
scales = [0.5, 1.0, 2.0]

[[detectors]]
name = "saturation"

[[detectors]]
name = "spec-peaks"

[[detectors]]
name = "cnn-nodown"

[[detectors]]
name = "cnn-patch"
patch = 8
stride = 4

[[detectors]]
name = "fingerprint"
{extra}
"#
    );
    let path = dir.join("bench.toml");
    fs::write(&path, text).unwrap();
    path
}

fn synth(cfg: &Path) {
    let out = run(&["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_configured_counts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(&["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let manifest = dir.path().join("data/train.tsv");
    assert!(stdout(&out).contains(manifest.to_str().unwrap()));
    let first = fs::read(&manifest).unwrap();
    let img = fs::read(dir.path().join("data/test/fake/00003.ppm")).unwrap();
    let m = gandetect::manifest::DatasetManifest::read(&manifest).unwrap();
    assert_eq!(m.len(), 24);
    synth(&cfg);
    assert_eq!(first, fs::read(&manifest).unwrap());
    assert_eq!(img, fs::read(dir.path().join("data/test/fake/00003.ppm")).unwrap());
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();

    // no manifest yet: the split is absent
    assert_eq!(code(&run(&["eval", "--config", c, "--detector", "saturation"])), 2);
    assert_eq!(code(&run(&["train", "--config", c, "--detector", "nope"])), 2);
    assert_eq!(code(&run(&["synth"])), 2);
    assert_eq!(code(&run(&["synth", "--config", dir.path().join("missing.toml").to_str().unwrap()])), 3);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "out_dir = \"o\"\n[dataset]\ndir = \"d\"\n[[detectors]]\nname = \"resnet50\"\n").unwrap();
    assert_eq!(code(&run(&["synth", "--config", bad.to_str().unwrap()])), 2);

    // dataset directory below a regular file cannot be created
    fs::write(dir.path().join("blocker"), "x").unwrap();
    let blocked = dir.path().join("blocked.toml");
    let text = fs::read_to_string(&cfg).unwrap().replace("dir = \"data\"", "dir = \"blocker/data\"");
    fs::write(&blocked, text).unwrap();
    assert_eq!(code(&run(&["synth", "--config", blocked.to_str().unwrap()])), 3);

    synth(&cfg);
    assert_eq!(code(&run(&["eval", "--config", c, "--detector", "saturation", "--split", "valid"])), 2);
    let sweep = run(&["sweep", "--config", c]);
    assert_eq!(code(&sweep), 2);
    assert!(String::from_utf8_lossy(&sweep.stderr).contains("saturation"));
    let inspect = run(&["inspect", "--config", c, "--source", "unknown", "--what", "fingerprint"]);
    assert_eq!(code(&inspect), 2);
    assert_eq!(code(&run(&["inspect", "--config", c, "--source", "gen-b", "--what", "histogram"])), 2);
}

#[test]
fn degenerate_training_set_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    synth(&cfg);
    let manifest = dir.path().join("data/train.tsv");
    let text = fs::read_to_string(&manifest).unwrap();
    let only_real: String = text
        .lines()
        .filter(|l| l.starts_with('#') || l.contains("\t0\t") || l.starts_with("path"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&manifest, only_real).unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--detector", "saturation"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_eval_sweep_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();
    synth(&cfg);
    for det in ["saturation", "spec-peaks", "cnn-nodown", "cnn-patch", "fingerprint"] {
        let out = run(&["train", "--config", c, "--detector", det]);
        assert_eq!(code(&out), 0, "{det}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let models = dir.path().join("out/models");
    let sat = TrainedDetector::load(&models.join("saturation.model")).unwrap();
    match &sat.payload {
        Payload::Linear(m) => assert_eq!(m.weights.len(), 15),
        other => panic!("unexpected payload {other:?}"),
    }
    let cnn_bytes = fs::read(models.join("cnn-nodown.model")).unwrap();
    match TrainedDetector::from_bytes(&cnn_bytes).unwrap().payload {
        Payload::Cnn(p) => assert_eq!(p.variant.tag(), "no-down"),
        other => panic!("unexpected payload {other:?}"),
    }
    let sidecar = fs::read_to_string(models.join("cnn-nodown.model.txt")).unwrap();
    assert!(sidecar.contains("variant = no-down"));
    assert!(sidecar.lines().any(|l| l.starts_with("config_hash = ") && l.len() == "config_hash = ".len() + 64));

    // retraining with the same seed reproduces the bytes
    assert_eq!(code(&run(&["train", "--config", c, "--detector", "cnn-nodown"])), 0);
    assert_eq!(cnn_bytes, fs::read(models.join("cnn-nodown.model")).unwrap());
    assert_eq!(code(&run(&["train", "--config", c, "--detector", "cnn-nodown", "--seed", "6"])), 0);
    assert_ne!(cnn_bytes, fs::read(models.join("cnn-nodown.model")).unwrap());
    assert_eq!(code(&run(&["train", "--config", c, "--detector", "cnn-nodown"])), 0);

    let eval = run(&["eval", "--config", c, "--detector", "spec-peaks"]);
    assert_eq!(code(&eval), 0);
    let eval_csv = fs::read_to_string(dir.path().join("out/eval/spec-peaks-test.csv")).unwrap();
    let lines: Vec<&str> = eval_csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "detector,perturbation,parameter,auc,acc_at_0.5,pd_at_5,pd_at_1,n_pos,n_neg");
    assert!(lines[1].starts_with("spec-peaks,none,,"));

    let sweep = run(&["sweep", "--config", c]);
    assert_eq!(code(&sweep), 0, "{}", String::from_utf8_lossy(&sweep.stderr));
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5 * (1 + 2 + 3));
    // the sweep's "none" row reproduces eval exactly
    assert!(csv.lines().any(|l| l == lines[1]));
    for det in ["saturation", "spec-peaks", "cnn-nodown", "cnn-patch", "fingerprint"] {
        let none = rows.iter().find(|r| r[0] == det && r[1] == "none").unwrap();
        let unit = rows.iter().find(|r| r[0] == det && r[1] == "resize" && r[2] == "1").unwrap();
        assert_eq!(none[3..], unit[3..], "{det}");
    }
    for r in &rows {
        for v in &r[3..7] {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    let out = run(&["inspect", "--config", c, "--source", "gen-b", "--what", "fingerprint"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pgm = dir.path().join("out/inspect/gen-b-fingerprint.pgm");
    let img = load_image(&pgm).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (16, 16, 1));
}

#[test]
fn averaged_spectrum_shows_half_band_spots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("side = 16\nalpha", "side = 32\nalpha")
        .replace("base_side = 8", "base_side = 16")
        .replace("base_side = 4", "base_side = 8")
        .replace("artifact_gain = 0.8", "artifact_gain = 1.0")
        .replace("real = 10, fake = 10", "real = 2, fake = 40");
    fs::write(&cfg, text).unwrap();
    synth(&cfg);
    let out = run(&[
        "inspect",
        "--config",
        cfg.to_str().unwrap(),
        "--split",
        "train",
        "--source",
        "gen-a",
        "--what",
        "avg-spectrum",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = load_image(dir.path().join("out/inspect/gen-a-avg-spectrum.pgm")).unwrap();
    // centred display: (N/2, 0) frequency sits at pixel (0, 16), (0, N/2) at (16, 0)
    for (x, y) in [(0usize, 16usize), (16, 0), (0, 0)] {
        let v = img.get(x, y, 0);
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let nx = (x as i64 + dx).rem_euclid(32) as usize;
            let ny = (y as i64 + dy).rem_euclid(32) as usize;
            assert!(v >= img.get(nx, ny, 0), "({x},{y}) is not a local maximum");
        }
    }
}
