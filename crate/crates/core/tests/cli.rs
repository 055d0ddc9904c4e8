use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn droptrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_droptrack")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noisy_detector() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/noisy_detector.toml").to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn simulate_track_score() {
    let tmp = tempfile::tempdir().unwrap();
    let (sim, trk) = (tmp.path().join("sim"), tmp.path().join("trk"));
    json(&droptrack(&["simulate", "--out", s(&sim)]));
    for f in ["ground_truth.csv", "detections.txt", "effective_config.toml"] {
        assert!(sim.join(f).is_file(), "{f}");
    }
    json(&droptrack(&["track", s(&sim.join("detections.txt")), "--out", s(&trk), "--stitch"]));
    assert!(trk.join("trajectories.csv").is_file() && trk.join("counts.csv").is_file());
    let score = json(&droptrack(&["score", s(&trk), s(&sim.join("ground_truth.csv"))]));
    assert_eq!(score["full_trajectories"], 19);
    assert_eq!(score["id_switches"], 0);
    assert!(trk.join("score.json").is_file() && trk.join("score.txt").is_file());
}

#[test]
fn noisy_detector_scene_regression() {
    let tmp = tempfile::tempdir().unwrap();
    let (sim, trk) = (tmp.path().join("sim"), tmp.path().join("trk"));
    let cfg = noisy_detector();
    json(&droptrack(&["simulate", "--config", &cfg, "--out", s(&sim)]));
    json(&droptrack(&["track", s(&sim.join("detections.txt")), "--config", &cfg, "--out", s(&trk), "--stitch"]));
    let score = json(&droptrack(&["score", s(&trk), s(&sim.join("ground_truth.csv")), "--config", &cfg]));
    assert_eq!(score["full_trajectories"], 13);
    assert_eq!(score["gt_total"], 19);
}

#[test]
fn seed_changes_the_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |seed: &str| -> Vec<u8> {
        let dir = tmp.path().join(seed);
        json(&droptrack(&["simulate", "--seed", seed, "--out", s(&dir)]));
        fs::read(dir.join("ground_truth.csv")).unwrap()
    };
    let a = read("1");
    assert_eq!(a, read("1"));
    assert_ne!(a, read("2"));
}

#[test]
fn bench_prints_json() {
    let v = json(&droptrack(&["bench"]));
    assert_eq!(v["n_droplets"], 50);
    assert!(v["tracking"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(droptrack(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(droptrack(&[]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[tracker]\nn_inti = 3\n").unwrap();
    let out = droptrack(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_inti"));
    let out = droptrack(&["datagen", "--out", s(&tmp.path().join("d")), "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(droptrack(&["track", s(&tmp.path().join("missing.txt")), "--out", s(&out)]).status.code(), Some(2));
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "1,-1,10,10,not-a-number,5,0.9\n").unwrap();
    let o = droptrack(&["track", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn synthetic_only_datagen() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[datagen]\ntotal = 10\n[datagen.synthetic]\nwidth = 64\nheight = 64\naxis_range = [3.0, 12.0]\n").unwrap();
    let out = tmp.path().join("d");
    json(&droptrack(&["datagen", "--config", s(&cfg), "--out", s(&out), "--synthetic-only", "--jobs", "2"]));
    assert_eq!(fs::read_dir(out.join("100/images")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(out.join("100/labels")).unwrap().count(), 10);
}
