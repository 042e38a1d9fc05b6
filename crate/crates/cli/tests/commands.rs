use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use multiscan::geom::{radius, Point3};
use multiscan::seqio;

fn multiscan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multiscan"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = multiscan(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn three_scan_sequence_gives_three_frames() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "1", "--scans", "3", "--out", "seq"], d);
    ok(&["preprocess", "--input", "seq", "--out", "out", "--profile", "nuscenes", "--training"], d);
    for sub in ["points", "prov", "labels"] {
        let all: Vec<_> = std::fs::read_dir(d.join("out/seq").join(sub)).unwrap().collect();
        assert_eq!(all.len(), 3, "{sub}");
    }
}

#[test]
fn non_smearing_without_masks_or_labels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "1", "--scans", "3", "--out", "seq"], d);
    std::fs::write(d.join("seq/manifest.toml"), "poses = \"poses.txt\"\nscan_dir = \"velodyne\"\n").unwrap();
    let out = multiscan(&["preprocess", "--input", "seq", "--out", "out", "--mode", "non-smearing"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("preprocess") && err.contains("moving mask"), "{err}");
    // Smearing needs no masks.
    ok(&["preprocess", "--input", "seq", "--out", "out", "--mode", "smearing"], d);
}

#[test]
fn config_file_sits_between_profile_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "2", "--scans", "2", "--out", "seq"], d);
    std::fs::write(d.join("tight.toml"), "max-voxel = 10\nmode = \"smearing\"\n").unwrap();
    let out = multiscan(&["preprocess", "--input", "seq", "--out", "a", "--config", "tight.toml"], d);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!out.status.success() && err.contains("budget is 10"), "{err}");
    ok(&["preprocess", "--input", "seq", "--out", "b", "--config", "tight.toml", "--max-voxel", "500000"], d);
    std::fs::write(d.join("typo.toml"), "max_voxel = 10\n").unwrap();
    assert!(!multiscan(&["preprocess", "--input", "seq", "--out", "c", "--config", "typo.toml"], d).status.success());
}

#[test]
fn identical_predictions_pass_through_postprocess() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "3", "--scans", "4", "--out", "seq"], d);
    ok(&["preprocess", "--input", "seq", "--out", "out", "--profile", "nuscenes", "--training"], d);
    ok(
        &["postprocess", "--single", "seq/labels", "--multi", "out/seq/labels", "--prov", "out/seq/prov", "--out", "final"],
        d,
    );
    for i in 0..4 {
        let name = format!("{:06}.label", i);
        assert_eq!(std::fs::read(d.join("final").join(&name)).unwrap(), std::fs::read(d.join("seq/labels").join(&name)).unwrap());
    }
}

#[test]
fn single_frame_postprocess_is_the_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "4", "--scans", "1", "--out", "seq"], d);
    ok(&["preprocess", "--input", "seq", "--out", "out", "--profile", "nuscenes", "--training"], d);
    let mock = |pts: &str, labels: &str, out: &str, seed: &str| {
        ok(&["mock-predict", "--points", pts, "--labels", labels, "--out", out, "--seed", seed, "--p-close", "0.5", "--p-medium", "0.5", "--p-far", "0.5"], d);
    };
    mock("seq/velodyne", "seq/labels", "single", "1");
    mock("out/seq/points", "out/seq/labels", "multi", "2");
    ok(&["postprocess", "--single", "single", "--multi", "multi", "--prov", "out/seq/prov", "--out", "final"], d);

    let single = seqio::read_labels(d.join("single/000000.label")).unwrap();
    let multi = seqio::read_labels(d.join("multi/000000.label")).unwrap();
    let (points, prov) = seqio::read_frame_with_provenance(d.join("out/seq/points/000000.bin"), d.join("out/seq/prov/000000.prov")).unwrap();
    let mut expected = vec![0u16; single.len()];
    for ((p, pr), m) in points.iter().zip(&prov).zip(&multi) {
        let i = pr.source_point as usize;
        expected[i] = if radius(p) < 20.0 { single[i] } else { *m };
    }
    assert_ne!(single, multi);
    assert_eq!(seqio::read_labels(d.join("final/000000.label")).unwrap(), expected);
}

#[test]
fn missing_provenance_directory_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = multiscan(&["postprocess", "--single", "s", "--multi", "m", "--prov", "nowhere/prov", "--out", "o"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/prov"));
}

#[test]
fn perfect_predictions_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "5", "--scans", "2", "--out", "seq"], d);
    let report = kv(&ok(&["evaluate", "--gt", "seq/labels", "--points", "seq/velodyne", "--pred", "seq/labels", "--format", "kv"], d));
    for row in ["overall", "close", "medium", "far"] {
        assert_eq!(report[&format!("{row}.miou")], "100.0000", "{row}");
    }
    let table = ok(&["evaluate", "--gt", "seq/labels", "--points", "seq/velodyne", "--pred", "seq/labels"], d);
    let rows: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["overall", "close", "medium", "far"]);
}

#[test]
fn two_class_fixture_matches_hand_computed_iou() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Close: gt [1,1,2,2], pred [1,2,2,2]. Far: gt [2,0], pred [1,1].
    let pts: Vec<Point3> = [5.0, 6.0, 7.0, 8.0, 60.0, 70.0].iter().map(|&x| Point3::new(x, 0.0, 0.0)).collect();
    seqio::write_points(d.join("pts/000000.bin"), &pts).unwrap();
    seqio::write_labels(d.join("gt/000000.label"), &[1, 1, 2, 2, 2, 0]).unwrap();
    seqio::write_labels(d.join("pred/000000.label"), &[1, 2, 2, 2, 1, 1]).unwrap();
    let report = kv(&ok(
        &["evaluate", "--gt", "gt", "--points", "pts", "--pred", "pred", "--class-count", "2", "--format", "kv"],
        d,
    ));
    // Close: class 1 TP1 FP0 FN1 → 50; class 2 TP2 FP1 FN0 → 66.67.
    assert_eq!(report["close.iou.1"], "50.0000");
    assert_eq!(report["close.iou.2"], "66.6667");
    // Far: class 1 TP0 FP1 FN0 → 0; class 2 TP0 FP0 FN1 → 0.
    assert_eq!(report["far.iou.1"], "0.0000");
    assert_eq!(report["far.iou.2"], "0.0000");
    assert_eq!(report["medium.iou.1"], "-");
    // Overall: class 1 TP1 FP1 FN1 → 33.33; class 2 TP2 FP1 FN1 → 50.
    assert_eq!(report["overall.iou.1"], "33.3333");
    assert_eq!(report["overall.iou.2"], "50.0000");
    assert_eq!(report["overall.miou"], "41.6667");
    assert_eq!(report["absent_class_policy"], "excluded");
}

#[test]
fn stats_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cluster: Vec<Point3> = (0..50).map(|i| Point3::new(3.0 + i as f64 * 0.2, 1.0, 0.0)).collect();
    seqio::write_points(d.join("near/000000.bin"), &cluster).unwrap();
    let s = kv(&ok(&["stats", "--points", "near"], d));
    assert_eq!((s["close.share"].as_str(), s["medium.share"].as_str(), s["far.share"].as_str()), ("100.0000", "0.0000", "0.0000"));

    ok(&["synth", "--seed", "6", "--scans", "12", "--out", "seq"], d);
    ok(&["preprocess", "--input", "seq", "--out", "out", "--profile", "nuscenes", "--mode", "smearing"], d);
    let before: f64 = kv(&ok(&["stats", "--points", "seq/velodyne", "--profile", "nuscenes"], d))["far.share"].parse().unwrap();
    let after: f64 = kv(&ok(&["stats", "--points", "out/seq/points", "--profile", "nuscenes"], d))["far.share"].parse().unwrap();
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "7", "--scans", "3", "--out", "a"], d);
    ok(&["synth", "--seed", "7", "--scans", "3", "--out", "b"], d);
    ok(&["synth", "--seed", "8", "--scans", "3", "--out", "c"], d);
    assert_eq!(tree(&d.join("a")), tree(&d.join("b")));
    assert_ne!(tree(&d.join("a")), tree(&d.join("c")));

    // A scene file round-trips through the command.
    let spec = std::fs::read_to_string(d.join("a/scene.toml")).unwrap();
    std::fs::write(d.join("scene.toml"), spec).unwrap();
    ok(&["synth", "--spec", "scene.toml", "--out", "e"], d);
    assert_eq!(tree(&d.join("a")), tree(&d.join("e")));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = multiscan(&["stats", "--points", "missing"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: stats:"));
    let out = multiscan(&["stats", "--points", ".", "--profile", "kitti360"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown profile"));
}
