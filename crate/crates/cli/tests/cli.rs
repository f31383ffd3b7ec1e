//! End-to-end behavior of the `vidflow` binary: subcommand contracts,
//! exit codes, determinism, and run-manifest emission.

use std::path::Path;
use std::process::{Command, Output};

use vidflow_core::data::{write_ppm_file, PpmImage};
use vidflow_core::tensor::{read_ften_file, AnyTensor, SeededRng};

fn vidflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidflow"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn collect_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = vidflow(
            &["synth", "--out", "ds", "--n", "4", "--seed", "7", "--size", "48", "--square",
              "16", "--target-size", "32"],
            d.path(),
        );
        assert!(out.status.success());
    }
    let a = collect_files(&d1.path().join("ds"));
    let b = collect_files(&d2.path().join("ds"));
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(b.iter()) {
        assert_eq!(pa, pb);
        if pa.ends_with("manifest.json") {
            continue; // carries timestamps / absolute-ish root
        }
        assert_eq!(ba, bb, "file {} differs between identical runs", pa);
    }
}

#[test]
fn flow_compute_on_identical_images_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(9);
    let pixels: Vec<u8> = (0..64 * 64 * 3).map(|_| rng.below(256) as u8).collect();
    let img = PpmImage::new(64, 64, pixels);
    write_ppm_file(&dir.path().join("a.ppm"), &img).unwrap();
    write_ppm_file(&dir.path().join("b.ppm"), &img).unwrap();

    let out = vidflow(
        &["flow", "compute", "--a", "a.ppm", "--b", "b.ppm", "--out", "f.ften", "--viz",
          "f.ppm"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let flow = match read_ften_file(&dir.path().join("f.ften")).unwrap() {
        AnyTensor::F32(t) => t,
        _ => panic!("flow dump must be the training profile"),
    };
    assert_eq!(flow.shape(), &[64, 64, 2]);
    let max = flow.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    assert!(max < 1e-3, "max |flow| = {}", max);

    // Visualization and run manifest exist.
    assert!(dir.path().join("f.ppm").is_file());
    assert!(dir.path().join("f.ften.manifest.json").is_file());
}

#[test]
fn eval_report_mean_is_the_mean_of_folds() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidflow(
        &["synth", "--out", "ds", "--n", "9", "--seed", "3", "--size", "48", "--square", "16",
          "--target-size", "32"],
        dir.path(),
    );
    assert!(out.status.success());
    let out = vidflow(
        &["eval", "kfold", "--data", "ds", "--k", "3", "--seed", "1", "--epochs", "1",
          "--batch", "4", "--out", "report.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 3);
    let accs: Vec<f64> = folds.iter().map(|f| f["accuracy"].as_f64().unwrap()).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let reported = report["mean_accuracy"].as_f64().unwrap();
    assert!(
        (mean - reported).abs() < 1e-12,
        "mean_accuracy {} vs recomputed {}",
        reported,
        mean
    );
    // Confusion blocks are 2x2 with per-fold totals matching test sizes.
    for f in folds {
        let cm = f["confusion"].as_array().unwrap();
        assert_eq!(cm.len(), 2);
        let total: u64 = cm
            .iter()
            .flat_map(|row| row.as_array().unwrap().iter())
            .map(|v| v.as_u64().unwrap())
            .sum();
        assert_eq!(total, 3);
    }
    assert!(dir.path().join("report.json.manifest.json").is_file());
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(vidflow(
        &["synth", "--out", "ds", "--n", "4", "--seed", "2", "--size", "48", "--square", "16",
          "--target-size", "16"],
        dir.path()
    )
    .status
    .success());
    let out = vidflow(
        &["train", "--data", "ds", "--out", "m.ckpt", "--epochs", "1", "--batch", "2",
          "--seed", "4", "--lr", "0.01", "--history", "h.csv", "--split", "all"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("m.ckpt").is_file());
    assert!(dir.path().join("m.ckpt.manifest.json").is_file());
    let csv = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,loss,acc,lr,seconds"));
    assert_eq!(lines.count(), 1);

    // The run manifest must carry the fully resolved config and seed.
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("m.ckpt.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["threads"], 1);
    assert!(m["config"]["model"]["conv2d_filters"].is_array());
}

#[test]
fn predict_prints_class_and_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    assert!(vidflow(
        &["synth", "--out", "ds", "--n", "4", "--seed", "2", "--size", "48", "--square", "16",
          "--target-size", "16"],
        dir.path()
    )
    .status
    .success());
    assert!(vidflow(
        &["train", "--data", "ds", "--out", "m.ckpt", "--epochs", "1", "--batch", "2",
          "--seed", "4", "--lr", "0.01", "--split", "all"],
        dir.path()
    )
    .status
    .success());
    let out = vidflow(
        &["predict", "--model", "m.ckpt", "--video", "ds/left/vid_0000"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    let class_line = lines.next().unwrap();
    assert!(class_line == "class 0" || class_line == "class 1", "{}", class_line);
    let probs_line = lines.next().unwrap();
    assert!(probs_line.starts_with("probs "));
    let probs: Vec<f64> = probs_line[6..]
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 2);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-3);
    assert!(
        dir.path().join("m.ckpt.predict.manifest.json").is_file(),
        "predict must emit a run manifest"
    );
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidflow(&["synth", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage") || stderr.contains("--help"), "{}", stderr);
}

#[test]
fn missing_dataset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidflow(
        &["train", "--data", "nope", "--out", "m.ckpt", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn conflicting_schedule_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = vidflow(
        &["train", "--data", "x", "--out", "y", "--lr", "0.1", "--optimal"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn degenerate_flow_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(10);
    let pixels: Vec<u8> = (0..16 * 16 * 3).map(|_| rng.below(256) as u8).collect();
    let img = PpmImage::new(16, 16, pixels);
    write_ppm_file(&dir.path().join("a.ppm"), &img).unwrap();
    // 16x16 with 3 pyramid levels undershoots the default window: a
    // configuration problem, not a data problem.
    let out = vidflow(
        &["flow", "compute", "--a", "a.ppm", "--b", "a.ppm", "--out", "f.ften"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}
