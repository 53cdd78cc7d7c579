use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pll(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pll"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("run pll")
}

fn ok(output: Output) -> String {
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(
        output.status.success(),
        "stdout: {stdout}\nstderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    stdout
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a small generator spec and returns its path.
fn small_spec(dir: &Path) -> std::path::PathBuf {
    let mut spec = read_json_default();
    spec["samples"] = 120.into();
    spec["patch_size"] = 8.into();
    let path = dir.join("spec.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

fn read_json_default() -> Value {
    serde_json::to_value(pll_core::SyntheticSpec::desk()).unwrap()
}

#[test]
fn encode_writes_label_csv() {
    let dir = tempfile::tempdir().unwrap();
    let polygons = dir.path().join("polygons.json");
    std::fs::write(
        &polygons,
        r#"[{"polygon_id": 7, "SA": 86, "CA": 79, "SB": 83, "CB": 24},
            {"polygon_id": 8, "ice_free": true}]"#,
    )
    .unwrap();
    ok(pll(dir.path(), &["encode", polygons.to_str().unwrap()]));
    let csv = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("polygon_id,one_hot_NI,"));
    assert_eq!(lines[1], "7,0,0,0,1,0,0,0,0,1,1,0,0,0,0,0.25,0.75,0,0");
    assert_eq!(lines[2], "8,0,0,0,0,0,1,0,0,0,0,0,1,0,0,0,0,0,1");
}

#[test]
fn encode_rejects_bad_codes() {
    let dir = tempfile::tempdir().unwrap();
    let polygons = dir.path().join("polygons.json");
    std::fs::write(&polygons, r#"[{"polygon_id": 1, "SA": 99, "CA": 79}]"#).unwrap();
    let output = pll(dir.path(), &["encode", polygons.to_str().unwrap()]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("99"));
}

#[test]
fn generate_train_evaluate_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let spec = small_spec(root);
    ok(pll(&data, &["--seed", "3", "gen-data", "--spec", spec.to_str().unwrap()]));
    let manifest = read_json(&data.join("manifest.json"));
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 120);
    assert_eq!(manifest["split"]["train"].as_array().unwrap().len(), 97);

    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"name": "smoke", "encoding": "confidence_partial",
            "loss": {"type": "focal", "alpha": 0.25, "gamma": 1.0},
            "class_weights_enabled": true, "train": {"epochs": 2, "batch_size": 16},
            "repetitions": 1}"#,
    )
    .unwrap();
    let model = root.join("model");
    ok(pll(
        &model,
        &["train", "--config", config.to_str().unwrap(), "--data", data.to_str().unwrap()],
    ));
    assert_eq!(read_json(&model.join("history.json")).as_array().unwrap().len(), 2);
    let checkpoint = model.join("model.tnet");
    assert_eq!(&std::fs::read(&checkpoint).unwrap()[..4], b"TNET");

    let eval = root.join("eval");
    let table = ok(pll(
        &eval,
        &["evaluate", "--checkpoint", checkpoint.to_str().unwrap(), "--data", data.to_str().unwrap()],
    ));
    assert!(table.contains("accuracy"));
    let metrics = read_json(&eval.join("metrics.json"));
    let test_acc = read_json(&model.join("train_report.json"))["repetition"]["test"]["accuracy"].clone();
    assert_eq!(metrics["accuracy"], test_acc);
    let cm = std::fs::read_to_string(eval.join("confusion.csv")).unwrap();
    assert!(cm.starts_with("true\\pred,NI,N,YI,FYI,OI,W"));

    let grid = root.join("grid.json");
    std::fs::write(
        &grid,
        r#"{"groups": [{"loss": "cce", "encodings": ["one_hot"], "class_weights": [false]},
                       {"loss": "focal", "encodings": ["one_hot"], "alphas": [0.25, 0.5], "gammas": [1]}],
            "train": {"epochs": 1, "batch_size": 32}}"#,
    )
    .unwrap();
    let sweep = |out: &Path, threads: &str| {
        ok(pll(
            out,
            &["--parallelism", threads, "sweep", "--grid", grid.to_str().unwrap(), "--data", data.to_str().unwrap()],
        ))
    };
    let (s1, s2) = (root.join("sweep1"), root.join("sweep2"));
    sweep(&s1, "1");
    sweep(&s2, "2");
    let summary = std::fs::read_to_string(s1.join("summary.csv")).unwrap();
    assert_eq!(summary, std::fs::read_to_string(s2.join("summary.csv")).unwrap());
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("name,encoding,loss,alpha,gamma,class_weights,repetitions,train_accuracy"));
    assert_eq!(std::fs::read_dir(s1.join("reports")).unwrap().count(), 3);
    assert!(s1.join("best.json").exists());
    assert!(s1.join("sensitivity/one_hot-weighted_f1.csv").exists());
    assert!(s1.join("sensitivity/curves/focal-a0.5-g1-one_hot.csv").exists());
}

#[test]
fn loss_eval_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(pll(
        dir.path(),
        &["loss-eval", "--logits", "0.6931471805599453,0", "--labels", "0.25,0.75"],
    ));
    let v: Value = serde_json::from_str(&out).unwrap();
    let p: Vec<f64> = serde_json::from_value(v["probabilities"].clone()).unwrap();
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
    let expected = -(0.25 * (2.0f64 / 3.0).ln() + 0.75 * (1.0f64 / 3.0).ln());
    assert!((v["loss"].as_f64().unwrap() - expected).abs() < 1e-12);

    let out = ok(pll(
        dir.path(),
        &["loss-eval", "--logits", "1,-1,0,2,0,0", "--egg", r#"{"SA":86,"CA":79,"SB":83,"CB":24}"#,
          "--alpha", "0.25", "--gamma", "1"],
    ));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["labels"], serde_json::json!([0.0, 0.0, 0.25, 0.75, 0.0, 0.0]));
    assert_eq!(v["gradient"].as_array().unwrap().len(), 6);

    let bad = pll(dir.path(), &["loss-eval", "--logits", "1,2", "--labels", "1"]);
    assert!(!bad.status.success());
}

#[test]
fn ingest_scene_files() {
    use pll_core::data::{SceneAnnotations, SceneRaster};
    use pll_core::label_codec::{EggCode, PolygonRecord};
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (100, 100);
    SceneRaster {
        width: w,
        height: h,
        pixel_spacing_m: 40.0,
        data: vec![0.5; 3 * w * h],
    }
    .save(&dir.path().join("scene.json"))
    .unwrap();
    SceneAnnotations {
        width: w,
        height: h,
        polygon_ids: vec![1; w * h],
        border_distance: (0..w * h).map(|i| if i % w < 50 { 1000.0 } else { 3000.0 }).collect(),
        polygons: vec![PolygonRecord {
            polygon_id: 1,
            egg: EggCode::single(95, Some(99)),
        }],
    }
    .save(&dir.path().join("labels.json"))
    .unwrap();
    let out = dir.path().join("ds");
    let msg = ok(pll(
        &out,
        &[
            "ingest",
            "--raster",
            dir.path().join("scene.json").to_str().unwrap(),
            "--annotations",
            dir.path().join("labels.json").to_str().unwrap(),
            "--patch",
            "50",
        ],
    ));
    assert!(msg.starts_with("4 tiles, 2 kept"), "{msg}");
    assert_eq!(read_json(&out.join("manifest.json"))["samples"].as_array().unwrap().len(), 2);
}
