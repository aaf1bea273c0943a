use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ovtad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovtad"))
        .args(args)
        .env_remove("OVTAD_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ovtad(args);
    assert!(
        out.status.success(),
        "ovtad {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn split_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("syn");
    let mut args = vec!["synth", "--out", s(&out), "--videos", "12", "--classes", "5", "--dim", "8"];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn twelve_random_splits_of_fifty() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("splits");
    ok(&["split", "random", "--fraction", "0.25", "--count", "12", "--out", s(&out)]);
    let files = split_files(&out);
    assert_eq!(files.len(), 12);
    for f in &files {
        let v = json(f);
        assert_eq!(v["eval"].as_array().unwrap().len(), 50);
        assert_eq!(v["train"].as_array().unwrap().len(), 150);
        assert_eq!(v["provenance"]["kind"], "random");
    }
}

#[test]
fn half_held_out_four_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("splits");
    ok(&["split", "random", "--fraction", "0.5", "--seeds", "0,1,2,3", "--out", s(&out)]);
    let files = split_files(&out);
    assert_eq!(files.len(), 4);
    assert!(files.iter().all(|f| json(f)["eval"].as_array().unwrap().len() == 100));
}

#[test]
fn duplicate_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("splits");
    ok(&["split", "random", "--seeds", "5,5", "--out", s(&out)]);
    let files = split_files(&out);
    assert_eq!(files.len(), 2);
    assert_eq!(std::fs::read(&files[0]).unwrap(), std::fs::read(&files[1]).unwrap());
}

#[test]
fn seed_env_var_shifts_default_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("splits");
    let status = Command::new(env!("CARGO_BIN_EXE_ovtad"))
        .args(["split", "random", "--count", "1", "--out", s(&out)])
        .env("OVTAD_SEED", "42")
        .status()
        .unwrap();
    assert!(status.success());
    let files = split_files(&out);
    assert!(files[0].to_str().unwrap().ends_with("seed42.json"), "{files:?}");
}

#[test]
fn smart_split_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("smart");
    ok(&["split", "smart", "--out", s(&out)]);
    let v = json(&out.join("activitynet-smart-75-25.json"));
    assert_eq!(v["eval"].as_array().unwrap().len(), 50);
    assert_eq!(v["provenance"]["kind"], "smart");
}

#[test]
fn smart_split_validation_against_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let split = dir.path().join("split.json");
    std::fs::write(
        &split,
        r#"{"name":"tiny","train":["a1","b1"],"eval":["a2","b2"],"provenance":{"kind":"smart","taxonomy_hash":null}}"#,
    )
    .unwrap();
    let tax = dir.path().join("tax.json");
    std::fs::write(
        &tax,
        r#"[{"nodeId":0,"nodeName":"root","parentId":null},
            {"nodeId":1,"nodeName":"A","parentId":0},{"nodeId":2,"nodeName":"B","parentId":0},
            {"nodeId":3,"nodeName":"a1","parentId":1},{"nodeId":4,"nodeName":"a2","parentId":1},
            {"nodeId":5,"nodeName":"b1","parentId":2},{"nodeId":6,"nodeName":"b2","parentId":2}]"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["split", "smart", "--split", s(&split), "--taxonomy", s(&tax), "--out", s(&out)]);
    assert_eq!(json(&out.join("validation.json"))["passed"], true);
}

#[test]
fn classify_gt_is_perfect_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let run = |name: &str| {
        let report = dir.path().join(name);
        ok(&[
            "classify-gt",
            "--dataset", s(&syn.join("dataset.json")),
            "--features", s(&syn.join("features")),
            "--texts", s(&syn.join("texts.json")),
            "--out", s(&report),
        ]);
        report
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v = json(&a);
    assert_eq!(v["accuracy"]["1"], 1.0);
    assert_eq!(v["coverage"], 1.0);
}

#[test]
fn top5_over_five_class_split_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &["--sigma", "2.0"]);
    let split = dir.path().join("split.json");
    std::fs::write(
        &split,
        r#"{"name":"five","train":[],"eval":["class_000","class_001","class_002","class_003","class_004"],"provenance":{"kind":"explicit","file":"split.json"}}"#,
    )
    .unwrap();
    let report = dir.path().join("r.json");
    ok(&[
        "classify-gt",
        "--dataset", s(&syn.join("dataset.json")),
        "--features", s(&syn.join("features")),
        "--texts", s(&syn.join("texts.json")),
        "--split", s(&split),
        "--k", "1,5",
        "--out", s(&report),
    ]);
    assert_eq!(json(&report)["accuracy"]["5"], 1.0);
}

#[test]
fn missing_features_exit_nonzero_but_report_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    std::fs::remove_file(syn.join("features").join("synth_00.ovtf")).unwrap();
    let report = dir.path().join("r.json");
    let out = ovtad(&[
        "classify-gt",
        "--dataset", s(&syn.join("dataset.json")),
        "--features", s(&syn.join("features")),
        "--texts", s(&syn.join("texts.json")),
        "--out", s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&report);
    assert!(v["coverage"].as_f64().unwrap() < 1.0);
    assert_eq!(v["missing_videos"][0], "synth_00");
}

#[test]
fn detect_then_eval_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let dets = dir.path().join("dets.jsonl");
    ok(&["detect", "--dataset", s(&syn.join("dataset.json")), "--heads", s(&syn.join("heads")), "--out", s(&dets)]);
    let report = dir.path().join("eval.json");
    let table = ok(&[
        "eval", "--dataset", s(&syn.join("dataset.json")), "--predictions", s(&dets), "--agnostic", "--out", s(&report),
    ]);
    assert_eq!(table.matches("mAP@0.").count(), 10, "{table}");
    assert_eq!(json(&report)["map_avg"], 1.0);
}

#[test]
fn detect_top_k_one() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let dets = dir.path().join("dets.jsonl");
    ok(&[
        "detect", "--dataset", s(&syn.join("dataset.json")), "--heads", s(&syn.join("heads")), "--top-k", "1", "--out", s(&dets),
    ]);
    let text = std::fs::read_to_string(&dets).unwrap();
    let mut per_video = std::collections::BTreeMap::<String, usize>::new();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        *per_video.entry(v["video_id"].as_str().unwrap().to_string()).or_default() += 1;
    }
    assert!(per_video.values().all(|&n| n <= 1));
}

#[test]
fn detr_proposals_above_threshold_survive() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let detr = dir.path().join("detr");
    std::fs::create_dir_all(&detr).unwrap();
    let ds = json(&syn.join("dataset.json"));
    let ids: Vec<String> = ds["database"].as_object().unwrap().keys().cloned().collect();
    for id in &ids {
        std::fs::write(
            detr.join(format!("{id}.detr.json")),
            r#"[{"center":0.1,"width":0.1,"score":0.9},{"center":0.5,"width":0.1,"score":0.4},{"center":0.8,"width":0.1,"score":0.1}]"#,
        )
        .unwrap();
    }
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"detr_score_threshold": 0.3}"#).unwrap();
    let dets = dir.path().join("dets.jsonl");
    ok(&["--config", s(&config), "detect", "--dataset", s(&syn.join("dataset.json")), "--detr", s(&detr), "--out", s(&dets)]);
    let lines = std::fs::read_to_string(&dets).unwrap().lines().count();
    assert_eq!(lines, 2 * ids.len());
}

#[test]
fn broken_head_file_is_a_per_video_error() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    std::fs::write(syn.join("heads").join("synth_01.ovth"), b"OVTH garbage").unwrap();
    let dets = dir.path().join("dets.jsonl");
    let out = ovtad(&["detect", "--dataset", s(&syn.join("dataset.json")), "--heads", s(&syn.join("heads")), "--out", s(&dets)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth_01"));
    assert!(dets.exists());
}

#[test]
fn eval_empty_predictions_is_zero_not_error() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let report = dir.path().join("r.json");
    ok(&["eval", "--dataset", s(&syn.join("dataset.json")), "--predictions", s(&empty), "--preset", "thumos", "--out", s(&report)]);
    let v = json(&report);
    assert_eq!(v["map_avg"], 0.0);
    assert_eq!(v["iou_thresholds"].as_array().unwrap().len(), 5);
}

#[test]
fn eval_rejects_unknown_labels() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let preds = dir.path().join("p.jsonl");
    std::fs::write(&preds, r#"{"video_id":"synth_00","start":0,"end":3,"score":1,"label":"nope"}"#).unwrap();
    let out = ovtad(&["eval", "--dataset", s(&syn.join("dataset.json")), "--predictions", s(&preds)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_splits_have_zero_sem() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &["--sigma", "0.8", "--jitter", "0.7"]);
    let splits = dir.path().join("splits");
    ok(&["split", "random", "--vocabulary", s(&syn.join("vocabulary.txt")), "--fraction", "0.4", "--seeds", "3,3", "--out", s(&splits)]);
    let files = split_files(&splits);
    let e2e = dir.path().join("e2e");
    ok(&[
        "e2e",
        "--dataset", s(&syn.join("dataset.json")),
        "--features", s(&syn.join("features")),
        "--texts", s(&syn.join("texts.json")),
        "--segments", s(&syn.join("oracle_detections.jsonl")),
        "--split", s(&files[0]),
        "--split", s(&files[1]),
        "--out", s(&e2e),
    ]);
    let report = json(&e2e.join("report.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
    assert_eq!(report["aggregate"]["map_avg"]["sem"], 0.0);

    let labeled = e2e.join("labeled-random-60-40-seed3.jsonl");
    let out = dir.path().join("multi.json");
    ok(&[
        "eval", "--dataset", s(&syn.join("dataset.json")),
        "--predictions", s(&labeled),
        "--split", s(&files[0]), "--split", s(&files[1]), "--multi-split",
        "--out", s(&out),
    ]);
    let v = json(&out);
    assert_eq!(v["aggregate"]["splits"], 2);
    assert_eq!(v["aggregate"]["map_avg"]["sem"], 0.0);
    assert_eq!(v["aggregate"]["map_avg"]["mean"], report["runs"][0]["report"]["map_avg"]);
}

#[test]
fn e2e_oracle_chain_is_perfect_with_detector_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), &[]);
    let out = dir.path().join("e2e");
    ok(&[
        "--jobs", "2",
        "e2e",
        "--dataset", s(&syn.join("dataset.json")),
        "--features", s(&syn.join("features")),
        "--det-features", s(&syn.join("features")),
        "--det-features", s(&syn.join("features")),
        "--texts", s(&syn.join("texts.json")),
        "--heads", s(&syn.join("heads")),
        "--out", s(&out),
    ]);
    let report = json(&out.join("report.json"));
    assert_eq!(report["runs"][0]["report"]["map_avg"], 1.0);
    assert_eq!(report["detector_feature_dim"], 16);
    assert!(out.join("labeled.jsonl").exists());
}
