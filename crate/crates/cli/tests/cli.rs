//! Drives the `wssv` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use wssv_core::imaging::{encode_png, ImageTensor};

fn wssv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wssv")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not pure JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

/// Asserts exit status 1 and a single JSON line on stderr; returns its kind.
fn domain_error(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "stderr: {stderr}");
    let line: Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(line["message"].is_string());
    line["error"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_png(dir: &Path, name: &str, side: u32, seed: u8) -> PathBuf {
    let img = ImageTensor::from_fn(side, side, |x, y| [seed, (x * 3) as u8, (y * 5) as u8]).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, encode_png(&img).unwrap()).unwrap();
    path
}

fn toy(dir: &Path, args: &[&str]) -> PathBuf {
    let out = dir.join("bundle");
    let mut full = vec!["toy-bundle", "--out", s(&out)];
    full.extend_from_slice(args);
    assert!(wssv(&full).status.success());
    out
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(wssv(&["predict", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(wssv(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(wssv(&["kfold", "--manifest", "m.json", "--k", "five"]).status.code(), Some(2));
    assert!(wssv(&["--help"]).status.success());
}

#[test]
fn predict_reports_json_and_applies_tie_rule() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = toy(dir.path(), &["--kind", "constant", "--side", "32"]);
    let a = write_png(dir.path(), "a.png", 50, 1);
    let b = write_png(dir.path(), "b.png", 40, 2);
    let v = stdout_json(&wssv(&["predict", "--bundle", s(&bundle), s(&a), s(&b), "--json"]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["score"], 0.5);
        assert_eq!(row["decision"], "wssv");
        assert_eq!(row["model_id"], "toy-constant@1");
    }
    let human = wssv(&["predict", "--bundle", s(&bundle), s(&a)]);
    assert!(human.status.success());
    assert!(String::from_utf8_lossy(&human.stdout).contains("0.5000"));
}

#[test]
fn predict_failures_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = toy(dir.path(), &[]);
    let img = write_png(dir.path(), "a.png", 64, 0);
    assert_eq!(domain_error(&wssv(&["predict", "--bundle", s(&dir.path().join("missing")), s(&img)])), "io");

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert_eq!(domain_error(&wssv(&["predict", "--bundle", s(&bundle), s(&junk)])), "decode");

    std::fs::write(bundle.join("model.onnx.sha256"), format!("{}  model.onnx\n", "0".repeat(64))).unwrap();
    assert_eq!(domain_error(&wssv(&["predict", "--bundle", s(&bundle), s(&img)])), "integrity");
    assert_eq!(domain_error(&wssv(&["predict", "--bundle", s(&bundle), s(&img), "--threshold", "1.5"])), "input");
}

#[test]
fn saliency_writes_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = toy(dir.path(), &["--side", "64"]);
    let img = write_png(dir.path(), "a.png", 96, 200);
    let overlay = dir.path().join("out/overlay.png");
    let v = stdout_json(&wssv(&[
        "saliency", "--bundle", s(&bundle), s(&img), "--out", s(&overlay), "--fill", "gray", "--json",
    ]));
    assert_eq!(v["forward_passes"], 7 * 7 + 1);
    let decoded = wssv_core::imaging::decode_image(&std::fs::read(&overlay).unwrap()).unwrap();
    assert_eq!((decoded.width(), decoded.height()), (64, 64));
    let bad = wssv(&["saliency", "--bundle", s(&bundle), s(&img), "--out", s(&overlay), "--stride", "0"]);
    assert_eq!(domain_error(&bad), "config");
}

#[test]
fn evaluate_matches_hand_tallies() {
    let dir = tempfile::tempdir().unwrap();
    // Fold 0 at threshold 0.5: TP 2, FP 1, FN 0 → F1 0.8, FNR 0; AUC: positives
    // beat negatives in 5 of 6 pairs → 5/6.
    let f0 = dir.path().join("f0.csv");
    std::fs::write(&f0, "sample_id,truth,score\na,wssv,0.9\nb,wssv,0.6\nc,healthy,0.7\nd,healthy,0.1\ne,healthy,0.2\n")
        .unwrap();
    // Fold 1: TP 1, FP 0, FN 1 → F1 2/3, FNR 0.5; both positives outscore the
    // negative → AUC 1.
    let f1 = dir.path().join("f1.csv");
    std::fs::write(&f1, "sample_id,truth,score\nf,wssv,0.8\ng,wssv,0.4\nh,healthy,0.3\n").unwrap();
    let v = stdout_json(&wssv(&["evaluate", "--scores", s(&f0), s(&f1), "--threshold", "0.5", "--json"]));
    let mean_f1 = (0.8 + 2.0 / 3.0) / 2.0;
    let mean_auc = (5.0 / 6.0 + 1.0) / 2.0;
    assert!((v["mean"]["f1"].as_f64().unwrap() - mean_f1).abs() < 1e-12);
    assert!((v["mean"]["auc"].as_f64().unwrap() - mean_auc).abs() < 1e-12);
    assert!((v["mean"]["fnr"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((v["stddev"]["fnr"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(v["per_fold"].as_array().unwrap().len(), 2);

    let table = wssv(&["evaluate", "--scores", s(&f0), s(&f1)]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("±"));

    let healthy_only = dir.path().join("h.csv");
    std::fs::write(&healthy_only, "sample_id,truth,score\nx,healthy,0.2\ny,healthy,0.3\n").unwrap();
    assert_eq!(domain_error(&wssv(&["evaluate", "--scores", s(&healthy_only)])), "undefined_metric");
}

fn label_file(dir: &Path) -> PathBuf {
    let mut labels = serde_json::Map::new();
    for i in 0..411 {
        labels.insert(format!("neg-{i:03}"), "healthy".into());
    }
    for i in 0..38 {
        labels.insert(format!("pos-{i:02}"), "wssv".into());
    }
    let path = dir.join("labels.json");
    std::fs::write(&path, serde_json::to_vec(&labels).unwrap()).unwrap();
    path
}

#[test]
fn kfold_is_deterministic_and_stratified() {
    let dir = tempfile::tempdir().unwrap();
    let m = label_file(dir.path());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        assert!(wssv(&["kfold", "--manifest", s(&m), "--k", "5", "--seed", "7", "--out", s(out)]).status.success());
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let plan: Value = serde_json::from_slice(&bytes).unwrap();
    let assignments = plan["assignments"].as_object().unwrap();
    assert_eq!(assignments.len(), 449);
    for fold in 0..5u64 {
        let pos = assignments.iter().filter(|(id, f)| id.starts_with("pos") && f.as_u64() == Some(fold)).count();
        assert!((7..=8).contains(&pos), "fold {fold}: {pos}");
    }
    let other = stdout_json(&wssv(&["kfold", "--manifest", s(&m), "--seed", "8"]));
    assert_ne!(other, plan);
    assert_eq!(domain_error(&wssv(&["kfold", "--manifest", s(&m), "--k", "40"])), "stratification");
}

#[test]
fn holdout_is_stratified() {
    let dir = tempfile::tempdir().unwrap();
    let m = label_file(dir.path());
    let v = stdout_json(&wssv(&["holdout", "--manifest", s(&m), "--test-fraction", "0.2", "--seed", "3"]));
    let test = v["test_ids"].as_array().unwrap();
    assert_eq!(test.len(), 90);
    assert_eq!(test.iter().filter(|id| id.as_str().unwrap().starts_with("pos")).count(), 8);
    assert_eq!(v["train_ids"].as_array().unwrap().len(), 359);
}

#[test]
fn parity_gate_controls_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.csv");
    let c = dir.path().join("c.csv");
    std::fs::write(&r, "input_id,score\na,0.5\nb,0.7\nc,0.9\n").unwrap();
    std::fs::write(&c, "input_id,score\nc,0.89\na,0.5\nb,0.72\n").unwrap();
    let failed = wssv(&["parity", "--reference", s(&r), "--candidate", s(&c), "--max-tol", "2e-3", "--json"]);
    assert_eq!(domain_error(&failed), "parity");
    let report: Value = serde_json::from_slice(&failed.stdout).unwrap();
    assert_eq!(report["verdict"]["passed"], false);
    assert!((report["stats"]["max"].as_f64().unwrap() - 0.02).abs() < 1e-12);

    let ok = wssv(&["parity", "--reference", s(&r), "--candidate", s(&c), "--max-tol", "0.05", "--mean-tol", "0.02"]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));

    std::fs::write(&c, "input_id,score\na,0.5\n").unwrap();
    assert_eq!(domain_error(&wssv(&["parity", "--reference", s(&r), "--candidate", s(&c)])), "input");
}

#[test]
fn bench_reports_requested_runs() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = toy(dir.path(), &["--kind", "constant", "--side", "32"]);
    let v = stdout_json(&wssv(&["bench", "--bundle", s(&bundle), "--json"]));
    assert_eq!(v["runs"], 5);
    assert_eq!(v["warmup_runs"], 2);
    assert_eq!(v["per_run"].as_array().unwrap().len(), 5);
    let v = stdout_json(&wssv(&["bench", "--bundle", s(&bundle), "--runs", "3", "--warmup", "0", "--json"]));
    assert_eq!(v["per_run"].as_array().unwrap().len(), 3);
    assert_eq!(domain_error(&wssv(&["bench", "--bundle", s(&bundle), "--runs", "0"])), "input");
}

#[test]
fn dataset_workflow_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let r = s(&root);
    let imgs: Vec<PathBuf> = (0..6).map(|i| write_png(dir.path(), &format!("{i}.png"), 16, i * 40)).collect();
    let at = "2024-03-01T08:00:00Z";
    let added = stdout_json(&wssv(&[
        "dataset", "--root", r, "add", s(&imgs[0]), s(&imgs[1]), s(&imgs[2]), "--label", "healthy", "--captured-at", at,
        "--json",
    ]));
    let added2 = stdout_json(&wssv(&[
        "dataset", "--root", r, "add", s(&imgs[3]), s(&imgs[4]), s(&imgs[5]), "--label", "wssv", "--captured-at", at,
        "--json",
    ]));
    let ids: Vec<String> = added
        .as_array()
        .unwrap()
        .iter()
        .chain(added2.as_array().unwrap())
        .map(|a| a["sample"]["id"].as_str().unwrap().to_string())
        .collect();
    let again = stdout_json(&wssv(&["dataset", "--root", r, "add", s(&imgs[0]), "--json"]));
    assert_eq!(again[0]["created"], false);
    assert_eq!(again[0]["sample"]["label"], "healthy");

    // Relabel, then hold out one sample of each class.
    assert!(wssv(&["dataset", "--root", r, "label", &ids[2], "wssv", "--actor", "reviewer"]).status.success());
    assert_eq!(domain_error(&wssv(&["dataset", "--root", r, "label", "nope", "wssv"])), "not_found");
    let plan = dir.path().join("holdout.json");
    std::fs::write(
        &plan,
        serde_json::to_vec(&serde_json::json!({
            "train_ids": [ids[0], ids[1], ids[3], ids[4]],
            "test_ids": [ids[2], ids[5]],
            "test_fraction": 0.33,
            "seed": 0,
        }))
        .unwrap(),
    )
    .unwrap();
    assert!(wssv(&["dataset", "--root", r, "assign", "--plan", s(&plan)]).status.success());

    // Augmentation only touches training samples and is seed-determined.
    let aug = stdout_json(&wssv(&["augment", "--root", r, "--count", "2", "--seed", "5", "--json"]));
    assert_eq!(aug["sources"], 4);
    let copies = aug["added"].as_array().unwrap().len();
    assert!(copies > 0 && copies <= 8);
    let aug_again = stdout_json(&wssv(&["augment", "--root", r, "--count", "2", "--seed", "5", "--json"]));
    assert_eq!(aug_again["added"], aug["added"], "same seed must reproduce the same copies");
    let test = stdout_json(&wssv(&["dataset", "--root", r, "list", "--split", "test", "--json"]));
    assert_eq!(test.as_array().unwrap().len(), 2);
    assert!(test.as_array().unwrap().iter().all(|s| s.get("augmentation_of").is_none()));

    // Export, import elsewhere, export again: identical bytes.
    let (m1, a1) = (dir.path().join("m1.json"), dir.path().join("a1.tar"));
    let export = |root: &str, m: &Path, a: &Path| {
        assert!(wssv(&["dataset", "--root", root, "export", "--manifest", s(m), "--archive", s(a), "--created-at", at])
            .status
            .success());
    };
    export(r, &m1, &a1);
    let other = dir.path().join("other");
    let imported = wssv(&["dataset", "--root", s(&other), "import", "--manifest", s(&m1), "--archive", s(&a1)]);
    assert!(imported.status.success());
    let (m2, a2) = (dir.path().join("m2.json"), dir.path().join("a2.tar"));
    export(s(&other), &m2, &a2);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert_eq!(std::fs::read(&a1).unwrap(), std::fs::read(&a2).unwrap());

    // The exported manifest feeds the splitters directly.
    let folds = stdout_json(&wssv(&["kfold", "--manifest", s(&m1), "--k", "2", "--seed", "1"]));
    assert_eq!(folds["assignments"].as_object().unwrap().len(), 6, "augmented copies are not split");

    std::fs::write(&a1, b"truncated").unwrap();
    let third = dir.path().join("third");
    assert_eq!(
        domain_error(&wssv(&["dataset", "--root", s(&third), "import", "--manifest", s(&m1), "--archive", s(&a1)])),
        "archive"
    );
}
