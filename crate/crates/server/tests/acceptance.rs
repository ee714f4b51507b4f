//! Acceptance suite. Each criterion runs in isolation and prints exactly one
//! `PASS`/`FAIL` line; the process exits non-zero if any criterion fails.
//!
//! Reference values are produced inside this file by independent oracles
//! (pairwise enumeration, direct tallies, hand-evaluated graphs) rather than
//! by the functions under test.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wssv_core::dataset::{DatasetError, DatasetStore, NewSample, SplitPlan};
use wssv_core::eval::{auc_roc, confusion, f1_score, fnr, stratified_holdout, stratified_kfold, LabeledScore, Truth};
use wssv_core::explain::{occlude, occlusion_saliency, patch_offsets, OcclusionConfig, OcclusionFill};
use wssv_core::imaging::{
    augment, decode_image, encode_png, expand_training_set, preprocess, AugmentSpec, ImageTensor, ImagingError,
    ModelInput, TrainingImage,
};
use wssv_core::inference::{load_model, sigmoid, Decision, InferenceError, ModelHandle, Scorer};
use wssv_core::qa::{benchmark_scorer, compare_outputs, gate_parity, BenchmarkConfig, ParityGate, ParityStats, ScriptedClock};
use wssv_core::{toy, Label, SampleSource, Split};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn noise(side: u32, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..side * side * 3).map(|_| rng.random::<u8>()).collect();
    ImageTensor::new(side, side, pixels).unwrap()
}

fn random_scores(rng: &mut ChaCha8Rng, ties: bool) -> Vec<LabeledScore> {
    let n = rng.random_range(2..=50);
    (0..n)
        .map(|i| {
            let truth = if i == 0 || (i > 1 && rng.random_bool(0.35)) { Truth::Wssv } else { Truth::Healthy };
            let score = if ties { f64::from(rng.random_range(0..=8u8)) / 8.0 } else { rng.random::<f64>() };
            LabeledScore::new(format!("x{i}"), truth, score).unwrap()
        })
        .collect()
}

fn auc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let instances = 1000;
    for case in 0..instances {
        let items = random_scores(&mut rng, case % 2 == 0);
        let (mut wins, mut pairs) = (0.0, 0.0);
        for p in items.iter().filter(|i| i.truth == Truth::Wssv) {
            for q in items.iter().filter(|i| i.truth == Truth::Healthy) {
                pairs += 1.0;
                wins += if p.score > q.score { 1.0 } else if p.score == q.score { 0.5 } else { 0.0 };
            }
        }
        let diff = (auc_roc(&items).map_err(|e| e.to_string())? - wins / pairs).abs();
        worst = worst.max(diff);
        ensure!(diff <= 1e-9, "case {case}: difference {diff:e}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{instances} instances, max |diff| {worst:e}, {elapsed:.2?}"))
}

fn f1_fnr_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 1000;
    for case in 0..instances {
        let items = random_scores(&mut rng, case % 2 == 1);
        let t = f64::from(rng.random_range(0..=8u8)) / 8.0;
        let tally = |truth: Truth, positive: bool| {
            items.iter().filter(|i| i.truth == truth && (i.score >= t) == positive).count() as u64
        };
        let (tp, fp, fn_) = (tally(Truth::Wssv, true), tally(Truth::Healthy, true), tally(Truth::Wssv, false));
        let cm = confusion(&items, t).map_err(|e| e.to_string())?;
        let expected_f1 = if 2 * tp + fp + fn_ == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        ensure!(f1_score(&cm).value == expected_f1, "case {case}: F1 {} vs {expected_f1}", f1_score(&cm).value);
        let expected_fnr = fn_ as f64 / (fn_ + tp) as f64;
        let got = fnr(&cm).map_err(|e| e.to_string())?;
        ensure!(got == expected_fnr, "case {case}: FNR {got} vs {expected_fnr}");
    }
    Ok(format!("{instances} instances, exact equality"))
}

fn stratification() -> Outcome {
    let labels: BTreeMap<String, &str> = (0..411)
        .map(|i| (format!("neg-{i:03}"), "healthy"))
        .chain((0..38).map(|i| (format!("pos-{i:02}"), "wssv")))
        .collect();
    for seed in [0u64, 7, 42, 1234, u64::MAX] {
        let plan = stratified_kfold(&labels, 5, seed).map_err(|e| e.to_string())?;
        ensure!(plan == stratified_kfold(&labels, 5, seed).unwrap(), "seed {seed}: not deterministic");
        ensure!(plan.assignments.len() == 449, "seed {seed}: {} ids assigned", plan.assignments.len());
        let mut union = BTreeSet::new();
        for fold in 0..5 {
            let members = plan.members(fold);
            let pos = members.iter().filter(|id| labels[**id] == "wssv").count();
            let neg = members.len() - pos;
            ensure!((7..=8).contains(&pos), "seed {seed} fold {fold}: {pos} positives");
            ensure!((82..=83).contains(&neg), "seed {seed} fold {fold}: {neg} negatives");
            for id in members {
                ensure!(union.insert(id.to_string()), "seed {seed}: `{id}` in two folds");
            }
        }
        ensure!(union.len() == labels.len(), "seed {seed}: partition incomplete");
    }
    let split = stratified_holdout(&labels, 0.2, 11).map_err(|e| e.to_string())?;
    ensure!(split == stratified_holdout(&labels, 0.2, 11).unwrap(), "holdout not deterministic");
    let test_pos = split.test_ids.iter().filter(|id| labels[id.as_str()] == "wssv").count();
    let test_neg = split.test_ids.len() - test_pos;
    ensure!((test_neg, test_pos) == (82, 8), "holdout test set {test_neg}/{test_pos}");
    ensure!(split.train_ids.is_disjoint(&split.test_ids), "train and test overlap");
    Ok("5 folds x 5 seeds within {7,8}/{82,83}; holdout 90 = 82 + 8".into())
}

fn parity() -> Outcome {
    let s = compare_outputs(&[0.5, 0.7, 0.9], &[0.5, 0.72, 0.89]).map_err(|e| e.to_string())?;
    // Absolute differences {0, 0.02, 0.01}: mean 0.01, population variance
    // ((0.01)^2 + (0.01)^2 + 0) / 3 = 2e-4 / 3.
    let stddev = (2e-4f64 / 3.0).sqrt();
    ensure!((s.mean - 0.01).abs() < 1e-12, "mean {}", s.mean);
    ensure!(s.min == 0.0, "min {}", s.min);
    ensure!((s.max - 0.02).abs() < 1e-12, "max {}", s.max);
    ensure!((s.stddev - stddev).abs() < 1e-12, "stddev {} vs {stddev}", s.stddev);
    ensure!((s.stddev - 0.008_164_965_8).abs() < 1e-10, "stddev {}", s.stddev);
    let gate = ParityGate { max_tolerance: 2e-3, mean_tolerance: 1e-4 };
    let fixture = |mean, max| ParityStats { mean, stddev: 0.0, min: 0.0, max, count: 100 };
    let good = gate_parity(&fixture(3.63e-5, 1.65e-3), &gate).map_err(|e| e.to_string())?;
    ensure!(good.passed, "reported conversion statistics rejected: {:?}", good.violations);
    let bad = gate_parity(&fixture(3.63e-5, 2.5e-3), &gate).map_err(|e| e.to_string())?;
    ensure!(!bad.passed && bad.violations.len() == 1 && bad.violations[0].bound == "max", "max 2.5e-3 not rejected: {bad:?}");
    Ok(format!("stddev {:.16}; gate passes 1.65e-3, rejects 2.5e-3", s.stddev))
}

fn toy_end_to_end() -> Outcome {
    ensure!(sigmoid(0.0).unwrap() == 0.5, "sigmoid(0) != 0.5");
    let bundle = toy::patch_bundle(64);
    let handle = load_model(&bundle).map_err(|e| e.to_string())?;
    let cfg = bundle.metadata.preprocess_config();
    let inputs: Vec<ModelInput> = (0..16).map(|s| preprocess(&noise(96, s), &cfg).unwrap()).collect();
    let first = handle.predict(&inputs[0]).map_err(|e| e.to_string())?.score;
    for _ in 0..100 {
        ensure!(handle.predict(&inputs[0]).unwrap().score.to_bits() == first.to_bits(), "repeat differs");
    }
    let batch = handle.predict_batch(&inputs).map_err(|e| e.to_string())?;
    for (i, (input, b)) in inputs.iter().zip(&batch).enumerate() {
        ensure!(handle.predict(input).unwrap().score.to_bits() == b.score.to_bits(), "batch item {i} differs");
    }
    // Hand evaluation of the same graph.
    let logit = toy::patch_logit_reference(&inputs[0], toy::PATCH_SIDE, toy::PATCH_WEIGHT.into(), toy::PATCH_BIAS.into());
    ensure!((first - sigmoid(logit).unwrap()).abs() < 1e-5, "score {first} vs hand evaluation");
    let tie = load_model(&toy::constant_bundle(32, 0.0)).map_err(|e| e.to_string())?;
    let p = tie.predict(&preprocess(&noise(32, 0), &tie.metadata().preprocess_config()).unwrap()).unwrap();
    ensure!(p.score == 0.5 && p.decision == Decision::Wssv, "tie gave {} / {:?}", p.score, p.decision);
    Ok("100 repeats bit-identical, batch of 16 equal, tie -> wssv".into())
}

struct Counting<'a>(&'a ModelHandle, AtomicUsize);

impl Scorer for Counting<'_> {
    fn input_side(&self) -> u32 {
        self.0.input_side()
    }
    fn score(&self, input: &ModelInput) -> Result<f64, InferenceError> {
        self.1.fetch_add(1, Ordering::SeqCst);
        self.0.score(input)
    }
}

fn saliency() -> Outcome {
    let constant = load_model(&toy::constant_bundle(64, 2.0)).map_err(|e| e.to_string())?;
    let input = preprocess(&noise(64, 3), &constant.metadata().preprocess_config()).unwrap();
    let map = occlusion_saliency(&constant, &input, &OcclusionConfig::default()).map_err(|e| e.to_string())?;
    ensure!(map.is_all_zero(), "constant model gave a non-zero map");

    let handle = load_model(&toy::patch_bundle(64)).map_err(|e| e.to_string())?;
    let bright = ImageTensor::from_fn(64, 64, |x, y| {
        let v = 180 + ((x * 7 + y * 13) % 70) as u8;
        [v, v, v]
    })
    .unwrap();
    let input = preprocess(&bright, &handle.metadata().preprocess_config()).unwrap();
    let cfg = OcclusionConfig { patch_side: 16, stride: 8, fill: OcclusionFill::Gray128, ..Default::default() };
    let counting = Counting(&handle, AtomicUsize::new(0));
    let map = occlusion_saliency(&counting, &input, &cfg).map_err(|e| e.to_string())?;
    let offsets = patch_offsets(64, 16, 8);
    let patches = offsets.len() * offsets.len();
    let calls = counting.1.load(Ordering::SeqCst);
    ensure!(calls == patches + 1, "{calls} forward passes for {patches} patches");

    let (ax, ay) = map.argmax();
    ensure!(ax < toy::PATCH_SIDE && ay < toy::PATCH_SIDE, "argmax ({ax}, {ay}) outside the sensitive region");
    // Brute force: the patch with the largest score drop must cover the argmax.
    let base = handle.score(&input).unwrap();
    let fill = [128.0f32 * (1.0 / 255.0); 3];
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for &y in &offsets {
        for &x in &offsets {
            let drop = base - handle.score(&occlude(&input, x, y, 16, fill)).unwrap();
            if drop > best.0 {
                best = (drop, x, y);
            }
        }
    }
    let (_, bx, by) = best;
    ensure!((bx..bx + 16).contains(&ax) && (by..by + 16).contains(&ay), "brute-force best patch ({bx}, {by}) misses argmax ({ax}, {ay})");
    Ok(format!("{patches} patches + 1 baseline; argmax ({ax}, {ay})"))
}

fn latency() -> Outcome {
    struct Fixed(AtomicUsize);
    impl Scorer for Fixed {
        fn input_side(&self) -> u32 {
            8
        }
        fn score(&self, _: &ModelInput) -> Result<f64, InferenceError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(0.5)
        }
    }
    let cfg = BenchmarkConfig::default();
    ensure!(cfg.runs == 5 && cfg.warmup_runs == 2, "defaults {} / {}", cfg.runs, cfg.warmup_runs);
    let scorer = Fixed(AtomicUsize::new(0));
    let clock = ScriptedClock::from_durations(&[10.0, 12.0, 11.0, 9.0, 13.0]);
    let input = preprocess(&noise(8, 0), &wssv_core::imaging::PreprocessConfig { target_side: 8, ..Default::default() }).unwrap();
    let stats = benchmark_scorer(&scorer, &input, &cfg, &clock).map_err(|e| e.to_string())?;
    ensure!(stats.mean == 11.0, "mean {}", stats.mean);
    ensure!(stats.per_run == [10.0, 12.0, 11.0, 9.0, 13.0], "per-run {:?}", stats.per_run);
    let calls = scorer.0.load(Ordering::SeqCst);
    ensure!(calls == 7, "{calls} forward passes, expected 2 warm-up + 5 timed");

    // The real harness reserves the handle.
    let handle = load_model(&toy::constant_bundle(32, 0.0)).unwrap();
    let input = preprocess(&noise(32, 0), &handle.metadata().preprocess_config()).unwrap();
    let clock = ScriptedClock::from_durations(&[1.0; 5]);
    let real = wssv_core::qa::benchmark_latency(&handle, &input, &cfg, &clock).map_err(|e| e.to_string())?;
    ensure!(real.runs == 5 && real.per_run.len() == 5, "real benchmark recorded {} runs", real.per_run.len());
    Ok("mean 11.0 over 5 timed runs after 2 warm-ups".into())
}

fn augmentation() -> Outcome {
    let img = noise(24, 5);
    let apply = |i: &ImageTensor, s: AugmentSpec| augment(i, &s).unwrap();
    let h = AugmentSpec { flip_horizontal: true, ..Default::default() };
    let v = AugmentSpec { flip_vertical: true, ..Default::default() };
    let r90 = AugmentSpec { rotation_degrees: 90.0, ..Default::default() };
    ensure!(apply(&apply(&img, h), h).pixels() == img.pixels(), "double horizontal flip");
    ensure!(apply(&apply(&img, v), v).pixels() == img.pixels(), "double vertical flip");
    let mut r = img.clone();
    for _ in 0..4 {
        r = apply(&r, r90);
    }
    ensure!(r.pixels() == img.pixels(), "four quarter turns");
    ensure!(apply(&img, AugmentSpec::default()).pixels() == img.pixels(), "identity spec");
    ensure!(encode_png(&apply(&img, AugmentSpec::default())).unwrap() == encode_png(&img).unwrap(), "identity PNG bytes");

    // Leakage guard, at augmentation time...
    let dir = tempfile::tempdir().unwrap();
    let store = DatasetStore::open(dir.path()).unwrap();
    let meta = || NewSample::new(SampleSource::Import, chrono::DateTime::UNIX_EPOCH);
    let a = store.add_sample(&encode_png(&noise(16, 1)).unwrap(), meta()).unwrap();
    let b = store.add_sample(&encode_png(&noise(16, 2)).unwrap(), meta()).unwrap();
    store.set_label(&a.id, Label::Wssv, "t").unwrap();
    store.set_label(&b.id, Label::Healthy, "t").unwrap();
    let holdout = |train: &str, test: &str| {
        SplitPlan::Holdout(wssv_core::eval::SplitAssignment {
            train_ids: [train.to_string()].into(),
            test_ids: [test.to_string()].into(),
            test_fraction: 0.5,
            seed: 0,
        })
    };
    store.assign_splits(&holdout(&a.id, &b.id)).unwrap();
    let load = |id: &str| TrainingImage { record: store.get(id).unwrap(), image: decode_image(&store.blob(id).unwrap()).unwrap() };
    let refused = expand_training_set(&[load(&b.id)], &[h]);
    ensure!(matches!(refused, Err(ImagingError::Leakage { .. })), "test-split sample was augmented");
    // ...and at write time.
    let copies = expand_training_set(&[load(&a.id)], &[h]).unwrap();
    let stored = store.add_augmented(&copies[1..]).unwrap();
    let copy_id = stored[0].id.clone();
    let direct = store.assign_splits(&holdout(&b.id, &copy_id));
    ensure!(matches!(direct, Err(DatasetError::Validation { .. })), "plan placed a copy in test: {direct:?}");
    store.assign_splits(&holdout(&b.id, &a.id)).unwrap();
    let copy = store.get(&copy_id).unwrap();
    ensure!(copy.split == Split::Unassigned, "copy followed its source into {}", copy.split);
    let leaked = store.list(&Default::default()).into_iter().filter(|s| s.is_augmented() && s.split.is_held_out()).count();
    ensure!(leaked == 0, "{leaked} augmented samples in held-out splits");
    Ok("flip/rotation/identity byte-exact; held-out splits refuse augmented copies".into())
}

async fn service_round_trips() -> Outcome {
    // Upload image -> predict -> submit report -> fetch.
    let s = server();
    let up = s.upload_bundle(&toy::patch_bundle(64)).await;
    ensure!(up.status == StatusCode::CREATED, "bundle upload {}", up.status);
    let id = up.json()["id"].as_str().unwrap().to_string();
    ensure!(s.activate(&id).await.status == StatusCode::OK, "activation failed");
    let pred = s.predict(&png(96, 7), true).await;
    ensure!(pred.status == StatusCode::OK, "predict {}", pred.status);
    let pv = pred.json();
    ensure!(pv["overlay"]["url"].is_string(), "no overlay reference");
    let sample_id = pv["sample_id"].as_str().unwrap();
    let draft = json!({
        "location": {"latitude": 14.6, "longitude": 121.0, "source": "manual"},
        "image_ids": [sample_id],
        "water": {"ph": 7.9, "dissolved_oxygen": 5.2},
        "submitter": "acceptance",
    });
    let created = s.post_json("/api/v1/reports", &draft).await;
    ensure!(created.status == StatusCode::CREATED, "report {}", created.status);
    let rid = created.json()["id"].as_str().unwrap().to_string();
    let fetched = s.get(&format!("/api/v1/reports/{rid}")).await;
    ensure!(fetched.body == created.body, "fetched report differs from the stored one");
    ensure!(fetched.json()["images"][0]["prediction"] == pv["prediction"], "report prediction differs from predict response");

    // Dataset export -> import -> export, byte for byte.
    for i in 0..3u8 {
        s.post_multipart("/api/v1/dataset/samples", &[Part::File("image", &png(16, i)), Part::Text("label", "healthy")]).await;
    }
    let at = "2024-01-01T00%3A00%3A00Z";
    let manifest = s.get(&format!("/api/v1/dataset/export?created_at={at}")).await.body;
    let archive = s.get("/api/v1/dataset/export/archive").await.body;
    let t = server();
    let imp = t.post_multipart("/api/v1/dataset/import", &[Part::File("manifest", &manifest), Part::File("archive", &archive)]).await;
    ensure!(imp.status == StatusCode::OK, "import {}", imp.status);
    ensure!(t.get(&format!("/api/v1/dataset/export?created_at={at}")).await.body == manifest, "manifest bytes differ");
    ensure!(t.get("/api/v1/dataset/export/archive").await.body == archive, "archive bytes differ");

    // Exactly one active model under interleaved uploads and activations.
    let s = Arc::new(server());
    let mut tasks = Vec::new();
    for i in 0..5 {
        let s = s.clone();
        tasks.push(tokio::spawn(async move {
            let mut b = toy::constant_bundle(32, i as f32);
            b.metadata.name = format!("m{i}");
            s.upload_bundle(&b).await;
            let mut seen = Vec::new();
            for _ in 0..4 {
                s.activate(&format!("m{i}@1")).await;
                seen.push(active_count(&s.get("/api/v1/models").await.json()));
            }
            seen
        }));
    }
    for t in tasks {
        let seen = t.await.map_err(|e| e.to_string())?;
        ensure!(seen.iter().all(|&n| n == 1), "observed active counts {seen:?}");
    }
    Ok("report fetch identical; export/import byte-exact; one active model throughout".into())
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("AUC matches pairwise enumeration", Box::new(auc_oracle)),
        ("F1 and FNR match direct tallies", Box::new(f1_fnr_oracle)),
        ("stratification at 411/38 scale", Box::new(stratification)),
        ("parity worked example and gate", Box::new(parity)),
        ("toy model end to end", Box::new(toy_end_to_end)),
        ("occlusion saliency properties", Box::new(saliency)),
        ("latency harness with scripted clock", Box::new(latency)),
        ("augmentation identities and leakage guard", Box::new(augmentation)),
        ("service round trips", Box::new(move || rt.block_on(service_round_trips()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
