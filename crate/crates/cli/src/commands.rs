//! One function per top-level subcommand.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wssv_core::dataset::{DatasetManifest, DatasetStore, SampleFilter};
use wssv_core::eval::{
    evaluate_folds, evaluate_run, read_labeled_scores, render_table, stratified_holdout, stratified_kfold, FoldPlan,
    LabeledScore,
};
use wssv_core::explain::{occlusion_saliency, render_overlay, OcclusionConfig, OcclusionFill};
use wssv_core::imaging::{
    crop_and_resize, decode_image, encode_png, expand_training_set, preprocess, AugmentPolicy, ImageTensor,
    TrainingImage,
};
use wssv_core::inference::{load_model, Decision, ModelBundle, ModelHandle, Prediction};
use wssv_core::qa::{
    align_scores, benchmark_latency, compare_outputs, gate_parity, read_score_csv, BenchmarkConfig, ParityGate,
    ParityReport, SystemClock,
};
use wssv_core::{toy, Label, Split};

use crate::{
    AugmentArgs, BenchArgs, EvaluateArgs, Failure, FillArg, HoldoutArgs, KfoldArgs, ParityArgs, PredictArgs,
    SaliencyArgs, ServeArgs, ToyBundleArgs, ToyKind,
};

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

/// Pretty JSON with a trailing newline, so written files are stable.
pub(crate) fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("CLI outputs always serialize");
    out.push(b'\n');
    out
}

pub(crate) fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    std::io::stdout()
        .write_all(&json_bytes(value))
        .map_err(|e| Failure::new("io", format!("stdout: {e}")))
}

/// Writes `value` as JSON to `out`, or to stdout when no file is given.
fn emit_file<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => write(path, &json_bytes(value)),
        None => print_json(value),
    }
}

fn load_bundle(dir: &Path) -> Result<ModelHandle, Failure> {
    let bundle = ModelBundle::read_dir(dir)?;
    Ok(load_model(&bundle)?)
}

fn load_image(path: &Path) -> Result<ImageTensor, Failure> {
    decode_image(&read(path)?).map_err(|e| Failure::new("decode", format!("{}: {e}", path.display())))
}

fn check_threshold(t: f64) -> Result<(), Failure> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Failure::input(format!("threshold {t} must lie in (0, 1)")))
    }
}

#[derive(Serialize)]
struct ScoredImage {
    image: PathBuf,
    #[serde(flatten)]
    prediction: Prediction,
}

pub fn predict(a: PredictArgs) -> Result<(), Failure> {
    if let Some(t) = a.threshold {
        check_threshold(t)?;
    }
    let handle = load_bundle(&a.bundle)?;
    let cfg = handle.metadata().preprocess_config();
    let mut results = Vec::with_capacity(a.images.len());
    for path in a.images {
        let input = preprocess(&load_image(&path)?, &cfg)?.with_provenance(path.display().to_string());
        let mut prediction = handle.predict(&input)?;
        if let Some(t) = a.threshold {
            prediction.decision = Decision::from_score(prediction.score, t);
        }
        results.push(ScoredImage { image: path, prediction });
    }
    if a.json {
        return print_json(&results);
    }
    println!("{:<40} {:>8} {:>8}  model", "image", "score", "decision");
    for r in &results {
        println!(
            "{:<40} {:>8.4} {:>8}  {}",
            r.image.display(),
            r.prediction.score,
            r.prediction.decision.as_str(),
            r.prediction.model_id
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SaliencyOutput {
    prediction: Prediction,
    overlay: PathBuf,
    argmax: [u32; 2],
    forward_passes: usize,
}

pub fn saliency(a: SaliencyArgs) -> Result<(), Failure> {
    let handle = load_bundle(&a.bundle)?;
    let pcfg = handle.metadata().preprocess_config();
    let image = load_image(&a.image)?;
    let input = preprocess(&image, &pcfg)?;
    let fill = match a.fill {
        FillArg::Mean => OcclusionFill::MeanColor,
        FillArg::Gray => OcclusionFill::Gray128,
    };
    let ocfg = OcclusionConfig { patch_side: a.patch, stride: a.stride, fill, ..Default::default() };
    let map = occlusion_saliency(&handle, &input, &ocfg)?;
    let overlay = render_overlay(&map, &crop_and_resize(&image, &pcfg)?)?;
    write(&a.out, &encode_png(&overlay)?)?;
    let positions = wssv_core::explain::patch_offsets(input.side, a.patch, a.stride).len();
    let (x, y) = map.argmax();
    let out = SaliencyOutput {
        prediction: handle.predict(&input)?,
        overlay: a.out,
        argmax: [x, y],
        forward_passes: positions * positions + 1,
    };
    if a.json {
        return print_json(&out);
    }
    println!(
        "score {:.4} ({}), most influential pixel ({x}, {y}), overlay written to {}",
        out.prediction.score,
        out.prediction.decision.as_str(),
        out.overlay.display()
    );
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<LabeledScore>, Failure> {
    read_labeled_scores(read(path)?.as_slice())
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    check_threshold(a.threshold)?;
    let folds = a.scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>, _>>()?;
    let summary = match &a.plan {
        Some(path) => {
            let plan: FoldPlan = serde_json::from_slice(&read(path)?)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let by_fold: BTreeMap<usize, Vec<LabeledScore>> = folds.into_iter().enumerate().collect();
            evaluate_run(&plan, &by_fold, a.threshold)?
        }
        None => evaluate_folds(&folds, a.threshold)?,
    };
    if a.json {
        return print_json(&summary);
    }
    print!("{}", render_table(&summary));
    Ok(())
}

/// Labels to stratify on: a dataset manifest's labeled originals, or a plain
/// `{"id": "label"}` object.
fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>, Failure> {
    let bytes = read(path)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let labels = if value.get("schema_version").is_some() {
        let manifest = DatasetManifest::from_json(&bytes)?;
        manifest
            .samples
            .into_iter()
            .filter(|s| s.label != Label::Unlabeled && !s.is_augmented())
            .map(|s| (s.id, s.label))
            .collect()
    } else {
        let map: BTreeMap<String, Label> =
            serde_json::from_value(value).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        map.into_iter().filter(|(_, l)| *l != Label::Unlabeled).collect()
    };
    Ok(labels)
}

pub fn kfold(a: KfoldArgs) -> Result<(), Failure> {
    let plan = stratified_kfold(&read_labels(&a.manifest)?, a.k, a.seed)?;
    emit_file(&plan, a.out.as_deref())
}

pub fn holdout(a: HoldoutArgs) -> Result<(), Failure> {
    let split = stratified_holdout(&read_labels(&a.manifest)?, a.test_fraction, a.seed)?;
    emit_file(&split, a.out.as_deref())
}

#[derive(Serialize)]
struct AugmentOutput {
    sources: usize,
    added: Vec<String>,
}

pub fn augment(a: AugmentArgs) -> Result<(), Failure> {
    let policy = match &a.policy {
        Some(path) => serde_json::from_slice(&read(path)?)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?,
        None => AugmentPolicy::default(),
    };
    let specs = policy.sample(a.count, a.seed)?;
    let store = DatasetStore::open(&a.root)?;
    let filter = SampleFilter { split: Some(Split::Train), ..Default::default() };
    let sources: Vec<TrainingImage> = store
        .list(&filter)
        .into_iter()
        .filter(|s| !s.is_augmented())
        .map(|record| {
            let image = decode_image(&store.blob(&record.id)?)?;
            Ok(TrainingImage { record, image })
        })
        .collect::<Result<_, Failure>>()?;
    let expanded = expand_training_set(&sources, &specs)?;
    let stored = store.add_augmented(&expanded[sources.len()..])?;
    let out = AugmentOutput { sources: sources.len(), added: stored.into_iter().map(|s| s.id).collect() };
    if a.json {
        return print_json(&out);
    }
    println!("{} training samples, {} augmented copies stored", out.sources, out.added.len());
    Ok(())
}

fn read_score_file(path: &Path) -> Result<Vec<(String, f64)>, Failure> {
    read_score_csv(read(path)?.as_slice()).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn parity(a: ParityArgs) -> Result<(), Failure> {
    let gate = ParityGate { max_tolerance: a.max_tol, mean_tolerance: a.mean_tol };
    let (reference, candidate) = align_scores(&read_score_file(&a.reference)?, &read_score_file(&a.candidate)?)?;
    let stats = compare_outputs(&reference, &candidate)?;
    let verdict = gate_parity(&stats, &gate)?;
    let report = ParityReport { stats, gate, verdict };
    if a.json {
        print_json(&report)?;
    } else {
        let s = &report.stats;
        println!("inputs  {}", s.count);
        println!("mean    {:.3e}  (limit {:.3e})", s.mean, gate.mean_tolerance);
        println!("max     {:.3e}  (limit {:.3e})", s.max, gate.max_tolerance);
        println!("min     {:.3e}", s.min);
        println!("stddev  {:.3e}", s.stddev);
        println!("verdict {}", if report.verdict.passed { "PASS" } else { "FAIL" });
    }
    if report.verdict.passed {
        return Ok(());
    }
    let violated: Vec<String> = report
        .verdict
        .violations
        .iter()
        .map(|v| format!("{} {:.3e} > {:.3e}", v.bound, v.observed, v.limit))
        .collect();
    Err(Failure::new("parity", violated.join("; ")))
}

pub fn bench(a: BenchArgs) -> Result<(), Failure> {
    let handle = load_bundle(&a.bundle)?;
    let image = match &a.image {
        Some(path) => load_image(path)?,
        None => {
            let side = handle.input_side();
            ImageTensor::filled(side, side, [128, 128, 128])?
        }
    };
    let input = preprocess(&image, &handle.metadata().preprocess_config())?;
    let cfg = BenchmarkConfig { runs: a.runs, warmup_runs: a.warmup, device_label: a.device_label };
    let stats = benchmark_latency(&handle, &input, &cfg, &SystemClock::new())?;
    if a.json {
        return print_json(&stats);
    }
    let runs: Vec<String> = stats.per_run.iter().map(|ms| format!("{ms:.2}")).collect();
    println!(
        "{} on {}: mean {:.2} ms over {} runs ({} warm-up) [{}]",
        handle.model_id(),
        stats.device_label,
        stats.mean,
        stats.runs,
        stats.warmup_runs,
        runs.join(", ")
    );
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<(), Failure> {
    let mut config = wssv_server::ServerConfig::load(a.config.as_deref())?;
    if let Some(listen) = a.listen {
        config.listen = listen;
    }
    if let Some(dir) = a.data_dir {
        config.data_dir = dir;
    }
    config.validate()?;
    // Logs go to stderr so stdout stays free for machine-readable output.
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new("serve", e.to_string()))?;
    rt.block_on(wssv_server::serve(config))?;
    Ok(())
}

pub fn toy_bundle(a: ToyBundleArgs) -> Result<(), Failure> {
    let bundle = match a.kind {
        ToyKind::Constant => toy::constant_bundle(a.side, a.logit),
        ToyKind::Patch => {
            if a.side < toy::PATCH_SIDE {
                return Err(Failure::input(format!("patch model needs side >= {}", toy::PATCH_SIDE)));
            }
            toy::patch_bundle(a.side)
        }
    };
    bundle.write_dir(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}
