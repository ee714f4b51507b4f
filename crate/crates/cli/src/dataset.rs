//! `wssv dataset --root DIR <command>`.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::Subcommand;
use serde::Serialize;
use wssv_core::dataset::{DatasetManifest, DatasetStore, NewSample, SampleFilter, SplitPlan};
use wssv_core::eval::{FoldPlan, SplitAssignment};
use wssv_core::{ImageSample, Label, SampleSource, Split};

use crate::commands::{print_json, read, write};
use crate::Failure;

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Store images; already-stored content is reported, not duplicated.
    Add {
        #[arg(required = true)]
        images: Vec<PathBuf>,
        #[arg(long, default_value = "import")]
        source: String,
        /// Label to apply after storing.
        #[arg(long)]
        label: Option<Label>,
        #[arg(long, default_value = "cli")]
        actor: String,
        /// Capture time (RFC 3339); now when omitted.
        #[arg(long)]
        captured_at: Option<DateTime<Utc>>,
        #[arg(long)]
        device_label: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Set a sample's label, recording who changed it.
    Label {
        id: String,
        label: Label,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
    /// List samples, optionally filtered.
    List {
        #[arg(long)]
        label: Option<Label>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        json: bool,
    },
    /// Apply a holdout assignment or a fold plan to the stored splits.
    Assign {
        /// Output of `wssv holdout` or `wssv kfold`.
        #[arg(long)]
        plan: PathBuf,
        /// For fold plans: the fold that becomes the validation split.
        #[arg(long)]
        validation_fold: Option<usize>,
    },
    /// Write a manifest and a tar archive of image blobs.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        label: Option<Label>,
        #[arg(long)]
        split: Option<Split>,
        /// Timestamp recorded in the manifest; now when omitted.
        #[arg(long)]
        created_at: Option<DateTime<Utc>>,
    },
    /// Load a manifest and archive produced by `export`.
    Import {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        archive: PathBuf,
    },
}

#[derive(Serialize)]
struct Added {
    image: PathBuf,
    created: bool,
    sample: ImageSample,
}

fn parse_source(s: &str) -> Result<SampleSource, Failure> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| Failure::input(format!("unknown source `{s}` (field_report, web, import)")))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, Failure> {
    serde_json::from_slice(bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn run(root: &Path, command: DatasetCommand) -> Result<(), Failure> {
    let store = DatasetStore::open(root)?;
    match command {
        DatasetCommand::Add { images, source, label, actor, captured_at, device_label, json } => {
            let source = parse_source(&source)?;
            let captured_at = captured_at.unwrap_or_else(Utc::now);
            let mut added = Vec::with_capacity(images.len());
            for path in images {
                let bytes = read(&path)?;
                let created = !store.contains(&wssv_core::sample::content_id(&bytes));
                let mut meta = NewSample::new(source, captured_at);
                meta.device_label = device_label.clone();
                let mut sample = store.add_sample(&bytes, meta)?;
                if let Some(label) = label {
                    sample = store.set_label(&sample.id, label, &actor)?;
                }
                added.push(Added { image: path, created, sample });
            }
            if json {
                return print_json(&added);
            }
            for a in &added {
                let note = if a.created { "" } else { " (already stored)" };
                println!("{}  {}  {}{note}", a.sample.id, a.sample.label, a.image.display());
            }
        }
        DatasetCommand::Label { id, label, actor } => {
            let sample = store.set_label(&id, label, &actor)?;
            println!("{}  {}", sample.id, sample.label);
        }
        DatasetCommand::List { label, split, json } => {
            let samples = store.list(&SampleFilter { label, split });
            if json {
                return print_json(&samples);
            }
            for s in &samples {
                let aug = s.augmentation_of.as_deref().map(|o| format!("  copy of {o}")).unwrap_or_default();
                println!("{}  {:<9}  {:<10}  {}{aug}", s.id, s.label, s.split, s.captured_at.to_rfc3339());
            }
        }
        DatasetCommand::Assign { plan, validation_fold } => {
            let bytes = read(&plan)?;
            let value: serde_json::Value = parse_json(&plan, &bytes)?;
            let split_plan = if value.get("assignments").is_some() {
                let folds: FoldPlan = parse_json(&plan, &bytes)?;
                let validation_fold = validation_fold
                    .ok_or_else(|| Failure::input("a fold plan needs --validation-fold"))?;
                SplitPlan::Folds { plan: folds, validation_fold }
            } else {
                if validation_fold.is_some() {
                    return Err(Failure::input("--validation-fold only applies to fold plans"));
                }
                SplitPlan::Holdout(parse_json::<SplitAssignment>(&plan, &bytes)?)
            };
            let changed = store.assign_splits(&split_plan)?;
            println!("{changed} samples reassigned");
        }
        DatasetCommand::Export { manifest, archive, label, split, created_at } => {
            let bundle = store.export(&SampleFilter { label, split }, created_at.unwrap_or_else(Utc::now))?;
            write(&manifest, &bundle.manifest.to_json())?;
            write(&archive, &bundle.archive)?;
            println!("{} samples exported", bundle.manifest.samples.len());
        }
        DatasetCommand::Import { manifest, archive } => {
            let parsed = DatasetManifest::from_json(&read(&manifest)?)?;
            let added = store.import(&parsed, &read(&archive)?)?;
            println!("{added} samples imported");
        }
    }
    Ok(())
}
