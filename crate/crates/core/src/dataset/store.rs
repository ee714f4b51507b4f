use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::archive::{build_archive, check_blobs, read_archive, DatasetManifest, ExportBundle};
use super::DatasetError;
use crate::eval::{FoldPlan, SplitAssignment};
use crate::fsutil::atomic_write;
use crate::imaging::{decode_image, EncodedFormat, TrainingImage};
use crate::sample::{blob_name, content_id};
use crate::{ImageSample, Label, SampleSource, Split};

pub const RECORDS_FILE: &str = "records.json";
const BLOB_DIR: &str = "blobs";

/// One relabeling event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sample_id: String,
    pub actor: String,
    pub at: String,
    pub from: Label,
    pub to: Label,
}

/// Metadata supplied with new image bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewSample {
    pub source: SampleSource,
    pub captured_at: DateTime<Utc>,
    #[serde(default)]
    pub device_label: Option<String>,
}

impl NewSample {
    pub fn new(source: SampleSource, captured_at: DateTime<Utc>) -> Self {
        Self { source, captured_at, device_label: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFilter {
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default)]
    pub split: Option<Split>,
}

impl SampleFilter {
    pub fn matches(&self, s: &ImageSample) -> bool {
        self.label.is_none_or(|l| s.label == l) && self.split.is_none_or(|sp| s.split == sp)
    }
}

/// How to turn a splitter's output into stored split fields.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitPlan {
    /// Train ids → train, test ids → test.
    Holdout(SplitAssignment),
    /// The chosen fold → validation, every other fold → train.
    Folds { plan: FoldPlan, validation_fold: usize },
}

impl SplitPlan {
    fn targets(&self) -> Result<BTreeMap<&str, Split>, DatasetError> {
        let mut out = BTreeMap::new();
        match self {
            SplitPlan::Holdout(a) => {
                if let Some(id) = a.train_ids.intersection(&a.test_ids).next() {
                    return Err(DatasetError::invalid("plan", format!("`{id}` is in both train and test")));
                }
                out.extend(a.train_ids.iter().map(|id| (id.as_str(), Split::Train)));
                out.extend(a.test_ids.iter().map(|id| (id.as_str(), Split::Test)));
            }
            SplitPlan::Folds { plan, validation_fold } => {
                if *validation_fold >= plan.k {
                    return Err(DatasetError::invalid(
                        "validation_fold",
                        format!("fold {validation_fold} does not exist in a {}-fold plan", plan.k),
                    ));
                }
                for (id, &fold) in &plan.assignments {
                    let split = if fold == *validation_fold { Split::Validation } else { Split::Train };
                    out.insert(id.as_str(), split);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct State {
    samples: BTreeMap<String, ImageSample>,
    audit: Vec<AuditEntry>,
}

impl State {
    /// Write-time guard shared by every mutation.
    fn check(&self) -> Result<(), DatasetError> {
        for s in self.samples.values() {
            if s.is_augmented() && s.split.is_held_out() {
                return Err(DatasetError::Leakage { id: s.id.clone(), split: s.split });
            }
        }
        Ok(())
    }

    /// Augmented copies follow their source: train when the source is in
    /// train, unassigned otherwise.
    fn sync_augmented_splits(&mut self) {
        let source_splits: BTreeMap<String, Split> = self
            .samples
            .values()
            .filter(|s| !s.is_augmented())
            .map(|s| (s.id.clone(), s.split))
            .collect();
        for s in self.samples.values_mut() {
            if let Some(src) = &s.augmentation_of {
                s.split = match source_splits.get(src) {
                    Some(Split::Train) => Split::Train,
                    _ => Split::Unassigned,
                };
            }
        }
    }
}

/// Persistent dataset store. Cheap to share behind an `Arc`; all methods
/// take `&self`.
#[derive(Debug)]
pub struct DatasetStore {
    root: PathBuf,
    state: RwLock<State>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

impl DatasetStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        std::fs::create_dir_all(root.join(BLOB_DIR)).map_err(DatasetError::io(&root))?;
        let path = root.join(RECORDS_FILE);
        let state = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| DatasetError::Corrupt { path: path.display().to_string(), message: e.to_string() })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(DatasetError::io(&path)(e)),
        };
        Ok(Self { root, state: RwLock::new(state) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn blob_path(&self, image_ref: &str) -> PathBuf {
        let shard = image_ref.get(..2).unwrap_or("__");
        self.root.join(BLOB_DIR).join(shard).join(image_ref)
    }

    /// Applies `f` to a copy of the state and publishes it once persisted.
    /// Blobs listed in the returned vector are written first and removed
    /// again if anything fails.
    fn transact<T>(
        &self,
        f: impl FnOnce(&mut State) -> Result<(T, Vec<(String, Vec<u8>)>), DatasetError>,
    ) -> Result<T, DatasetError> {
        let mut guard = self.state.write().unwrap();
        let mut next = guard.clone();
        let (out, blobs) = f(&mut next)?;
        next.check()?;
        let mut written = Vec::new();
        let result = (|| {
            for (image_ref, bytes) in &blobs {
                let path = self.blob_path(image_ref);
                if !path.exists() {
                    atomic_write(&path, bytes).map_err(DatasetError::io(&path))?;
                    written.push(path);
                }
            }
            if next != *guard {
                let path = self.root.join(RECORDS_FILE);
                let bytes = serde_json::to_vec_pretty(&next).expect("state serializes");
                atomic_write(&path, &bytes).map_err(DatasetError::io(&path))?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for path in written {
                let _ = std::fs::remove_file(path);
            }
            return Err(e);
        }
        *guard = next;
        Ok(out)
    }

    /// Stores decodable image bytes as a new unlabeled, unassigned sample.
    /// Bytes already present return the existing record unchanged.
    pub fn add_sample(&self, bytes: &[u8], meta: NewSample) -> Result<ImageSample, DatasetError> {
        let format = EncodedFormat::detect(bytes).map_err(DatasetError::Decode)?;
        decode_image(bytes).map_err(DatasetError::Decode)?;
        let id = content_id(bytes);
        self.transact(|state| {
            if let Some(existing) = state.samples.get(&id) {
                return Ok((existing.clone(), vec![]));
            }
            let record = ImageSample {
                image_ref: blob_name(&id, format.extension()),
                id: id.clone(),
                label: Label::Unlabeled,
                split: Split::Unassigned,
                source: meta.source,
                captured_at: meta.captured_at,
                device_label: meta.device_label,
                augmentation_of: None,
            };
            state.samples.insert(id, record.clone());
            Ok((record.clone(), vec![(record.image_ref, bytes.to_vec())]))
        })
    }

    /// Stores augmented copies produced from stored training samples. Each
    /// copy's split is derived from its source, never taken from the input.
    pub fn add_augmented(&self, copies: &[TrainingImage]) -> Result<Vec<ImageSample>, DatasetError> {
        let mut encoded = Vec::with_capacity(copies.len());
        for c in copies {
            let Some(src) = &c.record.augmentation_of else {
                return Err(DatasetError::invalid("augmentation_of", format!("`{}` is not an augmented copy", c.record.id)));
            };
            let png = crate::imaging::encode_png(&c.image).map_err(DatasetError::Decode)?;
            let id = content_id(&png);
            if id != c.record.id {
                return Err(DatasetError::Integrity { id: c.record.id.clone() });
            }
            encoded.push((src.clone(), c.record.clone(), png));
        }
        self.transact(|state| {
            let mut out = Vec::new();
            let mut blobs = Vec::new();
            for (src, record, png) in encoded {
                let source = state.samples.get(&src).ok_or_else(|| DatasetError::NotFound(src.clone()))?;
                if source.is_augmented() {
                    return Err(DatasetError::invalid("augmentation_of", format!("`{src}` is itself augmented")));
                }
                if let Some(existing) = state.samples.get(&record.id) {
                    out.push(existing.clone());
                    continue;
                }
                let stored = ImageSample {
                    id: record.id.clone(),
                    image_ref: blob_name(&record.id, "png"),
                    label: source.label,
                    split: if source.split == Split::Train { Split::Train } else { Split::Unassigned },
                    source: source.source,
                    captured_at: source.captured_at,
                    device_label: source.device_label.clone(),
                    augmentation_of: Some(src),
                };
                blobs.push((stored.image_ref.clone(), png));
                state.samples.insert(stored.id.clone(), stored.clone());
                out.push(stored);
            }
            Ok((out, blobs))
        })
    }

    /// Changes a label and records who changed it. Setting the current label
    /// again is a no-op and leaves no audit entry.
    pub fn set_label(&self, id: &str, label: Label, actor: &str) -> Result<ImageSample, DatasetError> {
        if actor.trim().is_empty() {
            return Err(DatasetError::invalid("actor", "must not be empty"));
        }
        self.transact(|state| {
            let sample = state.samples.get_mut(id).ok_or_else(|| DatasetError::NotFound(id.to_string()))?;
            if sample.label != label {
                let from = sample.label;
                sample.label = label;
                let updated = sample.clone();
                state.audit.push(AuditEntry { sample_id: id.to_string(), actor: actor.to_string(), at: now(), from, to: label });
                return Ok((updated, vec![]));
            }
            Ok((sample.clone(), vec![]))
        })
    }

    /// Applies a split plan atomically and returns how many planned samples
    /// changed split. Every planned id must exist, be labeled and be an
    /// original (augmented copies follow their source automatically).
    pub fn assign_splits(&self, plan: &SplitPlan) -> Result<usize, DatasetError> {
        let targets = plan.targets()?;
        self.transact(|state| {
            for id in targets.keys() {
                let s = state.samples.get(*id).ok_or_else(|| DatasetError::NotFound(id.to_string()))?;
                if s.label == Label::Unlabeled {
                    return Err(DatasetError::invalid("plan", format!("sample `{id}` is unlabeled")));
                }
                if s.is_augmented() {
                    return Err(DatasetError::invalid("plan", format!("sample `{id}` is an augmented copy")));
                }
            }
            let mut changed = 0;
            for (id, split) in &targets {
                let s = state.samples.get_mut(*id).expect("checked above");
                if s.split != *split {
                    s.split = *split;
                    changed += 1;
                }
            }
            state.sync_augmented_splits();
            Ok((changed, vec![]))
        })
    }

    pub fn get(&self, id: &str) -> Result<ImageSample, DatasetError> {
        self.state.read().unwrap().samples.get(id).cloned().ok_or_else(|| DatasetError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.state.read().unwrap().samples.contains_key(id)
    }

    /// Matching samples, ascending by id.
    pub fn list(&self, filter: &SampleFilter) -> Vec<ImageSample> {
        self.state.read().unwrap().samples.values().filter(|s| filter.matches(s)).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.state.read().unwrap().audit.clone()
    }

    pub fn audit_for(&self, id: &str) -> Vec<AuditEntry> {
        self.state.read().unwrap().audit.iter().filter(|a| a.sample_id == id).cloned().collect()
    }

    pub fn blob(&self, id: &str) -> Result<Vec<u8>, DatasetError> {
        let sample = self.get(id)?;
        let path = self.blob_path(&sample.image_ref);
        std::fs::read(&path).map_err(DatasetError::io(&path))
    }

    /// Labeled original samples as id → label, the input expected by the
    /// stratified splitters.
    pub fn labeled_classes(&self) -> BTreeMap<String, Label> {
        self.state
            .read()
            .unwrap()
            .samples
            .values()
            .filter(|s| !s.is_augmented() && s.label != Label::Unlabeled)
            .map(|s| (s.id.clone(), s.label))
            .collect()
    }

    /// Manifest and blob archive for the samples matching `filter`.
    pub fn export(&self, filter: &SampleFilter, created_at: DateTime<Utc>) -> Result<ExportBundle, DatasetError> {
        let samples = self.list(filter);
        let mut blobs = BTreeMap::new();
        for s in &samples {
            let path = self.blob_path(&s.image_ref);
            let bytes = std::fs::read(&path).map_err(DatasetError::io(&path))?;
            blobs.insert(s.image_ref.clone(), bytes);
        }
        let manifest = DatasetManifest::new(samples, created_at);
        manifest.validate()?;
        check_blobs(&manifest, &blobs)?;
        let archive = build_archive(&blobs)?;
        Ok(ExportBundle { manifest, archive })
    }

    /// Imports a manifest/archive pair as produced by [`export`](Self::export).
    /// Records already present must be identical. Returns the number of new
    /// samples. Nothing is stored unless the whole pair is valid.
    pub fn import(&self, manifest: &DatasetManifest, archive: &[u8]) -> Result<usize, DatasetError> {
        manifest.validate()?;
        let blobs = read_archive(archive)?;
        check_blobs(manifest, &blobs)?;
        let ids: BTreeSet<&str> = manifest.samples.iter().map(|s| s.id.as_str()).collect();
        self.transact(|state| {
            let mut added = 0;
            let mut to_write = Vec::new();
            for s in &manifest.samples {
                if let Some(src) = &s.augmentation_of {
                    if !ids.contains(src.as_str()) && !state.samples.contains_key(src) {
                        return Err(DatasetError::NotFound(src.clone()));
                    }
                }
                match state.samples.get(&s.id) {
                    Some(existing) if existing == s => {}
                    Some(_) => return Err(DatasetError::Conflict(s.id.clone())),
                    None => {
                        state.samples.insert(s.id.clone(), s.clone());
                        to_write.push((s.image_ref.clone(), blobs[&s.image_ref].clone()));
                        added += 1;
                    }
                }
            }
            Ok((added, to_write))
        })
    }
}
