use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::sample::content_id;
use crate::{ImageSample, Label};

pub const MANIFEST_SCHEMA_VERSION: &str = "1";

/// Per-label totals. Every label is always present, zero or not.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub healthy: u64,
    pub wssv: u64,
    pub unlabeled: u64,
}

impl LabelCounts {
    pub fn tally<'a>(samples: impl IntoIterator<Item = &'a ImageSample>) -> Self {
        let mut c = Self::default();
        for s in samples {
            match s.label {
                Label::Healthy => c.healthy += 1,
                Label::Wssv => c.wssv += 1,
                Label::Unlabeled => c.unlabeled += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.healthy + self.wssv + self.unlabeled
    }
}

/// Sample records (no pixel data) handed to an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub created_at: String,
    pub counts: LabelCounts,
    /// Ascending by id.
    pub samples: Vec<ImageSample>,
}

impl DatasetManifest {
    pub fn new(mut samples: Vec<ImageSample>, created_at: DateTime<Utc>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION.into(),
            created_at: created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            counts: LabelCounts::tally(&samples),
            samples,
        }
    }

    /// Checks the manifest's internal invariants: known schema, unique
    /// sorted ids, counts equal to tallies, consistent blob names and no
    /// augmented sample in a held-out split.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(DatasetError::invalid(
                "schema_version",
                format!("unsupported version `{}`", self.schema_version),
            ));
        }
        if DateTime::parse_from_rfc3339(&self.created_at).is_err() {
            return Err(DatasetError::invalid("created_at", "not an RFC 3339 timestamp"));
        }
        if !self.samples.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(DatasetError::invalid("samples", "ids must be unique and ascending"));
        }
        let tally = LabelCounts::tally(&self.samples);
        if tally != self.counts {
            return Err(DatasetError::invalid(
                "counts",
                format!("declared {:?} but samples tally to {:?}", self.counts, tally),
            ));
        }
        for s in &self.samples {
            if !s.image_ref.starts_with(&format!("{}.", s.id)) {
                return Err(DatasetError::invalid("image_ref", format!("`{}` does not name sample `{}`", s.image_ref, s.id)));
            }
            if s.is_augmented() && s.split.is_held_out() {
                return Err(DatasetError::Leakage { id: s.id.clone(), split: s.split });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, DatasetError> {
        let m: Self = serde_json::from_slice(bytes).map_err(|e| DatasetError::invalid("manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// A manifest plus the tar archive holding exactly its blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportBundle {
    pub manifest: DatasetManifest,
    pub archive: Vec<u8>,
}

/// Builds a reproducible tar: entries sorted by name, fixed mode, owner and
/// zero mtime, so equal inputs give byte-equal archives.
pub fn build_archive(blobs: &BTreeMap<String, Vec<u8>>) -> Result<Vec<u8>, DatasetError> {
    let mut builder = tar::Builder::new(Vec::new());
    builder.mode(tar::HeaderMode::Deterministic);
    for (name, bytes) in blobs {
        let mut header = tar::Header::new_ustar();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        builder
            .append_data(&mut header, name, bytes.as_slice())
            .map_err(|e| DatasetError::Archive(format!("{name}: {e}")))?;
    }
    builder.into_inner().map_err(|e| DatasetError::Archive(e.to_string()))
}

/// Reads every regular entry of a tar into name → bytes. Nested paths and
/// duplicate names are rejected.
pub fn read_archive(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>, DatasetError> {
    let mut out = BTreeMap::new();
    let mut archive = tar::Archive::new(bytes);
    let entries = archive.entries().map_err(|e| DatasetError::Archive(e.to_string()))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| DatasetError::Archive(e.to_string()))?;
        if entry.header().entry_type() != tar::EntryType::Regular {
            return Err(DatasetError::Archive("only regular files are allowed".into()));
        }
        let name = entry
            .path()
            .map_err(|e| DatasetError::Archive(e.to_string()))?
            .to_str()
            .ok_or_else(|| DatasetError::Archive("non-UTF-8 entry name".into()))?
            .to_string();
        if name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(DatasetError::Archive(format!("unexpected entry path `{name}`")));
        }
        let mut data = Vec::new();
        std::io::Read::read_to_end(&mut entry, &mut data).map_err(|e| DatasetError::Archive(e.to_string()))?;
        if out.insert(name.clone(), data).is_some() {
            return Err(DatasetError::Archive(format!("duplicate entry `{name}`")));
        }
    }
    Ok(out)
}

/// Checks that `blobs` holds exactly the manifest's images and that each
/// hashes to its sample id.
pub(crate) fn check_blobs(manifest: &DatasetManifest, blobs: &BTreeMap<String, Vec<u8>>) -> Result<(), DatasetError> {
    let expected: BTreeSet<&str> = manifest.samples.iter().map(|s| s.image_ref.as_str()).collect();
    let present: BTreeSet<&str> = blobs.keys().map(String::as_str).collect();
    if let Some(missing) = expected.difference(&present).next() {
        return Err(DatasetError::Archive(format!("missing blob `{missing}`")));
    }
    if let Some(extra) = present.difference(&expected).next() {
        return Err(DatasetError::Archive(format!("unreferenced blob `{extra}`")));
    }
    for s in &manifest.samples {
        if content_id(&blobs[&s.image_ref]) != s.id {
            return Err(DatasetError::Integrity { id: s.id.clone() });
        }
    }
    Ok(())
}
