//! Geotagged field reports: validation, immutable storage and queries.
//!
//! A report bundles one or more stored images (each with the prediction
//! made for it), the pond location and optional water and weather
//! readings. Reports are written once and never modified.

use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{Decision, Prediction};

/// Inclusive ranges enforced on report fields, published so clients can
/// mirror them.
pub mod limits {
    pub const LATITUDE: (f64, f64) = (-90.0, 90.0);
    pub const LONGITUDE: (f64, f64) = (-180.0, 180.0);
    pub const PH: (f64, f64) = (0.0, 14.0);
    /// Water temperature, °C. Wide enough for any pond, tight enough to
    /// catch unit mistakes (Fahrenheit, Kelvin).
    pub const WATER_TEMPERATURE: (f64, f64) = (-5.0, 50.0);
    pub const AIR_TEMPERATURE: (f64, f64) = (-60.0, 60.0);
    pub const MIN_SALINITY: f64 = 0.0;
    pub const MIN_DISSOLVED_OXYGEN: f64 = 0.0;
    pub const MIN_AMMONIA: f64 = 0.0;
    pub const MAX_TEXT_LEN: usize = 4096;
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("report `{0}` not found")]
    NotFound(String),
    #[error("report `{0}` already exists")]
    Conflict(String),
    #[error("storage error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt report file {path}: {message}")]
    Corrupt { path: String, message: String },
}

impl ReportError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ReportError::Validation { field: field.into(), message: message.into() }
    }
}

fn check_range(field: &str, value: f64, (lo, hi): (f64, f64)) -> Result<(), ReportError> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(ReportError::invalid(field, format!("{value} is outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_min(field: &str, value: f64, lo: f64) -> Result<(), ReportError> {
    if !value.is_finite() || value < lo {
        return Err(ReportError::invalid(field, format!("{value} must be at least {lo}")));
    }
    Ok(())
}

fn check_text(field: &str, value: &str) -> Result<(), ReportError> {
    if value.len() > limits::MAX_TEXT_LEN {
        return Err(ReportError::invalid(field, format!("longer than {} bytes", limits::MAX_TEXT_LEN)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoSource {
    Device,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub source: GeoSource,
    /// Horizontal accuracy in meters, when the device reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl GeoPoint {
    pub fn manual(latitude: f64, longitude: f64) -> Self {
        Self { latitude, longitude, source: GeoSource::Manual, accuracy: None }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        check_range("latitude", self.latitude, limits::LATITUDE)?;
        check_range("longitude", self.longitude, limits::LONGITUDE)?;
        if let Some(a) = self.accuracy {
            check_min("accuracy", a, 0.0)?;
        }
        Ok(())
    }
}

/// Pond water readings; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterParams {
    /// °C
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<f64>,
    /// ppt
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub salinity: Option<f64>,
    /// mg/L
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissolved_oxygen: Option<f64>,
    /// mg/L
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ammonia: Option<f64>,
}

impl WaterParams {
    pub fn validate(&self) -> Result<(), ReportError> {
        if let Some(v) = self.temperature {
            check_range("water.temperature", v, limits::WATER_TEMPERATURE)?;
        }
        if let Some(v) = self.ph {
            check_range("water.ph", v, limits::PH)?;
        }
        if let Some(v) = self.salinity {
            check_min("water.salinity", v, limits::MIN_SALINITY)?;
        }
        if let Some(v) = self.dissolved_oxygen {
            check_min("water.dissolved_oxygen", v, limits::MIN_DISSOLVED_OXYGEN)?;
        }
        if let Some(v) = self.ammonia {
            check_min("water.ammonia", v, limits::MIN_AMMONIA)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    /// °C
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub air_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather_note: Option<String>,
}

impl Environment {
    pub fn validate(&self) -> Result<(), ReportError> {
        if let Some(v) = self.air_temperature {
            check_range("environment.air_temperature", v, limits::AIR_TEMPERATURE)?;
        }
        if let Some(n) = &self.weather_note {
            check_text("environment.weather_note", n)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportImage {
    pub sample_id: String,
    pub prediction: Prediction,
}

/// What a client submits. Images are referenced by stored sample id; the
/// service attaches predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDraft {
    pub location: GeoPoint,
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub water: WaterParams,
    #[serde(default)]
    pub environment: Environment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub submitter: String,
}

impl ReportDraft {
    /// Field-level checks that need no store access.
    pub fn validate(&self) -> Result<(), ReportError> {
        self.location.validate()?;
        if self.image_ids.is_empty() {
            return Err(ReportError::invalid("image_ids", "a report needs at least one image"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.image_ids {
            if id.trim().is_empty() {
                return Err(ReportError::invalid("image_ids", "empty image id"));
            }
            if !seen.insert(id) {
                return Err(ReportError::invalid("image_ids", format!("image `{id}` listed twice")));
            }
        }
        self.water.validate()?;
        self.environment.validate()?;
        if self.submitter.trim().is_empty() {
            return Err(ReportError::invalid("submitter", "must not be empty"));
        }
        check_text("submitter", &self.submitter)?;
        if let Some(n) = &self.notes {
            check_text("notes", n)?;
        }
        Ok(())
    }
}

mod rfc3339_utc {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Micros, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub id: String,
    #[serde(with = "rfc3339_utc")]
    pub created_at: DateTime<Utc>,
    pub location: GeoPoint,
    pub images: Vec<ReportImage>,
    pub water: WaterParams,
    pub environment: Environment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub submitter: String,
}

impl ReportRecord {
    /// Builds a record from a validated draft. `images` must follow the
    /// draft's `image_ids` order.
    pub fn from_draft(
        id: String,
        created_at: DateTime<Utc>,
        draft: ReportDraft,
        images: Vec<ReportImage>,
    ) -> Result<Self, ReportError> {
        draft.validate()?;
        let ids: Vec<&str> = images.iter().map(|i| i.sample_id.as_str()).collect();
        if ids != draft.image_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(ReportError::invalid("image_ids", "predictions do not match the listed images"));
        }
        // Stored timestamps have microsecond precision so a record equals
        // its own round trip through JSON.
        let created_at = DateTime::parse_from_rfc3339(&created_at.to_rfc3339_opts(SecondsFormat::Micros, true))
            .expect("formatted timestamp parses")
            .with_timezone(&Utc);
        Ok(Self {
            id,
            created_at,
            location: draft.location,
            images,
            water: draft.water,
            environment: draft.environment,
            notes: draft.notes,
            submitter: draft.submitter,
        })
    }

    /// True when any image was classified as WSSV.
    pub fn flagged(&self) -> bool {
        self.images.iter().any(|i| i.prediction.decision == Decision::Wssv)
    }
}

/// `min_lon, min_lat, max_lon, max_lat`, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<(), ReportError> {
        check_range("bbox.min_lon", self.min_lon, limits::LONGITUDE)?;
        check_range("bbox.max_lon", self.max_lon, limits::LONGITUDE)?;
        check_range("bbox.min_lat", self.min_lat, limits::LATITUDE)?;
        check_range("bbox.max_lat", self.max_lat, limits::LATITUDE)?;
        if self.min_lon > self.max_lon || self.min_lat > self.max_lat {
            return Err(ReportError::invalid("bbox", "minimum exceeds maximum"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        (self.min_lon..=self.max_lon).contains(&p.longitude) && (self.min_lat..=self.max_lat).contains(&p.latitude)
    }
}

impl std::str::FromStr for BoundingBox {
    type Err = ReportError;

    /// Parses `min_lon,min_lat,max_lon,max_lat`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ReportError::invalid("bbox", e.to_string()))?;
        let [min_lon, min_lat, max_lon, max_lat] = parts[..] else {
            return Err(ReportError::invalid("bbox", "expected min_lon,min_lat,max_lon,max_lat"));
        };
        let b = Self { min_lon, min_lat, max_lon, max_lat };
        b.validate()?;
        Ok(b)
    }
}

/// Report filters; absent fields match everything. Time bounds are
/// inclusive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportQuery {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub bbox: Option<BoundingBox>,
    /// `Wssv` keeps reports with at least one WSSV image, `Healthy` those
    /// with none.
    pub decision: Option<Decision>,
}

impl ReportQuery {
    pub fn validate(&self) -> Result<(), ReportError> {
        if let (Some(from), Some(to)) = (self.from, self.to) {
            if from > to {
                return Err(ReportError::invalid("from", "time range starts after it ends"));
            }
        }
        if let Some(b) = &self.bbox {
            b.validate()?;
        }
        Ok(())
    }

    pub fn matches(&self, r: &ReportRecord) -> bool {
        self.from.is_none_or(|f| r.created_at >= f)
            && self.to.is_none_or(|t| r.created_at <= t)
            && self.bbox.is_none_or(|b| b.contains(&r.location))
            && self.decision.is_none_or(|d| r.flagged() == (d == Decision::Wssv))
    }

    /// Matching records, newest first (ties broken by id).
    pub fn apply(&self, records: impl IntoIterator<Item = ReportRecord>) -> Result<Vec<ReportRecord>, ReportError> {
        self.validate()?;
        let mut out: Vec<ReportRecord> = records.into_iter().filter(|r| self.matches(r)).collect();
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}

/// One JSON file per report under a directory. Files are created once and
/// never rewritten.
#[derive(Debug, Clone)]
pub struct ReportStore {
    dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.display().to_string(), source }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl ReportStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Persists a new record; an existing id is a conflict.
    pub fn insert(&self, record: &ReportRecord) -> Result<(), ReportError> {
        if !valid_id(&record.id) {
            return Err(ReportError::invalid("id", "ids are 1-64 ASCII letters, digits or dashes"));
        }
        let path = self.path_of(&record.id);
        let bytes = serde_json::to_vec_pretty(record).expect("reports serialize");
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err(&self.dir))?;
        std::io::Write::write_all(&mut tmp, &bytes).map_err(io_err(&path))?;
        tmp.as_file().sync_all().map_err(io_err(&path))?;
        // `persist_noclobber` refuses to replace an existing report.
        tmp.persist_noclobber(&path).map_err(|e| {
            if e.error.kind() == std::io::ErrorKind::AlreadyExists {
                ReportError::Conflict(record.id.clone())
            } else {
                ReportError::Io { path: path.display().to_string(), source: e.error }
            }
        })?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<ReportRecord, ReportError> {
        if !valid_id(id) {
            return Err(ReportError::NotFound(id.to_string()));
        }
        let path = self.path_of(id);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ReportError::NotFound(id.into())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&bytes)
            .map_err(|e| ReportError::Corrupt { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn all(&self) -> Result<Vec<ReportRecord>, ReportError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            out.push(self.get(id)?);
        }
        Ok(out)
    }

    pub fn query(&self, q: &ReportQuery) -> Result<Vec<ReportRecord>, ReportError> {
        q.validate()?;
        q.apply(self.all()?)
    }
}
