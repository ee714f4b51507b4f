use std::collections::HashMap;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wssv_core::dataset::{DatasetManifest, NewSample, SampleFilter};
use wssv_core::explain::{occlusion_saliency, render_overlay};
use wssv_core::imaging::{crop_and_resize, decode_image, encode_png, preprocess};
use wssv_core::inference::{Decision, ModelBundle, ModelHandle, Prediction};
use wssv_core::reports::{limits, BoundingBox, ReportDraft, ReportError, ReportImage, ReportQuery, ReportRecord};
use wssv_core::sample::content_id;
use wssv_core::{ImageSample, Label, SampleSource, Split};

use crate::error::ApiError;
use crate::state::{write_atomic, AppState};

/// Upper bound on request bodies (images, bundles, archives).
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/schema", get(schema))
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/overlays/{file}", get(overlay))
        .route("/api/v1/reports", post(submit_report).get(query_reports))
        .route("/api/v1/reports/{id}", get(get_report))
        .route("/api/v1/dataset/samples", post(add_sample).get(list_samples))
        .route("/api/v1/dataset/samples/{id}", get(get_sample))
        .route("/api/v1/dataset/samples/{id}/image", get(sample_image))
        .route("/api/v1/dataset/samples/{id}/label", put(set_label))
        .route("/api/v1/dataset/export", get(export_manifest))
        .route("/api/v1/dataset/export/archive", get(export_archive))
        .route("/api/v1/dataset/import", post(import_dataset))
        .route("/api/v1/models", get(list_models).post(upload_model))
        .route("/api/v1/models/{id}/activate", post(activate_model))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await?
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::validation("body", e.to_string()))
}

/// Reads all multipart fields into memory, keyed by field name.
async fn read_multipart(mut mp: Multipart) -> Result<HashMap<String, Bytes>, ApiError> {
    let mut fields = HashMap::new();
    while let Some(field) = mp.next_field().await.map_err(|e| ApiError::validation("body", e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ApiError::validation(name.clone(), e.body_text()))?;
        if fields.insert(name.clone(), data).is_some() {
            return Err(ApiError::validation(name, "field given twice"));
        }
    }
    Ok(fields)
}

fn text_field(fields: &HashMap<String, Bytes>, name: &str) -> Result<Option<String>, ApiError> {
    fields
        .get(name)
        .map(|b| String::from_utf8(b.to_vec()).map(|s| s.trim().to_string()))
        .transpose()
        .map_err(|_| ApiError::validation(name, "not UTF-8 text"))
}

fn parse_flag(q: &HashMap<String, String>, name: &str) -> Result<bool, ApiError> {
    match q.get(name).map(String::as_str) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") => Ok(true),
        Some(other) => Err(ApiError::validation(name, format!("expected true or false, got `{other}`"))),
    }
}

fn parse_time(q: &HashMap<String, String>, name: &str) -> Result<Option<DateTime<Utc>>, ApiError> {
    q.get(name)
        .map(|s| {
            DateTime::parse_from_rfc3339(s)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| ApiError::validation(name, format!("not an RFC 3339 timestamp: {e}")))
        })
        .transpose()
}

fn parse_filter(q: &HashMap<String, String>) -> Result<SampleFilter, ApiError> {
    let label = q.get("label").map(|s| s.parse::<Label>()).transpose().map_err(|e| ApiError::validation("label", e))?;
    let split = q.get("split").map(|s| s.parse::<Split>()).transpose().map_err(|e| ApiError::validation("split", e))?;
    Ok(SampleFilter { label, split })
}

fn reject_unknown_params(q: &HashMap<String, String>, allowed: &[&str]) -> Result<(), ApiError> {
    match q.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(ApiError::validation(k.clone(), "unknown query parameter")),
        None => Ok(()),
    }
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "active_model": st.registry.active_entry().map(|e| e.id),
        "samples": st.dataset.len(),
    }))
}

/// Validation ranges, so clients can mirror the server's rules.
async fn schema() -> Json<serde_json::Value> {
    Json(json!({
        "location": {
            "latitude": {"min": limits::LATITUDE.0, "max": limits::LATITUDE.1},
            "longitude": {"min": limits::LONGITUDE.0, "max": limits::LONGITUDE.1},
            "source": ["device", "manual"],
        },
        "water": {
            "temperature": {"min": limits::WATER_TEMPERATURE.0, "max": limits::WATER_TEMPERATURE.1, "unit": "°C"},
            "ph": {"min": limits::PH.0, "max": limits::PH.1},
            "salinity": {"min": limits::MIN_SALINITY, "unit": "ppt"},
            "dissolved_oxygen": {"min": limits::MIN_DISSOLVED_OXYGEN, "unit": "mg/L"},
            "ammonia": {"min": limits::MIN_AMMONIA, "unit": "mg/L"},
        },
        "environment": {
            "air_temperature": {"min": limits::AIR_TEMPERATURE.0, "max": limits::AIR_TEMPERATURE.1, "unit": "°C"},
        },
        "max_text_length": limits::MAX_TEXT_LEN,
        "labels": ["healthy", "wssv", "unlabeled"],
        "splits": ["train", "validation", "test", "unassigned"],
    }))
}

/// Runs the active model on decoded image bytes, applying the configured
/// threshold override.
fn run_prediction(st: &AppState, handle: &ModelHandle, bytes: &[u8], sample_id: &str) -> Result<Prediction, ApiError> {
    let img = decode_image(bytes)?;
    let input = preprocess(&img, &handle.metadata().preprocess_config())?.with_provenance(format!("sample:{sample_id}"));
    let mut p = handle.predict(&input)?;
    if let Some(t) = st.config.threshold {
        p.decision = Decision::from_score(p.score, t);
    }
    Ok(p)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OverlayRef {
    pub id: String,
    pub url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub sample_id: String,
    pub prediction: Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlay: Option<OverlayRef>,
}

async fn predict(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    mp: Multipart,
) -> Result<Json<PredictResponse>, ApiError> {
    reject_unknown_params(&q, &["saliency"])?;
    let want_saliency = parse_flag(&q, "saliency")?;
    let fields = read_multipart(mp).await?;
    let image = fields.get("image").cloned().ok_or_else(|| ApiError::validation("image", "multipart field `image` is required"))?;
    let device_label = text_field(&fields, "device_label")?.filter(|s| !s.is_empty());
    let handle = st.registry.active().ok_or_else(ApiError::no_active_model)?;
    blocking(move || {
        // Decode before storing so a bad upload leaves nothing behind.
        decode_image(&image)?;
        let sample = st.dataset.add_sample(
            &image,
            NewSample { source: SampleSource::FieldReport, captured_at: Utc::now(), device_label },
        )?;
        let prediction = run_prediction(&st, &handle, &image, &sample.id)?;
        let overlay = if want_saliency {
            let img = decode_image(&image)?;
            let cfg = handle.metadata().preprocess_config();
            let input = preprocess(&img, &cfg)?;
            let map = occlusion_saliency(handle.as_ref(), &input, &st.config.saliency)?;
            let view = crop_and_resize(&img, &cfg)?;
            let png = encode_png(&render_overlay(&map, &view)?)?;
            let id = content_id(&png);
            write_atomic(&st.overlay_path(&id), &png)?;
            Some(OverlayRef { url: format!("/api/v1/overlays/{id}.png"), id })
        } else {
            None
        };
        st.record_prediction(&sample.id, &prediction)?;
        Ok(Json(PredictResponse { sample_id: sample.id, prediction, overlay }))
    })
    .await
}

async fn overlay(State(st): State<AppState>, Path(file): Path<String>) -> Result<Response, ApiError> {
    let id = file.strip_suffix(".png").unwrap_or(&file);
    if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ApiError::not_found(format!("overlay `{file}` not found")));
    }
    let bytes = std::fs::read(st.overlay_path(id)).map_err(|_| ApiError::not_found(format!("overlay `{file}` not found")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn submit_report(State(st): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<ReportRecord>), ApiError> {
    let draft: ReportDraft = parse_json(&body)?;
    draft.validate()?;
    blocking(move || {
        for id in &draft.image_ids {
            if !st.dataset.contains(id) {
                return Err(ReportError::UnknownImage(id.clone()).into());
            }
        }
        let mut images = Vec::with_capacity(draft.image_ids.len());
        for id in &draft.image_ids {
            let prediction = match st.recorded_prediction(id) {
                Some(p) => p,
                None => {
                    let handle = st.registry.active().ok_or_else(ApiError::no_active_model)?;
                    let p = run_prediction(&st, &handle, &st.dataset.blob(id)?, id)?;
                    st.record_prediction(id, &p)?;
                    p
                }
            };
            images.push(ReportImage { sample_id: id.clone(), prediction });
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = ReportRecord::from_draft(id, Utc::now(), draft, images)?;
        st.reports.insert(&record)?;
        Ok((StatusCode::CREATED, Json(record)))
    })
    .await
}

async fn query_reports(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Vec<ReportRecord>>, ApiError> {
    reject_unknown_params(&q, &["from", "to", "bbox", "decision"])?;
    let query = ReportQuery {
        from: parse_time(&q, "from")?,
        to: parse_time(&q, "to")?,
        bbox: q.get("bbox").map(|s| s.parse::<BoundingBox>()).transpose()?,
        decision: q
            .get("decision")
            .map(|s| match s.as_str() {
                "wssv" => Ok(Decision::Wssv),
                "healthy" => Ok(Decision::Healthy),
                other => Err(ApiError::validation("decision", format!("expected wssv or healthy, got `{other}`"))),
            })
            .transpose()?,
    };
    blocking(move || Ok(Json(st.reports.query(&query)?))).await
}

async fn get_report(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<ReportRecord>, ApiError> {
    Ok(Json(st.reports.get(&id)?))
}

async fn add_sample(State(st): State<AppState>, mp: Multipart) -> Result<(StatusCode, Json<ImageSample>), ApiError> {
    let fields = read_multipart(mp).await?;
    let image = fields.get("image").cloned().ok_or_else(|| ApiError::validation("image", "multipart field `image` is required"))?;
    let source = match text_field(&fields, "source")? {
        None => SampleSource::Import,
        Some(s) => serde_json::from_value(serde_json::Value::String(s.clone()))
            .map_err(|_| ApiError::validation("source", format!("unknown source `{s}`")))?,
    };
    let captured_at = match text_field(&fields, "captured_at")? {
        None => Utc::now(),
        Some(s) => DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| ApiError::validation("captured_at", e.to_string()))?,
    };
    let label = text_field(&fields, "label")?
        .map(|s| s.parse::<Label>())
        .transpose()
        .map_err(|e| ApiError::validation("label", e))?;
    let actor = text_field(&fields, "actor")?.unwrap_or_else(|| "api".into());
    let device_label = text_field(&fields, "device_label")?.filter(|s| !s.is_empty());
    blocking(move || {
        let existed = st.dataset.contains(&content_id(&image));
        let mut sample = st.dataset.add_sample(&image, NewSample { source, captured_at, device_label })?;
        if let Some(l) = label {
            sample = st.dataset.set_label(&sample.id, l, &actor)?;
        }
        let status = if existed { StatusCode::OK } else { StatusCode::CREATED };
        Ok((status, Json(sample)))
    })
    .await
}

async fn list_samples(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Vec<ImageSample>>, ApiError> {
    reject_unknown_params(&q, &["label", "split"])?;
    Ok(Json(st.dataset.list(&parse_filter(&q)?)))
}

async fn get_sample(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let sample = st.dataset.get(&id)?;
    Ok(Json(json!({
        "sample": sample,
        "audit": st.dataset.audit_for(&id),
        "prediction": st.recorded_prediction(&id),
    })))
}

async fn sample_image(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sample = st.dataset.get(&id)?;
    let mime = if sample.image_ref.ends_with(".png") { "image/png" } else { "image/jpeg" };
    Ok(([(header::CONTENT_TYPE, mime)], st.dataset.blob(&id)?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelUpdate {
    label: Label,
    #[serde(default)]
    actor: Option<String>,
}

async fn set_label(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<ImageSample>, ApiError> {
    let update: LabelUpdate = parse_json(&body)?;
    let actor = update.actor.unwrap_or_else(|| "api".into());
    blocking(move || Ok(Json(st.dataset.set_label(&id, update.label, &actor)?))).await
}

fn export_time(q: &HashMap<String, String>) -> Result<DateTime<Utc>, ApiError> {
    Ok(parse_time(q, "created_at")?.unwrap_or_else(Utc::now))
}

async fn export_manifest(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    reject_unknown_params(&q, &["label", "split", "created_at"])?;
    let filter = parse_filter(&q)?;
    let at = export_time(&q)?;
    blocking(move || {
        let ex = st.dataset.export(&filter, at)?;
        Ok(([(header::CONTENT_TYPE, "application/json")], ex.manifest.to_json()).into_response())
    })
    .await
}

async fn export_archive(State(st): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    reject_unknown_params(&q, &["label", "split"])?;
    let filter = parse_filter(&q)?;
    blocking(move || {
        let ex = st.dataset.export(&filter, DateTime::UNIX_EPOCH)?;
        Ok(([(header::CONTENT_TYPE, "application/x-tar")], ex.archive).into_response())
    })
    .await
}

async fn import_dataset(State(st): State<AppState>, mp: Multipart) -> Result<Json<serde_json::Value>, ApiError> {
    let fields = read_multipart(mp).await?;
    let manifest = fields.get("manifest").ok_or_else(|| ApiError::validation("manifest", "multipart field `manifest` is required"))?;
    let archive = fields.get("archive").cloned().ok_or_else(|| ApiError::validation("archive", "multipart field `archive` is required"))?;
    let manifest = DatasetManifest::from_json(manifest)?;
    blocking(move || {
        let added = st.dataset.import(&manifest, &archive)?;
        Ok(Json(json!({ "imported": added, "total": st.dataset.len() })))
    })
    .await
}

async fn list_models(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "models": st.registry.list() }))
}

async fn upload_model(State(st): State<AppState>, mp: Multipart) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let fields = read_multipart(mp).await?;
    let metadata = fields.get("metadata").ok_or_else(|| ApiError::validation("metadata", "multipart field `metadata` is required"))?;
    let metadata = ModelBundle::parse_metadata(metadata).map_err(|e| ApiError::validation("metadata", e.to_string()))?;
    let model = fields.get("model").ok_or_else(|| ApiError::validation("model", "multipart field `model` is required"))?.to_vec();
    let checksum = match text_field(&fields, "checksum")? {
        Some(line) => ModelBundle::parse_checksum_line(&line).map_err(|e| ApiError::validation("checksum", e.to_string()))?,
        None => ModelBundle::checksum_of(&model),
    };
    let bundle = ModelBundle { metadata, model_blob: model, checksum };
    blocking(move || {
        let entry = st.registry.upload(&bundle)?;
        Ok((StatusCode::CREATED, Json(json!(entry))))
    })
    .await
}

async fn activate_model(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    blocking(move || Ok(Json(json!(st.registry.activate(&id)?)))).await
}
