//! Shared helpers for driving the router in-process.
#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use wssv_core::imaging::{encode_png, ImageTensor};
use wssv_core::inference::ModelBundle;
use wssv_server::{router, AppState, ServerConfig};

pub struct TestServer {
    pub app: Router,
    pub state: AppState,
    _dir: tempfile::TempDir,
}

pub fn server() -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig { data_dir: dir.path().to_path_buf(), ..Default::default() };
    let state = AppState::open(config).unwrap();
    TestServer { app: router(state.clone()), state, _dir: dir }
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn error_field(&self) -> Option<String> {
        self.json()["error"]["field"].as_str().map(str::to_string)
    }

    pub fn error_kind(&self) -> String {
        self.json()["error"]["kind"].as_str().unwrap_or_default().to_string()
    }
}

pub enum Part<'a> {
    Text(&'a str, &'a str),
    File(&'a str, &'a [u8]),
}

const BOUNDARY: &str = "wssv-test-boundary-7f3a";

pub fn multipart(parts: &[Part<'_>]) -> (String, Vec<u8>) {
    let mut body = Vec::new();
    for part in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match part {
            Part::Text(name, value) => {
                body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
                body.extend_from_slice(value.as_bytes());
            }
            Part::File(name, bytes) => {
                body.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}.bin\"\r\nContent-Type: application/octet-stream\r\n\r\n"
                    )
                    .as_bytes(),
                );
                body.extend_from_slice(bytes);
            }
        }
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={BOUNDARY}"), body)
}

impl TestServer {
    pub async fn send(&self, method: Method, uri: &str, content_type: Option<&str>, body: Vec<u8>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(ct) = content_type {
            req = req.header("content-type", ct);
        }
        let resp = self.app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
        let status = resp.status();
        let content_type = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, content_type, body }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send(Method::GET, uri, None, vec![]).await
    }

    pub async fn post_json(&self, uri: &str, value: &Value) -> Reply {
        self.send(Method::POST, uri, Some("application/json"), serde_json::to_vec(value).unwrap()).await
    }

    pub async fn put_json(&self, uri: &str, value: &Value) -> Reply {
        self.send(Method::PUT, uri, Some("application/json"), serde_json::to_vec(value).unwrap()).await
    }

    pub async fn post_multipart(&self, uri: &str, parts: &[Part<'_>]) -> Reply {
        let (ct, body) = multipart(parts);
        self.send(Method::POST, uri, Some(&ct), body).await
    }

    pub async fn upload_bundle(&self, bundle: &ModelBundle) -> Reply {
        let meta = serde_json::to_string(&bundle.metadata).unwrap();
        let line = format!("{}  model.onnx", bundle.checksum);
        self.post_multipart(
            "/api/v1/models",
            &[Part::Text("metadata", &meta), Part::File("model", &bundle.model_blob), Part::Text("checksum", &line)],
        )
        .await
    }

    pub async fn activate(&self, id: &str) -> Reply {
        self.send(Method::POST, &format!("/api/v1/models/{id}/activate"), None, vec![]).await
    }

    pub async fn predict(&self, image: &[u8], saliency: bool) -> Reply {
        self.post_multipart(&format!("/api/v1/predict?saliency={saliency}"), &[Part::File("image", image)]).await
    }
}

/// A small PNG whose bytes depend on `seed`.
pub fn png(side: u32, seed: u8) -> Vec<u8> {
    let img = ImageTensor::from_fn(side, side, |x, y| {
        [seed, (x * 255 / side) as u8, (y * 255 / side) as u8]
    })
    .unwrap();
    encode_png(&img).unwrap()
}

/// Count of active entries in a `GET /api/v1/models` reply.
pub fn active_count(models: &Value) -> usize {
    models["models"].as_array().unwrap().iter().filter(|m| m["active"] == true).count()
}
