#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use capfuse_core::backends::MockBackend;
use capfuse_core::corpus::{write_manifest, ClipRecord, Tag};
use capfuse_core::pipeline::Backends;
use capfuse_service::{AnnotatorConfig, AppState, BackendFactory, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const ADMIN: &str = "admin-token";
pub const ANNOTATORS: [&str; 5] = ["alice", "bob", "carol", "dave", "erin"];

pub fn token(annotator: &str) -> String {
    format!("tok-{annotator}")
}

pub fn service_config(data: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(data);
    c.admin_tokens = vec![ADMIN.into()];
    c.annotators = ANNOTATORS
        .iter()
        .map(|a| AnnotatorConfig {
            id: a.to_string(),
            token: token(a),
        })
        .collect();
    c
}

pub fn mock_factory(mock: Arc<MockBackend>) -> BackendFactory {
    Arc::new(move |config| Ok(Backends::with_mock(config, mock.clone())))
}

pub fn state(data: &Path, mock: Arc<MockBackend>) -> AppState {
    AppState::with_backend_factory(service_config(data), mock_factory(mock)).unwrap()
}

/// Writes `n` clips with media files and returns the manifest path.
pub fn manifest(dir: &Path, n: usize) -> PathBuf {
    let media = dir.join("media");
    std::fs::create_dir_all(&media).unwrap();
    let records: Vec<ClipRecord> = (0..n)
        .map(|i| {
            let id = format!("clip-{i:03}");
            let audio = media.join(format!("{id}.wav"));
            std::fs::write(&audio, id.as_bytes()).unwrap();
            ClipRecord::new(id, audio, None, 10.0, vec![Tag::new("Speech", 90.0)]).unwrap()
        })
        .collect();
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &records).unwrap();
    path
}

pub fn pipeline_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("pipeline.json");
    std::fs::write(&path, json).unwrap();
    path
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<String>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    Reply { status, body }
}

pub async fn get(app: &Router, uri: &str, token: Option<&str>) -> Reply {
    call(app, Method::GET, uri, token, None).await
}

pub async fn post(app: &Router, uri: &str, token: Option<&str>, body: impl Into<String>) -> Reply {
    call(app, Method::POST, uri, token, Some(body.into())).await
}

/// Polls a job until it leaves the queued/running states.
pub async fn wait_for_job(app: &Router, id: &str) -> Value {
    for _ in 0..1500 {
        let r = get(app, &format!("/jobs/{id}"), Some(ADMIN)).await;
        assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
        if matches!(r.body["status"].as_str(), Some("done" | "failed")) {
            return r.body;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("job {id} did not finish");
}

/// Tasks with `flagged` phrases each; captions are "w0 w1 ... " words.
pub fn tasks_json(n: usize, flagged: usize) -> String {
    let tasks: Vec<Value> = (0..n)
        .map(|i| {
            let words: Vec<String> = (0..flagged.max(1) + 2).map(|w| format!("w{w}")).collect();
            let caption = words.join(" ");
            let mut phrases = Vec::new();
            let mut offset = 0;
            for (w, word) in words.iter().enumerate() {
                if w < flagged {
                    phrases.push(serde_json::json!({"span": [offset, offset + word.len()], "text": word}));
                }
                offset += word.len() + 1;
            }
            serde_json::json!({
                "task_id": format!("t-{i:04}"),
                "clip_id": format!("clip-{i:03}"),
                "caption": caption,
                "flagged_phrases": phrases,
                "audio_url": format!("/media/clip-{i:03}.wav"),
            })
        })
        .collect();
    serde_json::to_string(&tasks).unwrap()
}
