#![allow(dead_code)]

use std::sync::Arc;

use acne_core::face_patches::{NullBackend, PatchGeometry, SidecarBackend};
use acne_core::image_io::encode_png;
use acne_core::model::{ProjectionBackend, RegressionHead, Scorer};
use acne_core::synth::frontal_face;
use acne_core::ImageBuffer;
use acne_service::{router, AppState, StateOptions};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

pub struct Fixture {
    pub frontal_png: Vec<u8>,
    pub blank_png: Vec<u8>,
    pub scorer: Scorer,
}

pub fn fixture() -> Fixture {
    let (img, lm) = frontal_face(320, 320, 11);
    let mut sidecars = SidecarBackend::new();
    sidecars.insert_landmarks(&img, lm);
    let backend = ProjectionBackend::new(64, 4, 256, 3).unwrap();
    let head = RegressionHead::new(&[256, 32, 16, 8, 1], 5).unwrap();
    let scorer = Scorer::new(
        Box::new(sidecars),
        Box::new(NullBackend),
        Box::new(backend),
        head,
        PatchGeometry::default(),
    )
    .unwrap();
    Fixture {
        frontal_png: encode_png(&img).unwrap(),
        blank_png: encode_png(&ImageBuffer::filled(320, 320, [200, 200, 200])).unwrap(),
        scorer,
    }
}

pub fn app(scorer: Scorer, opts: StateOptions) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(Ok(scorer), true, opts));
    (router(state.clone()), state)
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}
