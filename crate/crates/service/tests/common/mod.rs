#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use myfood_core::dataset::synthetic::{write_fixture, SyntheticConfig};
use myfood_core::dataset::{ClassTaxonomy, Dataset};
use myfood_service::api::{router, AppState, Ready};
use myfood_service::config::ServiceConfig;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub struct Fixture {
    pub dir: TempDir,
    pub dataset: Dataset,
    pub config: ServiceConfig,
}

pub fn repo_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(name)
}

/// Synthetic dataset served by the oracle, with the shipped nutrition data.
pub fn fixture(count: usize, side: u32) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = SyntheticConfig {
        count,
        side,
        seed: 11,
        ..Default::default()
    };
    let dataset = write_fixture(&dir.path().join("ds"), &ClassTaxonomy::brazilian_food(), &config).unwrap();
    let toml = format!(
        "model = \"oracle\"\ndataset = \"ds\"\nnutrition = {:?}\ncalibration = {:?}\ndiary = \"diary.jsonl\"\n",
        repo_file("data/nutrition.csv"),
        repo_file("data/calibration.csv"),
    );
    let config = ServiceConfig::parse(&toml, dir.path()).unwrap();
    config.check_paths().unwrap();
    Fixture { dir, dataset, config }
}

impl Fixture {
    pub fn app(&self, loaded: bool) -> Router {
        let state = AppState::new(self.config.max_upload_bytes, self.config.inference_workers);
        if loaded {
            state.initialize(Ready::load(&self.config).unwrap());
        }
        router(Arc::clone(&state))
    }

    pub fn image_bytes(&self, image_id: &str) -> Vec<u8> {
        std::fs::read(self.dataset.image_path(image_id)).unwrap()
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> Reply {
    let request = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, bytes }
}
