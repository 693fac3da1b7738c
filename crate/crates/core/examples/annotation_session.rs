//! Drives the annotation API in-process the way a browser client would:
//! create a session, read each query, post labels, advance, and finally
//! read the per-round metrics. Labels come from the benchmark's ground truth.
//!
//! ```bash
//! cargo run --release --example annotation_session
//! ```
//!
//! The same routes are served over HTTP by `openpath serve --data DIR`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request};
use axum::Router;
use openpath::service::{router, AppState, ServiceOptions};
use openpath::synth::{generate, SynthSpec};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (u16, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> openpath::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec::default();
    let synth = generate(&spec)?;
    synth.write(dir.path(), &spec.experiment_config())?;
    let truth: BTreeMap<String, usize> = synth
        .pool
        .records
        .iter()
        .map(|r| (r.sample_id.clone(), r.oracle_label.unwrap()))
        .collect();

    let app = router(Arc::new(AppState::new(ServiceOptions {
        config: Some(dir.path().join("experiment.toml")),
        data: Some(dir.path().to_path_buf()),
        patches: None,
        state_dir: None,
    })));

    let (status, created) = call(&app, Method::POST, "/sessions", Some(json!({}))).await;
    println!("POST /sessions -> {status}");
    let id = created["session_id"].as_str().unwrap().to_string();

    loop {
        let (_, q) = call(&app, Method::GET, &format!("/sessions/{id}/query"), None).await;
        if q["state"]["state"] == "done" {
            break;
        }
        let labels: BTreeMap<String, String> = q["query"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| {
                let sid = s["sample_id"].as_str().unwrap();
                let c = truth[sid];
                let label = if c < spec.id_classes {
                    format!("class:{c}")
                } else {
                    "non-target".into()
                };
                (sid.to_string(), label)
            })
            .collect();
        let (_, r) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/labels"),
            Some(json!(labels)),
        )
        .await;
        let (status, next) = call(&app, Method::POST, &format!("/sessions/{id}/advance"), None).await;
        println!(
            "round {} labeled ({} remaining), advance -> {status} {}",
            q["round"], r["remaining"], next["state"]["state"]
        );
    }

    let (_, metrics) = call(&app, Method::GET, &format!("/sessions/{id}/metrics"), None).await;
    for r in metrics["rounds"].as_array().unwrap() {
        println!(
            "round {}  qp {:.3}  macc {:.3}",
            r["round"],
            r["qp"].as_f64().unwrap(),
            r["macc"].as_f64().unwrap()
        );
    }
    Ok(())
}
