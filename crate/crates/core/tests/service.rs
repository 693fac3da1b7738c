mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request};
use axum::Router;
use openpath::service::{router, AppState, ServiceOptions};
use openpath::synth::SynthData;
use openpath::{run_experiment, ExperimentData, OracleLabeler, QueryRoundRecord, Strategy};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    patches: PathBuf,
    synth: SynthData,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let patches = tmp.path().join("patches");
    let spec = common::small_spec();
    let mut synth = openpath::synth::generate(&spec).unwrap();
    // every sample gets an image reference; only the first has a file
    for r in &mut synth.pool.records {
        r.image_ref = Some(format!("img/{}.png", r.sample_id));
    }
    synth.write(&data, &common::small_config(&spec)).unwrap();
    std::fs::create_dir_all(patches.join("img")).unwrap();
    std::fs::write(patches.join("img/s000000.png"), b"\x89PNG fake").unwrap();
    Fixture {
        _tmp: tmp,
        data,
        patches,
        synth,
    }
}

fn app(f: &Fixture, state_dir: Option<&Path>) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(ServiceOptions {
        config: Some(f.data.join("experiment.toml")),
        data: Some(f.data.clone()),
        patches: Some(f.patches.clone()),
        state_dir: state_dir.map(Path::to_path_buf),
    }));
    (router(Arc::clone(&state)), state)
}

async fn raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (u16, Vec<u8>, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    (
        status,
        to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec(),
        ctype,
    )
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (u16, Value) {
    let (status, bytes, _) = raw(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn truth_labels(f: &Fixture, query: &Value) -> BTreeMap<String, String> {
    query["query"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let sid = s["sample_id"].as_str().unwrap();
            let i = f.synth.pool.index_of(sid).unwrap();
            let c = f.synth.pool.records[i].oracle_label.unwrap();
            let label = if c < 3 {
                format!("class:{c}")
            } else {
                "non-target".to_string()
            };
            (sid.to_string(), label)
        })
        .collect()
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, 201, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn label_and_advance(f: &Fixture, app: &Router, id: &str) -> Value {
    let (_, q) = call(app, Method::GET, &format!("/sessions/{id}/query"), None).await;
    let labels = truth_labels(f, &q);
    let (status, v) = call(
        app,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!(labels)),
    )
    .await;
    assert_eq!(status, 200, "{v}");
    assert_eq!(v["remaining"], 0);
    let (status, v) = call(app, Method::POST, &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(status, 200, "{v}");
    v
}

fn cli_records(f: &Fixture) -> Vec<QueryRoundRecord> {
    let config = openpath::ExperimentConfig::from_file(&f.data.join("experiment.toml")).unwrap();
    let data = ExperimentData::load(&openpath::data::DataDir::new(&f.data), &config.catalog).unwrap();
    let mut oracle = OracleLabeler { id_count: 3 };
    run_experiment(&config, Arc::new(data), &mut oracle, Strategy::Openpath)
        .unwrap()
        .rounds
        .into_iter()
        .map(|r| QueryRoundRecord { wall_time: None, ..r })
        .collect()
}

fn records(v: &Value) -> Vec<QueryRoundRecord> {
    serde_json::from_value(v["rounds"].clone()).unwrap()
}

#[tokio::test]
async fn session_state_machine_and_error_paths() {
    let f = fixture();
    let (app, _) = app(&f, None);
    let id = create(&app, json!({})).await;

    let (status, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, 200);
    assert_eq!(s["state"], json!({"state": "awaiting_labels", "round": 1}));

    let (_, q) = call(&app, Method::GET, &format!("/sessions/{id}/query"), None).await;
    assert_eq!(q["query"].as_array().unwrap().len(), 8);
    assert_eq!(q["remaining"], 8);
    let labels = truth_labels(&f, &q);
    let mut it = labels.iter();
    let (first_sid, first_label) = it.next().unwrap();

    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(status, 409, "advance with nothing labeled");

    let post = |body: Value| {
        let app = app.clone();
        let uri = format!("/sessions/{id}/labels");
        async move { call(&app, Method::POST, &uri, Some(body)).await }
    };
    assert_eq!(post(json!({ first_sid: "class:9" })).await.0, 422);
    assert_eq!(post(json!({ first_sid: "maybe" })).await.0, 422);
    assert_eq!(post(json!({ first_sid: "unlabeled" })).await.0, 422);
    assert_eq!(post(json!({ "no-such-sample": "non-target" })).await.0, 404);
    let outsider = f
        .synth
        .pool
        .records
        .iter()
        .find(|r| !labels.contains_key(&r.sample_id))
        .unwrap()
        .sample_id
        .clone();
    assert_eq!(post(json!({ outsider: "non-target" })).await.0, 409);

    let (status, v) = post(json!({ first_sid: first_label })).await;
    assert_eq!((status, v["remaining"].clone()), (200, json!(7)));
    assert_eq!(post(json!({ first_sid: "non-target" })).await.0, 409, "relabel");

    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(status, 409, "advance with 7 pending");

    let rest: BTreeMap<_, _> = it.map(|(k, v)| (k.clone(), v.clone())).collect();
    assert_eq!(post(json!(rest)).await.1["remaining"], 0);
    let (status, v) = call(&app, Method::POST, &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(status, 200);
    assert_eq!(v["state"], json!({"state": "awaiting_labels", "round": 2}));

    let (_, m) = call(&app, Method::GET, &format!("/sessions/{id}/metrics"), None).await;
    assert_eq!(records(&m).len(), 1);

    let v = label_and_advance(&f, &app, &id).await;
    assert_eq!(v["state"]["state"], "done");
    assert_eq!(records(&v["report"]).len(), 2);
    assert_eq!(
        call(&app, Method::POST, &format!("/sessions/{id}/advance"), None)
            .await
            .0,
        409
    );
    assert_eq!(post(json!({ first_sid: "non-target" })).await.0, 409);

    assert_eq!(call(&app, Method::GET, "/sessions/nope", None).await.0, 404);
    assert_eq!(
        call(&app, Method::GET, "/sessions/nope/metrics", None).await.0,
        404
    );
}

#[tokio::test]
async fn creation_validates_config_and_data() {
    let f = fixture();
    let (app, _) = app(&f, None);
    let (status, v) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "overrides": { "budget_L": 100000 } })),
    )
    .await;
    assert_eq!(status, 400, "{v}");
    assert!(v["error"].as_str().unwrap().contains("budget_L"));
    let (status, v) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "overrides": { "tau": -1.0, "rounds_R": 0 } })),
    )
    .await;
    assert_eq!(status, 400);
    let msg = v["error"].as_str().unwrap();
    assert!(msg.contains("tau") && msg.contains("rounds_R"), "{msg}");
    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "data": "/definitely/missing" })),
    )
    .await;
    assert_eq!(status, 409);
    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "strategy": "psychic" })),
    )
    .await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn images_are_served_from_the_patch_directory() {
    let f = fixture();
    let (app, _) = app(&f, None);
    let id = create(&app, json!({})).await;
    let (status, bytes, ctype) = raw(
        &app,
        Method::GET,
        &format!("/sessions/{id}/samples/s000000/image"),
        None,
    )
    .await;
    assert_eq!(status, 200);
    assert_eq!(bytes, b"\x89PNG fake");
    assert_eq!(ctype, "image/png");
    let (status, _, _) = raw(
        &app,
        Method::GET,
        &format!("/sessions/{id}/samples/s000001/image"),
        None,
    )
    .await;
    assert_eq!(status, 404);
    let (status, _, _) = raw(
        &app,
        Method::GET,
        &format!("/sessions/{id}/samples/zzz/image"),
        None,
    )
    .await;
    assert_eq!(status, 404);
}

#[tokio::test]
async fn ground_truth_session_matches_cli_run() {
    let f = fixture();
    let (app, _) = app(&f, None);
    let id = create(&app, json!({})).await;
    label_and_advance(&f, &app, &id).await;
    let done = label_and_advance(&f, &app, &id).await;
    assert_eq!(records(&done["report"]), cli_records(&f));

    let auto = create(&app, json!({ "oracle": true })).await;
    let (_, q) = call(&app, Method::GET, &format!("/sessions/{auto}/query"), None).await;
    assert_eq!(q["remaining"], 0);
    call(&app, Method::POST, &format!("/sessions/{auto}/advance"), None).await;
    let (_, done) = call(&app, Method::POST, &format!("/sessions/{auto}/advance"), None).await;
    assert_eq!(records(&done["report"]), cli_records(&f));
}

#[tokio::test]
async fn restart_replays_the_journal() {
    let f = fixture();
    let journal = tempfile::tempdir().unwrap();
    let (app1, _) = app(&f, Some(journal.path()));
    let id = create(&app1, json!({})).await;
    label_and_advance(&f, &app1, &id).await;
    let (_, q) = call(&app1, Method::GET, &format!("/sessions/{id}/query"), None).await;
    let labels = truth_labels(&f, &q);
    let half: BTreeMap<_, _> = labels.iter().take(3).collect();
    call(
        &app1,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!(half)),
    )
    .await;
    drop(app1);

    let (app2, state) = app(&f, Some(journal.path()));
    assert_eq!(state.recover().unwrap(), 1);
    let (status, q2) = call(&app2, Method::GET, &format!("/sessions/{id}/query"), None).await;
    assert_eq!(status, 200);
    assert_eq!(q2["round"], 2);
    assert_eq!(q2["remaining"], 5);
    let ids = |v: &Value| {
        v["query"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["sample_id"].clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(&q), ids(&q2));

    let sid = half.keys().next().unwrap();
    let (status, _) = call(
        &app2,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!({ *sid: "non-target" })),
    )
    .await;
    assert_eq!(status, 409, "labels from before the restart are kept");
    let rest: BTreeMap<_, _> = labels.iter().skip(3).collect();
    call(
        &app2,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!(rest)),
    )
    .await;
    let (_, done) = call(&app2, Method::POST, &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(records(&done["report"]), cli_records(&f));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn training_state_is_visible_while_advancing() {
    let f = fixture();
    let (app, _) = app(&f, None);
    let id = create(&app, json!({ "overrides": { "training": { "epochs": 40000 } } })).await;
    let (_, q) = call(&app, Method::GET, &format!("/sessions/{id}/query"), None).await;
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!(truth_labels(&f, &q))),
    )
    .await;

    let advancing = {
        let app = app.clone();
        let uri = format!("/sessions/{id}/advance");
        tokio::spawn(async move { call(&app, Method::POST, &uri, None).await })
    };
    let mut seen = Vec::new();
    while !advancing.is_finished() {
        let (status, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
        assert_eq!(status, 200);
        if seen.last() != Some(&s["state"]) {
            seen.push(s["state"].clone());
        }
        tokio::time::sleep(std::time::Duration::from_millis(2)).await;
    }
    let (status, v) = advancing.await.unwrap();
    assert_eq!(status, 200);
    assert_eq!(v["state"], json!({"state": "awaiting_labels", "round": 2}));
    assert!(
        seen.contains(&json!({"state": "training", "round": 1})),
        "{seen:?}"
    );
}
