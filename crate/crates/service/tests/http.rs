use std::collections::HashSet;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

use rewardtree_core::api::{LabelAccepted, PairPayload, PairResponse, RunState, RunSummary};
use rewardtree_core::orchestrator::{ReportCard, TimelineExport};
use rewardtree_core::storage::read_label_log;
use rewardtree_core::tree::{RectangleProjection, TreeExport};
use rewardtree_service::{router, AppState};

async fn call(app: &AppState, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = router(app.clone()).oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get<T: DeserializeOwned>(app: &AppState, uri: &str) -> T {
    let (status, v) = call(app, Method::GET, uri, None).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {v}");
    serde_json::from_value(v).unwrap()
}

/// Polls until the run is no longer busy.
async fn next_pair(app: &AppState, id: &str) -> PairResponse {
    for _ in 0..2000 {
        let pair: PairResponse = get(app, &format!("/v1/runs/{id}/pair")).await;
        if pair != PairResponse::Paused {
            return pair;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("run {id} stayed paused");
}

fn small_online() -> Value {
    json!({
        "mode": "online",
        "env": "foodlava",
        "config": { "n_max": 20, "f_l": 10, "k_max": 12, "f_u": 4, "n_post_fix": 5, "seed": 3 }
    })
}

fn expect_pair(p: PairResponse) -> PairPayload {
    match p {
        PairResponse::Pair(p) => *p,
        other => panic!("expected a pair, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn human_labelling_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let app = AppState::new(Some(root.path().to_path_buf()));
    let (status, v) = call(&app, Method::POST, "/v1/runs", Some(small_online())).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let run: RunSummary = serde_json::from_value(v).unwrap();
    let id = run.id.clone();
    let listed: Vec<RunSummary> = get(&app, "/v1/runs").await;
    assert_eq!(listed.len(), 1);

    let first = expect_pair(next_pair(&app, &id).await);
    let again = expect_pair(next_pair(&app, &id).await);
    assert_eq!(first.nonce, again.nonce);
    assert_eq!(first.trajectory_i.steps.len(), 200 * 4);
    assert_eq!(first.env.dimension_names, vec!["x", "y", "dx", "dy"]);

    // Out-of-range label is rejected without consuming the pair.
    let (status, _) = call(&app, Method::POST, &format!("/v1/runs/{id}/label"), Some(json!({"nonce": first.nonce, "y": 1.5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, v) = call(&app, Method::POST, &format!("/v1/runs/{id}/label"), Some(json!({"nonce": first.nonce, "y": 0.97}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let accepted: LabelAccepted = serde_json::from_value(v).unwrap();
    assert_eq!(accepted.stored_y, 0.9);
    assert_eq!(accepted.labels_spent, 1);

    let (status, _) = call(&app, Method::POST, &format!("/v1/runs/{id}/label"), Some(json!({"nonce": first.nonce, "y": 0.5}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let mut nonces = vec![first.nonce.clone()];
    loop {
        match next_pair(&app, &id).await {
            PairResponse::Pair(p) => {
                let (status, v) = call(&app, Method::POST, &format!("/v1/runs/{id}/label"), Some(json!({"nonce": p.nonce, "y": 0.3}))).await;
                assert_eq!(status, StatusCode::OK, "{v}");
                nonces.push(p.nonce.clone());
            }
            PairResponse::Exhausted => break,
            PairResponse::Paused => unreachable!(),
        }
    }
    let summary: RunSummary = get(&app, &format!("/v1/runs/{id}")).await;
    assert_eq!(summary.state, RunState::Completed);
    assert_eq!(summary.labels_spent, 12);
    assert_eq!(nonces.len(), 12);

    let log = read_label_log(&root.path().join(&id).join("labels.log")).unwrap();
    let logged: Vec<&str> = log.iter().map(|r| r.source.strip_prefix("human/").unwrap()).collect();
    assert_eq!(logged, nonces.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(logged.iter().collect::<HashSet<_>>().len(), logged.len());

    let latest: TreeExport = get(&app, &format!("/v1/runs/{id}/tree")).await;
    assert_eq!(latest.version, summary.tree_version);
    let v0: TreeExport = get(&app, &format!("/v1/runs/{id}/tree?version=0")).await;
    assert_eq!(v0.to_tree().unwrap().leaf_count(), 1);
    let (status, _) = call(&app, Method::GET, &format!("/v1/runs/{id}/tree?version=999"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let round: TreeExport = serde_json::from_str(&serde_json::to_string(&latest).unwrap()).unwrap();
    assert_eq!(round, latest);

    let timeline: TimelineExport = get(&app, &format!("/v1/runs/{id}/timeline")).await;
    assert_eq!(timeline.batches.len(), 2);
    let traces: Vec<Value> = get(&app, &format!("/v1/runs/{id}/traces")).await;
    assert_eq!(traces.len(), 25);

    let rects: RectangleProjection = get(&app, &format!("/v1/runs/{id}/rectangles?d1=x&d2=1")).await;
    assert_eq!(rects.dims, (0, 1));
    let mass: f64 = rects.rectangles.iter().map(|r| r.mass).sum();
    assert_eq!(mass, 20.0 * 200.0);
    let (status, _) = call(&app, Method::GET, &format!("/v1/runs/{id}/rectangles?d1=x&d2=speed"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let card: ReportCard = get(&app, &format!("/v1/runs/{id}/report/3")).await;
    let total: f64 = card.entries.iter().map(|e| e.contribution).sum();
    assert!((total - card.learnt_return).abs() < 1e-9);
    let (status, _) = call(&app, Method::GET, &format!("/v1/runs/{id}/report/20"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn a_nonce_is_consumed_once_under_concurrency() {
    let app = AppState::new(None);
    let (_, v) = call(&app, Method::POST, "/v1/runs", Some(small_online())).await;
    let id = v["id"].as_str().unwrap().to_string();
    let pair = expect_pair(next_pair(&app, &id).await);
    let uri = format!("/v1/runs/{id}/label");
    let attempts = (0..8).map(|k| {
        let app = app.clone();
        let uri = uri.clone();
        let nonce = pair.nonce.clone();
        tokio::spawn(async move {
            call(&app, Method::POST, &uri, Some(json!({"nonce": nonce, "y": 0.1 * (k % 10) as f64}))).await.0
        })
    });
    let mut codes = Vec::new();
    for a in attempts {
        codes.push(a.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|&&c| c == StatusCode::OK).count(), 1, "{codes:?}");
    assert!(codes.iter().all(|&c| c == StatusCode::OK || c == StatusCode::CONFLICT));
    let summary: RunSummary = get(&app, &format!("/v1/runs/{id}")).await;
    assert_eq!(summary.labels_spent, 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn oracle_runs_complete_on_their_own() {
    let app = AppState::new(None);
    let mut body = small_online();
    body["labeler"] = json!("oracle");
    let (status, v) = call(&app, Method::POST, "/v1/runs", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap().to_string();
    assert_eq!(next_pair(&app, &id).await, PairResponse::Exhausted);
    let summary: RunSummary = get(&app, &format!("/v1/runs/{id}")).await;
    assert_eq!(summary.labels_spent, 12);
    let (status, _) = call(&app, Method::POST, &format!("/v1/runs/{id}/label"), Some(json!({"nonce": "x", "y": 0.5}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn unknown_runs_and_bad_requests() {
    let app = AppState::new(None);
    let (status, v) = call(&app, Method::GET, "/v1/runs/nope/pair", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(&app, Method::POST, "/v1/runs/nope/label", Some(json!({"nonce": "a", "y": 0.5}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::POST, "/v1/runs", Some(json!({"env": "mars"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/v1/runs", Some(json!({"mode": "offline"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/v1/runs", Some(json!({"config": {"epsilon": 0.9}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
