use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lipkit_core::ranking::{elo_ratings, read_jsonl};
use lipkit_core::{RatingTable, Winner};
use lipkit_service::{
    round_robin_pool, router, PairAssignment, PoolPair, StudyConfig, StudyState, SystemClock,
};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path, pool: Vec<PoolPair>, seed: u64) -> (Router, Arc<StudyState>) {
    let mut cfg = StudyConfig::new(pool, dir.join("votes.jsonl"));
    cfg.seed = seed;
    let state = Arc::new(StudyState::open(cfg, Arc::new(SystemClock)).unwrap());
    (router(state.clone(), Some(dir), None), state)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_vote(body: Value) -> Request<Body> {
    Request::post("/vote")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn fetch_pair(app: &Router, annotator: &str) -> PairAssignment {
    let (status, v) = call(app, get(&format!("/pair?annotator={annotator}"))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn log_lines(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("votes.jsonl"))
        .map(|t| t.lines().count())
        .unwrap_or(0)
}

#[tokio::test]
async fn health_and_pair_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), round_robin_pool(&["a", "b"], "c1"), 1);
    let (status, v) = call(&app, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["pairs"], 1);

    assert_eq!(call(&app, get("/pair")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, get("/pair?annotator=")).await.0,
        StatusCode::BAD_REQUEST
    );

    let (empty, _) = self::app(dir.path(), Vec::new(), 1);
    assert_eq!(
        call(&empty, get("/pair?annotator=x")).await.0,
        StatusCode::CONFLICT
    );
}

#[tokio::test]
async fn single_pair_pool_shows_both_orders() {
    let dir = tempfile::tempdir().unwrap();
    let pool = round_robin_pool(&["a", "b"], "c1");
    let (app, _) = app(dir.path(), pool.clone(), 5);
    let mut lefts = std::collections::BTreeSet::new();
    for _ in 0..40 {
        let p = fetch_pair(&app, "ann").await;
        assert_eq!(p.pair_id, pool[0].pair_id);
        assert_ne!(p.media_url_left, p.media_url_right);
        lefts.insert(p.media_url_left);
    }
    assert_eq!(
        lefts.into_iter().collect::<Vec<_>>(),
        vec!["/media/a/c1.mp4".to_string(), "/media/b/c1.mp4".to_string()]
    );
}

#[tokio::test]
async fn vote_duplicate_and_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), round_robin_pool(&["a", "b"], "c1"), 2);
    let p = fetch_pair(&app, "ann").await;
    let body = json!({"assignment_id": p.assignment_id, "choice": "left", "annotator": "ann"});

    let (status, v) = call(&app, post_vote(body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["log_length"], 1);
    assert_eq!(log_lines(dir.path()), 1);

    assert_eq!(call(&app, post_vote(body)).await.0, StatusCode::CONFLICT);
    assert_eq!(log_lines(dir.path()), 1);

    let unknown = json!({"assignment_id": "nope", "choice": "left", "annotator": "ann"});
    assert_eq!(
        call(&app, post_vote(unknown)).await.0,
        StatusCode::NOT_FOUND
    );
    let anonymous = json!({"assignment_id": "nope", "choice": "left"});
    assert_eq!(
        call(&app, post_vote(anonymous)).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(log_lines(dir.path()), 1);
}

#[tokio::test]
async fn winner_follows_presentation_order() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(dir.path(), round_robin_pool(&["a", "b"], "c1"), 3);
    let mut seen = [false, false];
    for _ in 0..20 {
        let p = fetch_pair(&app, "ann").await;
        let b_on_left = p.media_url_left.contains("/b/");
        seen[b_on_left as usize] = true;
        let body = json!({"assignment_id": p.assignment_id, "choice": "left", "annotator": "ann"});
        assert_eq!(call(&app, post_vote(body)).await.0, StatusCode::OK);
        let last = state.votes().pop().unwrap();
        let expected = if b_on_left { Winner::B } else { Winner::A };
        assert_eq!(last.winner, expected);
        assert_eq!((last.model_a.as_str(), last.model_b.as_str()), ("a", "b"));
    }
    assert_eq!(seen, [true, true]);
}

#[tokio::test]
async fn rankings_empty_and_single_vote() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), round_robin_pool(&["a", "b", "c"], "c1"), 4);
    let (status, v) = call(&app, get("/rankings")).await;
    assert_eq!(status, StatusCode::OK);
    let table: RatingTable = serde_json::from_value(v).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert!(table
        .rows
        .iter()
        .all(|r| r.rating == 1000.0 && r.games == 0));

    let p = fetch_pair(&app, "ann").await;
    let body = json!({"assignment_id": p.assignment_id, "choice": "right", "annotator": "ann"});
    assert_eq!(call(&app, post_vote(body)).await.0, StatusCode::OK);
    let table: RatingTable = serde_json::from_value(call(&app, get("/rankings")).await.1).unwrap();
    let mut ratings: Vec<f64> = table.rows.iter().map(|r| r.rating).collect();
    ratings.sort_by(f64::total_cmp);
    assert_eq!(ratings, vec![984.0, 1000.0, 1016.0]);

    let (status, v) = call(&app, get("/rankings?bootstrap=true")).await;
    assert_eq!(status, StatusCode::OK);
    let boot: RatingTable = serde_json::from_value(v).unwrap();
    assert!(boot
        .rows
        .iter()
        .all(|r| r.ci_low <= r.rating && r.rating <= r.ci_high));
}

#[tokio::test]
async fn serves_are_uniform_over_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let pool = round_robin_pool(&["m1", "m2", "m3", "m4", "m5"], "c");
    let (_, state) = app(dir.path(), pool.clone(), 11);
    let n = 10_000usize;
    let mut counts = std::collections::HashMap::new();
    for _ in 0..n {
        *counts
            .entry(state.serve_pair(Some("ann")).unwrap().pair_id)
            .or_insert(0usize) += 1;
    }
    let k = pool.len() as f64;
    let expected = n as f64 / k;
    let sd = (n as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
    let mut chi2 = 0.0;
    for p in &pool {
        let c = counts[&p.pair_id] as f64;
        assert!((c - expected).abs() <= 3.0 * sd, "{}: {c}", p.pair_id);
        chi2 += (c - expected).powi(2) / expected;
    }
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.877, "chi2 = {chi2}");
}

#[tokio::test]
async fn static_media_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("a")).unwrap();
    std::fs::write(dir.path().join("a/c1.mp4"), b"not really a video").unwrap();
    let (app, _) = app(dir.path(), round_robin_pool(&["a", "b"], "c1"), 1);
    let resp = app.clone().oneshot(get("/media/a/c1.mp4")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(
        &resp.into_body().collect().await.unwrap().to_bytes()[..],
        b"not really a video"
    );

    let req = Request::get("/health")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp
        .headers()
        .contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_votes_match_offline_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(
        dir.path(),
        round_robin_pool(&["m1", "m2", "m3", "m4", "m5"], "c"),
        9,
    );
    let mut tasks = Vec::new();
    for i in 0..50 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let annotator = format!("ann{}", i % 7);
            let p = fetch_pair(&app, &annotator).await;
            let choice = if i % 3 == 0 { "right" } else { "left" };
            let body =
                json!({"assignment_id": p.assignment_id, "choice": choice, "annotator": annotator});
            call(&app, post_vote(body)).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let persisted = read_jsonl(&dir.path().join("votes.jsonl")).unwrap();
    assert_eq!(persisted.len(), 50);
    assert_eq!(persisted, state.votes());

    let live: RatingTable = serde_json::from_value(call(&app, get("/rankings")).await.1).unwrap();
    let offline = elo_ratings(&persisted, &state.config().elo).unwrap();
    assert_eq!(live, offline);
}
