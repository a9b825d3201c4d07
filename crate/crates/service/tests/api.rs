use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use parkwatch_core::catalog::{Block, ClassEntry, ClockTime, Day};
use parkwatch_core::simulator::{generate, LotScript};
use parkwatch_core::Registry;
use parkwatch_service::{router, AppState, Clock, ServiceConfig, SESSION_COOKIE};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Harness {
    app: Router,
    state: AppState,
    _dir: tempfile::TempDir,
    lots: Vec<(String, String)>,
}

fn lot_script(lot_id: &str, cols: u32, arrivals: &[u32]) -> LotScript {
    let events: Vec<Value> = arrivals
        .iter()
        .map(|&s| json!({"frame": 3, "slot_id": s, "action": "arrive"}))
        .collect();
    LotScript::from_json(
        &json!({
            "lot_id": lot_id, "width": 120, "height": 40,
            "grid": {"rows": 1, "cols": cols, "slot_w": 20, "slot_h": 30, "gutter": 4},
            "total_frames": 12,
            "events": events,
        })
        .to_string(),
    )
    .unwrap()
}

fn class(id: &str, days: &[Day], start: (u16, u16), end: (u16, u16), home: &str) -> ClassEntry {
    ClassEntry {
        class_id: id.into(),
        title: format!("Course {id}"),
        days: days.to_vec(),
        start_time: ClockTime::hm(start.0, start.1).unwrap(),
        end_time: ClockTime::hm(end.0, end.1).unwrap(),
        home_block: home.into(),
    }
}

/// Two simulated lots, A (4 slots, 3 taken) and B (3 slots, 1 taken), and six classes.
fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let registry = Registry::in_memory().with_iterations(10);
    let mut lots = Vec::new();
    for (id, cols, arrivals) in [("A", 4, vec![1, 2, 4]), ("B", 3, vec![2])] {
        let out = dir.path().join(id);
        generate(&lot_script(id, cols, &arrivals), 7, &out).unwrap();
        registry
            .upsert_block(Block {
                block_id: id.into(),
                display_name: format!("Lot {id}"),
                slot_map_path: out.join("slotmap.json").to_string_lossy().into_owned(),
            })
            .unwrap();
        lots.push((
            out.join("frames").to_string_lossy().into_owned(),
            out.join("ref.pgm").to_string_lossy().into_owned(),
        ));
    }
    let mwf = [Day::Mon, Day::Wed, Day::Fri];
    let tt = [Day::Tue, Day::Thu];
    for c in [
        class("CMSC101", &mwf, (10, 0), (10, 50), "A"),
        class("CMSC202", &tt, (9, 30), (10, 45), "A"),
        class("CMSC313", &[Day::Mon, Day::Wed], (13, 0), (14, 15), "A"),
        class("CMSC341", &tt, (14, 30), (15, 45), "B"),
        class("CMSC411", &[Day::Mon, Day::Wed], (13, 0), (14, 15), "B"),
        class("CMSC421", &[Day::Mon, Day::Fri], (16, 0), (17, 15), "B"),
    ] {
        registry.upsert_class(c).unwrap();
    }
    // Monday 2026-10-12 09:00 at UTC-05:00.
    let clock = Clock::Fixed(Utc.with_ymd_and_hms(2026, 10, 12, 14, 0, 0).unwrap());
    let state = AppState::new(Arc::new(registry), ServiceConfig::default(), clock);
    Harness {
        app: router(state.clone()),
        state,
        _dir: dir,
        lots,
    }
}

struct Reply {
    status: StatusCode,
    set_cookie: Option<String>,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap()
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>, cookie: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(token) = cookie {
        req = req.header(header::COOKIE, format!("{SESSION_COOKIE}={token}"));
    }
    let req = match body {
        Some(v) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let set_cookie = resp
        .headers()
        .get(header::SET_COOKIE)
        .map(|v| v.to_str().unwrap().to_owned());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        set_cookie,
        bytes,
    }
}

async fn sign_in(app: &Router, user: &str) -> String {
    let creds = json!({"username": user, "password": "xk8#Lq2!vR"});
    assert_eq!(call(app, Method::POST, "/api/register", Some(creds.clone()), None).await.status, StatusCode::CREATED);
    let reply = call(app, Method::POST, "/api/login", Some(creds), None).await;
    assert_eq!(reply.status, StatusCode::OK);
    let cookie = reply.set_cookie.unwrap();
    assert!(cookie.contains("HttpOnly"));
    assert!(cookie.contains("Max-Age=1209600"));
    let token = cookie
        .strip_prefix(&format!("{SESSION_COOKIE}="))
        .and_then(|rest| rest.split(';').next())
        .unwrap()
        .to_owned();
    assert_eq!(token.len(), 32);
    token
}

async fn register_videos(h: &Harness, token: &str) {
    for (block, (frames, reference)) in ["A", "B"].iter().zip(&h.lots) {
        let body = json!({"block_id": block, "frames_path": frames, "reference_path": reference});
        let reply = call(&h.app, Method::POST, "/api/videos", Some(body), Some(token)).await;
        assert_eq!(reply.status, StatusCode::CREATED);
    }
}

async fn wait_done(h: &Harness, token: &str, job_id: &str) -> Value {
    for _ in 0..500 {
        let reply = call(&h.app, Method::GET, &format!("/api/jobs/{job_id}/events"), None, Some(token)).await;
        let view = reply.json();
        if view["state"] == "done" || view["state"] == "failed" {
            return view;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {job_id} did not finish");
}

#[tokio::test]
async fn login_failures_are_indistinguishable() {
    let h = harness();
    sign_in(&h.app, "alice").await;
    let wrong = call(&h.app, Method::POST, "/api/login", Some(json!({"username": "alice", "password": "not-it-at-all"})), None).await;
    let unknown = call(&h.app, Method::POST, "/api/login", Some(json!({"username": "mallory", "password": "xk8#Lq2!vR"})), None).await;
    assert_eq!(wrong.status, StatusCode::UNAUTHORIZED);
    assert_eq!(unknown.status, StatusCode::UNAUTHORIZED);
    assert_eq!(wrong.bytes, unknown.bytes);
    assert_eq!(wrong.json()["error_code"], "invalid_credentials");
}

#[tokio::test]
async fn registration_enforces_policy_and_uniqueness() {
    let h = harness();
    let cases = [
        ("bob", "short", "PasswordTooShort"),
        ("bob", "12345678", "PasswordAllNumeric"),
        ("bob", "password", "PasswordTooCommon"),
        ("bob", "bob-is-great", "PasswordSimilarToUsername"),
    ];
    for (user, pass, code) in cases {
        let reply = call(&h.app, Method::POST, "/api/register", Some(json!({"username": user, "password": pass})), None).await;
        assert_eq!(reply.status, StatusCode::UNPROCESSABLE_ENTITY, "{pass}");
        assert_eq!(reply.json()["error_code"], code, "{pass}");
    }
    sign_in(&h.app, "bob").await;
    let again = call(&h.app, Method::POST, "/api/register", Some(json!({"username": "bob", "password": "xk8#Lq2!vR"})), None).await;
    assert_eq!(again.status, StatusCode::CONFLICT);
    assert_eq!(again.json()["error_code"], "UsernameTaken");
}

#[tokio::test]
async fn protected_routes_require_a_session() {
    let h = harness();
    for (method, uri) in [
        (Method::GET, "/api/classes"),
        (Method::GET, "/api/schedule"),
        (Method::GET, "/api/videos"),
        (Method::POST, "/api/find-parking"),
        (Method::GET, "/api/suggestion"),
    ] {
        for cookie in [None, Some("0123456789abcdef0123456789abcdef")] {
            let reply = call(&h.app, method.clone(), uri, None, cookie).await;
            assert_eq!(reply.status, StatusCode::UNAUTHORIZED, "{uri}");
            assert_eq!(reply.json()["error_code"], "unauthenticated");
        }
    }
    let token = sign_in(&h.app, "carol").await;
    assert_eq!(call(&h.app, Method::GET, "/api/classes", None, Some(&token)).await.status, StatusCode::OK);
    let out = call(&h.app, Method::POST, "/api/logout", None, Some(&token)).await;
    assert_eq!(out.status, StatusCode::NO_CONTENT);
    assert_eq!(call(&h.app, Method::GET, "/api/classes", None, Some(&token)).await.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn schedule_lists_all_classes_with_enrollment() {
    let h = harness();
    let token = sign_in(&h.app, "dana").await;
    let selections = json!({"selections": {"CMSC101": true, "CMSC341": true, "CMSC421": true, "CMSC202": false}});
    let reply = call(&h.app, Method::PUT, "/api/schedule", Some(selections), Some(&token)).await;
    assert_eq!(reply.status, StatusCode::OK);
    let listed = call(&h.app, Method::GET, "/api/schedule", None, Some(&token)).await.json();
    let rows = listed.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let enrolled: BTreeSet<&str> = rows
        .iter()
        .filter(|r| r["enrolled"] == true)
        .map(|r| r["class_id"].as_str().unwrap())
        .collect();
    assert_eq!(enrolled, BTreeSet::from(["CMSC101", "CMSC341", "CMSC421"]));

    let bad = call(&h.app, Method::PUT, "/api/schedule", Some(json!({"selections": {"NOPE": true}})), Some(&token)).await;
    assert_eq!(bad.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(bad.json()["class_id"], "NOPE");
}

#[tokio::test]
async fn find_parking_names_the_block_without_video() {
    let h = harness();
    let token = sign_in(&h.app, "erin").await;
    let (frames, reference) = &h.lots[0];
    let body = json!({"block_id": "A", "frames_path": frames, "reference_path": reference});
    assert_eq!(call(&h.app, Method::POST, "/api/videos", Some(body), Some(&token)).await.status, StatusCode::CREATED);
    let reply = call(&h.app, Method::POST, "/api/find-parking", None, Some(&token)).await;
    assert_eq!(reply.status, StatusCode::CONFLICT);
    let v = reply.json();
    assert_eq!(v["error_code"], "NoVideoRegistered");
    assert_eq!(v["block_id"], "B");

    let unknown = json!({"block_id": "Z", "frames_path": "x", "reference_path": "y"});
    let reply = call(&h.app, Method::POST, "/api/videos", Some(unknown), Some(&token)).await;
    assert_eq!(reply.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(reply.json()["block_id"], "Z");
}

#[tokio::test]
async fn suggestion_requires_finished_jobs() {
    let h = harness();
    let token = sign_in(&h.app, "fay").await;
    let none = call(&h.app, Method::GET, "/api/suggestion", None, Some(&token)).await;
    assert_eq!(none.status, StatusCode::CONFLICT);
    assert_eq!(none.json()["error_code"], "NoDetectionRun");

    register_videos(&h, &token).await;
    let records: Vec<_> = ["A", "B"].iter().map(|b| h.state.registry().latest_video(b).unwrap()).collect();
    h.state.jobs().create_batch("fay", &records);
    let pending = call(&h.app, Method::GET, "/api/suggestion", None, Some(&token)).await;
    assert_eq!(pending.status, StatusCode::CONFLICT);
    assert_eq!(pending.json()["error_code"], "JobsPending");
}

#[tokio::test]
async fn failed_job_blocks_the_suggestion() {
    let h = harness();
    let token = sign_in(&h.app, "gus").await;
    register_videos(&h, &token).await;
    let broken = json!({"block_id": "B", "frames_path": "/nonexistent/frames", "reference_path": "/nonexistent/ref.pgm"});
    call(&h.app, Method::POST, "/api/videos", Some(broken), Some(&token)).await;
    let jobs = call(&h.app, Method::POST, "/api/find-parking", None, Some(&token)).await.json();
    for job in jobs["jobs"].as_array().unwrap() {
        wait_done(&h, &token, job["job_id"].as_str().unwrap()).await;
    }
    let reply = call(&h.app, Method::GET, "/api/suggestion", None, Some(&token)).await;
    assert_eq!(reply.status, StatusCode::CONFLICT);
    assert_eq!(reply.json()["error_code"], "JobFailed");
    assert_eq!(reply.json()["block_id"], "B");
}

#[tokio::test]
async fn polling_pages_concatenate_to_the_full_log() {
    let h = harness();
    let token = sign_in(&h.app, "hal").await;
    register_videos(&h, &token).await;
    let reply = call(&h.app, Method::POST, "/api/find-parking", None, Some(&token)).await;
    assert_eq!(reply.status, StatusCode::ACCEPTED);
    let jobs = reply.json()["jobs"].as_array().unwrap().clone();
    let blocks: Vec<&str> = jobs.iter().map(|j| j["block_id"].as_str().unwrap()).collect();
    assert_eq!(blocks, ["A", "B"]);

    for job in &jobs {
        let id = job["job_id"].as_str().unwrap();
        let mut since = 0;
        let mut pieces = Vec::new();
        loop {
            let view = call(&h.app, Method::GET, &format!("/api/jobs/{id}/events?since={since}"), None, Some(&token)).await.json();
            let page = view["events"].as_array().unwrap().clone();
            assert_eq!(view["last_index"].as_u64().unwrap() as usize, since + page.len());
            since += page.len();
            pieces.extend(page);
            if view["state"] == "done" && view["events"].as_array().unwrap().is_empty() {
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        let full = wait_done(&h, &token, id).await;
        assert_eq!(Value::Array(pieces), full["events"]);
        let last = full["events"].as_array().unwrap().last().unwrap().clone();
        assert_eq!(last["available"], full["final"]["available"]);
    }

    let s = call(&h.app, Method::GET, "/api/suggestion", None, Some(&token)).await;
    assert_eq!(s.status, StatusCode::OK);
    // Nothing enrolled: the block with the most free slots wins (A 1/4, B 2/3).
    assert_eq!(
        s.json(),
        json!({"block_id": "B", "reason": "no_upcoming_class_max_availability", "class_id": null, "available": 2, "total": 3})
    );

    let selections = json!({"selections": {"CMSC101": true}});
    call(&h.app, Method::PUT, "/api/schedule", Some(selections), Some(&token)).await;
    let s = call(&h.app, Method::GET, "/api/suggestion", None, Some(&token)).await.json();
    assert_eq!(
        s,
        json!({"block_id": "A", "reason": "upcoming_class", "class_id": "CMSC101", "available": 1, "total": 4})
    );
}

#[tokio::test]
async fn unknown_job_and_endpoint_use_the_envelope() {
    let h = harness();
    let token = sign_in(&h.app, "ivy").await;
    let reply = call(&h.app, Method::GET, "/api/jobs/deadbeef/events", None, Some(&token)).await;
    assert_eq!(reply.status, StatusCode::NOT_FOUND);
    assert_eq!(reply.json()["error_code"], "JobNotFound");
    let reply = call(&h.app, Method::GET, "/api/nowhere", None, None).await;
    assert_eq!(reply.status, StatusCode::NOT_FOUND);
    assert_eq!(reply.json()["error_code"], "NotFound");
    let reply = call(&h.app, Method::POST, "/api/login", Some(json!({"username": "x"})), None).await;
    assert_eq!(reply.status.as_u16() / 100, 4);
    assert!(reply.json()["error_code"].is_string());
}

#[test]
fn harness_paths_exist() {
    let h = harness();
    for (frames, reference) in &h.lots {
        assert!(Path::new(frames).is_dir());
        assert!(Path::new(reference).is_file());
    }
}
