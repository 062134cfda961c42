mod common;

use std::net::SocketAddr;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use twinsync::config::ScenarioConfig;
use twinsync::service::{RunStatus, ServeOptions, TwinService};

use common::load_scenario;

async fn spawn(cfg: ScenarioConfig) -> (TwinService, SocketAddr) {
    let svc = TwinService::new(
        cfg,
        ServeOptions {
            speed: f64::INFINITY,
        },
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let router = svc.router();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    (svc, addr)
}

async fn get(addr: SocketAddr, path: &str) -> Value {
    reqwest::get(format!("http://{addr}{path}")).await.unwrap().json().await.unwrap()
}

async fn post(addr: SocketAddr, path: &str, body: &str) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("http://{addr}{path}"))
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let code = r.status().as_u16();
    (code, r.json().await.unwrap_or(Value::Null))
}

async fn wait_for<F: Fn(&TwinService) -> bool>(svc: &TwinService, f: F) {
    for _ in 0..2000 {
        if f(svc) {
            return;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("condition not reached; status {:?}", svc.status());
}

async fn pending_plans(addr: SocketAddr) -> Vec<Value> {
    get(addr, "/api/pending").await["plans"].as_array().unwrap().clone()
}

#[tokio::test(flavor = "multi_thread")]
async fn state_is_idle_until_the_run_starts() {
    let (svc, addr) = spawn(load_scenario("free_motion.json")).await;
    let s = get(addr, "/api/state").await;
    assert_eq!(s["v"], 1);
    assert_eq!(s["terminal_state"], "idle");
    let m = get(addr, "/api/metrics").await;
    assert_eq!(m, json!({ "v": 1, "report": null }));
    assert!(svc.start_run());
    assert!(!svc.start_run());
    wait_for(&svc, |s| s.status() == RunStatus::Completed).await;
    let s = get(addr, "/api/state").await;
    assert_eq!(s["terminal_state"], "completed");
    for k in ["tick", "ts_r_ms", "ts_v_ms", "pr", "pv", "dev_pos_m", "dev_ts_ms", "clearance_min_m"] {
        assert!(s.get(k).is_some(), "state lacks {k}");
    }
    let m = get(addr, "/api/metrics").await;
    assert_eq!(m["report"]["terminal_state"], "completed");
    assert!(m["report"]["mae"].as_array().unwrap().len() == 6);
}

#[tokio::test(flavor = "multi_thread")]
async fn decisions_over_rest_resume_the_run() {
    let (svc, addr) = spawn(load_scenario("obstacle_sweep.json")).await;
    svc.start_run();
    let mut plans = Vec::new();
    for _ in 0..2000 {
        plans = pending_plans(addr).await;
        if !plans.is_empty() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert_eq!(plans.len(), 1);
    assert_eq!(plans[0]["status"], "awaiting-decision");
    assert_eq!(plans[0]["rehearsal"]["completed"], true);
    let id = plans[0]["id"].as_str().unwrap().to_string();
    assert_eq!(svc.status(), RunStatus::Running);

    let path = format!("/api/pending/{id}/decision");
    assert_eq!(post(addr, &path, "{\"verdict\": \"perhaps\", \"actor\": \"op\"}").await.0, 400);
    assert_eq!(post(addr, &path, "not json").await.0, 400);
    assert_eq!(post(addr, &path, "{\"verdict\": \"approve\", \"actor\": \"\"}").await.0, 400);
    assert_eq!(
        post(addr, "/api/pending/nope/decision", "{\"verdict\": \"approve\", \"actor\": \"op\"}").await.0,
        404
    );
    let (code, body) = post(addr, &path, "{\"verdict\": \"approve\", \"actor\": \"op\"}").await;
    assert_eq!(code, 200, "{body}");
    assert_eq!(body["v"], 1);
    assert_eq!(body["plan"]["id"], id.as_str());
    assert_eq!(post(addr, &path, "{\"verdict\": \"reject\", \"actor\": \"op\"}").await.0, 409);

    wait_for(&svc, |s| s.status() == RunStatus::Completed).await;
    let plans = pending_plans(addr).await;
    assert_eq!(plans[0]["status"], "deployed");
    assert_eq!(plans[0]["decision"]["actor"], "op");
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_frames_are_versioned_and_ordered() {
    let mut cfg = load_scenario("obstacle_sweep.json");
    cfg.hitl_mode = twinsync::config::HitlMode::AutoApprove;
    let (svc, addr) = spawn(cfg).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/api/stream")).await.unwrap();
    svc.start_run();
    let (mut last_tick, mut ticks, mut pending, mut terminal) = (None::<u64>, 0, 0, None);
    while terminal.is_none() {
        let msg = tokio::time::timeout(Duration::from_secs(30), ws.next()).await.unwrap().unwrap().unwrap();
        let Message::Text(text) = msg else { continue };
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["v"], 1);
        match doc["type"].as_str().unwrap() {
            "tick" => {
                let t = doc["tick"].as_u64().unwrap();
                assert!(last_tick.is_none_or(|p| t > p), "tick {t} after {last_tick:?}");
                assert_eq!(t % 10, 0);
                assert!(doc["incidents"].is_array());
                last_tick = Some(t);
                ticks += 1;
            }
            "pending" => pending += 1,
            "terminal" => terminal = Some(doc["terminal_state"].clone()),
            other => panic!("unexpected frame type {other}"),
        }
    }
    assert_eq!(terminal.unwrap(), "completed");
    assert!(ticks > 100);
    assert!(pending >= 1);
}
