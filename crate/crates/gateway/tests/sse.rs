mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Response, StatusCode};
use common::*;
use dalton_core::store::{Role, UserRecord};
use futures_util::StreamExt;

/// Parsed `event:`/`data:` pairs read until `n` events or the timeout.
async fn events(resp: Response<Body>, n: usize, within: Duration) -> Vec<(String, String)> {
    let mut body = resp.into_body().into_data_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    let deadline = tokio::time::Instant::now() + within;
    while out.len() < n {
        let chunk = match tokio::time::timeout_at(deadline, body.next()).await {
            Ok(Some(Ok(c))) => c,
            _ => break,
        };
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut ev = (String::new(), String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    ev.0 = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    ev.1 = v.trim().to_string();
                }
            }
            out.push(ev);
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn device_events_arrive_in_order() {
    let mut h = Harness::new();
    h.state = h.state.clone().with_heartbeat(Duration::from_secs(60));
    let app = h.app();
    let resp = send(&app, request("GET", "/api/v1/stream?devices=h1-dining", Some(Role::Viewer), None)).await;
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    h.stream(&DEVICES, 20, 450.0);
    let evs = events(resp, 20, Duration::from_secs(5)).await;
    assert_eq!(evs.len(), 20);
    let seqs: Vec<u64> = evs
        .iter()
        .map(|(name, data)| {
            assert_eq!(name, "reading");
            let v: serde_json::Value = serde_json::from_str(data).unwrap();
            assert_eq!(v["device_id"], "h1-dining");
            v["seq"].as_u64().unwrap()
        })
        .collect();
    assert_eq!(seqs, (1..=20).collect::<Vec<u64>>());
}

#[tokio::test(flavor = "multi_thread")]
async fn idle_stream_only_heartbeats() {
    let h = Harness::new();
    let state = h.state.clone().with_heartbeat(Duration::from_millis(100));
    let app = dalton_gateway::router(state);
    let resp = send(&app, request("GET", "/api/v1/stream", Some(Role::Occupant), None)).await;
    let evs = events(resp, 3, Duration::from_secs(5)).await;
    assert_eq!(evs.len(), 3);
    assert!(evs.iter().all(|(name, _)| name == "heartbeat"), "{evs:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn expiry_closes_the_stream() {
    let h = Harness::new();
    let mut u = UserRecord::new("temp", Role::Viewer, "brief");
    u.token_expiry_ms = Some(T0 + 10_000);
    h.store.put_user(u).unwrap();
    let app = dalton_gateway::router(h.state.clone().with_heartbeat(Duration::from_secs(60)));
    let req = axum::http::Request::builder()
        .uri("/api/v1/stream")
        .header("authorization", "Bearer brief")
        .body(Body::empty())
        .unwrap();
    let resp = send(&app, req).await;
    h.clock.advance(10_000);
    let evs = events(resp, 5, Duration::from_secs(5)).await;
    assert_eq!(evs.len(), 1, "{evs:?}");
    assert_eq!(evs[0].0, "expired");
}
