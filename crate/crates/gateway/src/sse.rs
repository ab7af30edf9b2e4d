use std::collections::{BTreeSet, HashMap};
use std::convert::Infallible;
use std::time::{Duration, Instant};

use axum::extract::{Query, State};
use axum::response::sse::{Event, Sse};
use dalton_core::bus::{topic_leaf, HHI_PREFIX, PERSISTED_PREFIX};
use dalton_core::model::infer_site_and_room;
use futures_util::Stream;
use serde_json::json;
use tokio::sync::mpsc;

use crate::{ApiError, AppState, Endpoint, Session};

const POLL: Duration = Duration::from_millis(50);

/// `GET /stream?devices=a,b`: `reading` events for the listed devices (all
/// when omitted), `hhi` events for their sites, and a `heartbeat` event every
/// heartbeat interval. A session that expires gets a final `expired` event.
pub async fn stream(
    State(st): State<AppState>,
    session: Session,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    session.require(Endpoint::Stream)?;
    let devices: Option<BTreeSet<String>> = q.get("devices").map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .map(String::from)
            .collect()
    });
    let sites: Option<BTreeSet<String>> =
        devices.as_ref().map(|d| d.iter().map(|id| infer_site_and_room(id).0).collect());
    let bus = st.pipeline.bus();
    let data = bus
        .subscribe(&format!("{PERSISTED_PREFIX}/+"))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let hhi = bus
        .subscribe(&format!("{HHI_PREFIX}/+"))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<Event>(1024);
    let pipeline = st.pipeline.clone();
    let heartbeat = st.heartbeat;

    tokio::task::spawn_blocking(move || {
        let wanted = |set: &Option<BTreeSet<String>>, key: &str| set.as_ref().is_none_or(|s| s.contains(key));
        let mut last_beat = Instant::now();
        loop {
            if tx.is_closed() {
                break;
            }
            let now = pipeline.now_ms();
            if session.expired(now) {
                let ev = Event::default().event("expired").data(json!({ "ts_ms": now }).to_string());
                let _ = tx.blocking_send(ev);
                break;
            }
            let mut out = Vec::new();
            match data.recv_timeout(POLL) {
                Ok(Some(m)) => {
                    let mut batch = vec![m];
                    batch.extend(data.drain());
                    for m in batch {
                        if wanted(&devices, topic_leaf(&m.topic)) {
                            if let Some(text) = m.payload_str() {
                                out.push(Event::default().event("reading").id(m.seq.to_string()).data(text));
                            }
                        }
                    }
                }
                Ok(None) => {}
                Err(_) => break,
            }
            for m in hhi.drain() {
                if wanted(&sites, topic_leaf(&m.topic)) {
                    if let Some(text) = m.payload_str() {
                        out.push(Event::default().event("hhi").data(text));
                    }
                }
            }
            if last_beat.elapsed() >= heartbeat {
                out.push(Event::default().event("heartbeat").data(json!({ "ts_ms": now }).to_string()));
                last_beat = Instant::now();
            }
            for ev in out {
                if tx.blocking_send(ev).is_err() {
                    return;
                }
            }
        }
    });

    let events = futures_util::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|e| (Ok(e), rx)) });
    Ok(Sse::new(events))
}
