#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, Response};
use axum::Router;
use dalton_core::bus::{data_topic, Bus};
use dalton_core::clock::ManualClock;
use dalton_core::hhi::CalibrationTable;
use dalton_core::model::{PollutantKind, Reading};
use dalton_core::pipeline::{Pipeline, PipelineConfig};
use dalton_core::store::{Role, Store, StoreOptions, UserRecord};
use dalton_gateway::{router, AppState};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const T0: i64 = 1_700_000_000_000;
pub const DEVICES: [&str; 5] = ["h1-kitchen", "h1-dining", "h1-living", "h1-bedroom", "h1-study"];

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub clock: ManualClock,
    pub bus: Bus,
    pub store: Arc<Store>,
    pub pipeline: Arc<Pipeline>,
    pub state: AppState,
    seq: u64,
}

pub fn token(role: Role) -> &'static str {
    match role {
        Role::Admin => "admin-token",
        Role::Viewer => "viewer-token",
        Role::Occupant => "occupant-token",
    }
}

impl Harness {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path(), StoreOptions::default()).unwrap());
        for role in [Role::Admin, Role::Viewer, Role::Occupant] {
            let mut u = UserRecord::new(format!("{role:?}").to_lowercase(), role, token(role));
            if role == Role::Occupant {
                u.site_id = Some("h1".into());
            }
            store.put_user(u).unwrap();
        }
        let clock = ManualClock::new(T0);
        let bus = Bus::new();
        let pipeline = Arc::new(
            Pipeline::new(bus.clone(), store.clone(), Arc::new(clock.clone()), PipelineConfig::default()).unwrap(),
        );
        let state = AppState::new(pipeline.clone(), CalibrationTable::default());
        Harness {
            dir,
            clock,
            bus,
            store,
            pipeline,
            state,
            seq: 0,
        }
    }

    pub fn app(&self) -> Router {
        router(self.state.clone())
    }

    /// One reading per device per second for `seconds`, then pumps the hub.
    pub fn stream(&mut self, devices: &[&str], seconds: u64, co2: f64) {
        for _ in 0..seconds {
            self.seq += 1;
            let now = self.clock.now();
            for d in devices {
                let r = Reading::new(*d, self.seq, now)
                    .with(PollutantKind::Co2, co2)
                    .with(PollutantKind::Voc, 230.0)
                    .with(PollutantKind::Pm2_5, 5.0)
                    .with(PollutantKind::Pm10, 10.0)
                    .with(PollutantKind::Temperature, 24.0)
                    .with(PollutantKind::Humidity, 50.0);
                self.bus.publish(&data_topic(d), r.to_canonical_json()).unwrap();
            }
            self.pipeline.pump().unwrap();
            self.pipeline.tick(now).unwrap();
            self.clock.advance(1000);
        }
    }
}

pub trait ClockExt {
    fn now(&self) -> i64;
}

impl ClockExt for ManualClock {
    fn now(&self) -> i64 {
        use dalton_core::clock::Clock;
        self.now_ms()
    }
}

pub fn request(method: &str, uri: &str, role: Option<Role>, body: Option<serde_json::Value>) -> Request<Body> {
    let mut b = Request::builder().method(method).uri(uri);
    if let Some(r) = role {
        b = b.header("authorization", format!("Bearer {}", token(r)));
    }
    match body {
        Some(v) => b.header("content-type", "application/json").body(Body::from(v.to_string())).unwrap(),
        None => b.body(Body::empty()).unwrap(),
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Response<Body> {
    app.clone().oneshot(req).await.unwrap()
}

pub async fn json(resp: Response<Body>) -> serde_json::Value {
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null)
}
