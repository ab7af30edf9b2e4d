//! `dalton serve`: bus, pipeline, store and gateway in one process.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use dalton_core::bus::bridge::{Bridge, HealthFlag};
use dalton_core::bus::Bus;
use dalton_core::clock::{Clock, SystemClock};
use dalton_core::hhi::CalibrationTable;
use dalton_core::pipeline::Pipeline;
use dalton_core::simulator::{ScenarioSpec, Simulator};
use dalton_core::store::Store;
use dalton_gateway::AppState;

use crate::config::HubConfig;
use crate::Failure;

/// Open streams that have not closed by then are dropped.
const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

pub fn run(cfg: HubConfig) -> Result<(), Failure> {
    let calibration = match &cfg.calibration {
        Some(p) => CalibrationTable::load(p).map_err(|e| Failure::config(format!("calibration: {e}")))?,
        None => CalibrationTable::default(),
    };
    let scenario = match &cfg.simulator {
        Some(s) => {
            let mut spec = ScenarioSpec::load(&s.scenario).map_err(|e| Failure::config(format!("simulator.scenario: {e}")))?;
            if let Some(seed) = s.seed {
                spec = spec.with_seed(seed);
            }
            Some(spec)
        }
        None => None,
    };

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(cfg.bind_addr().map_err(|e| Failure::config(e.to_string()))?));
    let listener = match listener {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => {
            return Err(Failure::port_busy(format!("{}: {e}", cfg.gateway.bind)))
        }
        Err(e) => return Err(Failure::runtime(format!("bind {}: {e}", cfg.gateway.bind))),
    };
    let addr = listener.local_addr().map_err(|e| Failure::runtime(e.to_string()))?;

    let store = Arc::new(Store::open(&cfg.data_dir, cfg.store_options()).map_err(|e| Failure::runtime(format!("store: {e}")))?);
    for u in &cfg.users {
        store.put_user(u.record()).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    let bus = Bus::new();
    let mut pcfg = cfg.pipeline_config();
    if cfg.pipeline.live_hhi {
        pcfg.live_hhi = Some(calibration.clone());
    }
    let clock = Arc::new(SystemClock);
    let pipeline = Arc::new(Pipeline::new(bus.clone(), store.clone(), clock.clone(), pcfg).map_err(|e| Failure::runtime(e.to_string()))?);

    let health = HealthFlag::default();
    let bridge = if cfg.mqtt.enabled {
        match Bridge::start(&cfg.mqtt, &bus, health.clone()) {
            Ok(b) => Some(b),
            Err(e) => {
                log::warn!("mqtt bridge unavailable, serving degraded: {e}");
                None
            }
        }
    } else {
        None
    };

    let stop = Arc::new(AtomicBool::new(false));
    let mut workers = vec![spawn_pipeline(pipeline.clone(), clock, stop.clone())];
    if let Some(spec) = scenario {
        workers.push(spawn_simulator(spec, &bus, stop.clone()).map_err(|e| Failure::config(format!("simulator.scenario: {e}")))?);
    }

    let state = AppState::new(pipeline.clone(), calibration)
        .with_heartbeat(Duration::from_secs(cfg.gateway.heartbeat_s))
        .with_health(health);
    println!("listening http://{addr}");
    let _ = std::io::stdout().flush();
    let served = rt.block_on(async {
        let (tx, mut rx) = tokio::sync::watch::channel(false);
        let server = dalton_gateway::serve(listener, state, async move {
            let _ = rx.changed().await;
        });
        tokio::pin!(server);
        tokio::select! {
            r = &mut server => r,
            _ = async {
                shutdown_signal().await;
                let _ = tx.send(true);
                tokio::time::sleep(SHUTDOWN_GRACE).await;
            } => Ok(()),
        }
    });
    rt.shutdown_timeout(Duration::from_secs(1));

    stop.store(true, Ordering::SeqCst);
    for w in workers {
        let _ = w.join();
    }
    if let Some(b) = bridge {
        b.shutdown();
    }
    let drained = pipeline.pump();
    store.sync().map_err(|e| Failure::runtime(format!("store flush: {e}")))?;
    log::info!("shutdown: {:?}", pipeline.stats());
    served.map_err(|e| Failure::runtime(e.to_string()))?;
    drained.map_err(|e| Failure::runtime(e.to_string()))?;
    Ok(())
}

fn spawn_pipeline(pipeline: Arc<Pipeline>, clock: Arc<SystemClock>, stop: Arc<AtomicBool>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut last_tick = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            if let Err(e) = pipeline.pump_timeout(Duration::from_millis(100)) {
                log::error!("pipeline: {e}");
            }
            if last_tick.elapsed() >= Duration::from_secs(1) {
                last_tick = Instant::now();
                if let Err(e) = pipeline.tick(clock.now_ms()) {
                    log::error!("pipeline tick: {e}");
                }
            }
        }
    })
}

/// Steps the household once per wall-clock second, stamped with real time.
fn spawn_simulator(mut spec: ScenarioSpec, bus: &Bus, stop: Arc<AtomicBool>) -> Result<JoinHandle<()>, dalton_core::simulator::SimError> {
    spec.start_ms = SystemClock.now_ms();
    let mut sim = Simulator::new(spec)?;
    sim.attach(bus)?;
    Ok(std::thread::spawn(move || {
        let started = Instant::now();
        let mut steps = 0u64;
        while !stop.load(Ordering::SeqCst) {
            let due = started + Duration::from_secs(steps);
            let now = Instant::now();
            if now < due {
                std::thread::sleep((due - now).min(Duration::from_millis(100)));
                continue;
            }
            if let Err(e) = sim.step(1.0) {
                log::error!("simulator: {e}");
                return;
            }
            steps += 1;
        }
    }))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}
