//! `dalton sim`: run a scenario, write its emission log, optionally publish
//! to a broker.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dalton_core::bus::bridge::{Bridge, BridgeConfig, BridgeSide, HealthFlag};
use dalton_core::bus::Bus;
use dalton_core::simulator::{ScenarioSpec, Simulator};
use serde::Serialize;

use crate::Failure;

#[derive(Debug, Clone)]
pub struct SimArgs {
    pub scenario: PathBuf,
    pub duration: Duration,
    pub seed: Option<u64>,
    pub fast: bool,
    pub offline: bool,
    pub out: Option<PathBuf>,
    pub broker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub scenario: String,
    pub seed: u64,
    pub devices: usize,
    pub readings_emitted: usize,
    pub faults_injected: usize,
    pub duration_s: u64,
    pub log: PathBuf,
}

impl std::fmt::Display for SimSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario          {}", self.scenario)?;
        writeln!(f, "seed              {}", self.seed)?;
        writeln!(f, "duration          {} s", self.duration_s)?;
        writeln!(f, "devices           {}", self.devices)?;
        writeln!(f, "readings emitted  {}", self.readings_emitted)?;
        writeln!(f, "faults injected   {}", self.faults_injected)?;
        write!(f, "log               {}", self.log.display())
    }
}

pub fn default_log_path(scenario: &Path) -> PathBuf {
    let stem = scenario.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sim".into());
    PathBuf::from(format!("{stem}.emissions.ndjson"))
}

fn broker_config(broker: &str) -> Result<BridgeConfig, Failure> {
    let (host, port) = broker
        .rsplit_once(':')
        .ok_or_else(|| Failure::usage(format!("--broker `{broker}`: expected host:port")))?;
    let port = port
        .parse()
        .map_err(|_| Failure::usage(format!("--broker `{broker}`: bad port")))?;
    Ok(BridgeConfig {
        enabled: true,
        host: host.to_string(),
        port,
        client_id: "dalton-sim".into(),
        ..BridgeConfig::default()
    })
}

pub fn run(args: &SimArgs) -> Result<SimSummary, Failure> {
    let mut spec = ScenarioSpec::load(&args.scenario).map_err(|e| Failure::config(format!("{}: {e}", args.scenario.display())))?;
    if let Some(seed) = args.seed {
        spec = spec.with_seed(seed);
    }
    let duration_s = args.duration.as_secs();
    let faults_injected = spec.faults.iter().filter(|f| f.at_s < duration_s as f64).count();
    let seed = spec.seed;
    let mut sim = Simulator::new(spec).map_err(|e| Failure::config(e.to_string()))?;

    let bus = Bus::new();
    let bridge = if args.offline {
        None
    } else {
        let cfg = broker_config(&args.broker)?;
        sim.attach(&bus).map_err(|e| Failure::runtime(e.to_string()))?;
        let b = Bridge::start_as(BridgeSide::Devices, &cfg, &bus, HealthFlag::default())
            .map_err(|e| Failure::runtime(format!("hub unreachable ({e}); use --offline to write files only")))?;
        Some(b)
    };

    let log = args.out.clone().unwrap_or_else(|| default_log_path(&args.scenario));
    let file = File::create(&log).map_err(|e| Failure::runtime(format!("{}: {e}", log.display())))?;
    let mut out = BufWriter::new(file);
    let devices = sim.device_ids().len();
    let started = Instant::now();
    let mut emitted = 0;
    for step in 0..duration_s {
        if !args.fast {
            let due = started + Duration::from_secs(step);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        for r in sim.step(1.0).map_err(|e| Failure::runtime(e.to_string()))? {
            writeln!(out, "{}", r.to_canonical_json()).map_err(|e| Failure::runtime(e.to_string()))?;
            emitted += 1;
        }
    }
    out.flush().map_err(|e| Failure::runtime(e.to_string()))?;
    if let Some(b) = bridge {
        // let the outbound queue drain before disconnecting
        std::thread::sleep(Duration::from_millis(500));
        b.shutdown();
    }
    Ok(SimSummary {
        scenario: args.scenario.display().to_string(),
        seed,
        devices,
        readings_emitted: emitted,
        faults_injected,
        duration_s,
        log,
    })
}
