//! Multi-room household simulator.
//!
//! Each room is a well-mixed zone. Per kind and second:
//! `dc_r = S_r/V_r + Σ_n Q_rn·(c_n − c_r)/V_r − L_r·(c_r − c_out)`, with `L_r`
//! the infiltration plus (when ventilated) exhaust rate. Sensors add relative
//! Gaussian noise and then follow the signal with a first-order response.

mod cosim;
mod scenario;

pub use cosim::CoSim;
pub use scenario::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bus::{ack_topic, data_topic, topic_leaf, Bus, Subscription, CMD_PREFIX};
use crate::hhi::{CalibrationTable, Source};
use crate::model::{
    BoundsTable, CommandAck, CommandAction, CommandWire, FaultKind, PollutantKind, Reading, TimestampMs,
};

const KINDS: usize = PollutantKind::ALL.len();
pub const DEFAULT_REBOOT_DELAY_MS: i64 = 1_000;

#[derive(Debug)]
struct DeviceState {
    id: String,
    room: usize,
    seq: u64,
    rng: ChaCha8Rng,
    sensed: [f64; KINDS],
    fault: Option<FaultKind>,
    reboot: Option<(String, TimestampMs)>,
}

#[derive(Debug, Clone, Copy)]
struct Link {
    a: usize,
    b: usize,
    flow: f64,
}

pub struct Simulator {
    spec: ScenarioSpec,
    bounds: BoundsTable,
    volumes: Vec<f64>,
    losses: Vec<f64>,
    links: Vec<Link>,
    outdoor: [f64; KINDS],
    loss_scale: [f64; KINDS],
    noise: [f64; KINDS],
    response_s: [f64; KINDS],
    conc: Vec<[f64; KINDS]>,
    devices: Vec<DeviceState>,
    pending_faults: Vec<FaultSpec>,
    elapsed_ms: i64,
    reboot_delay_ms: i64,
    bus: Option<(Bus, Subscription)>,
}

fn device_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Simulator {
    pub fn new(spec: ScenarioSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let mode = spec.mode;
        let volumes = spec.rooms.iter().map(|r| r.volume.relative_volume()).collect();
        let losses = spec
            .rooms
            .iter()
            .map(|r| match mode {
                VentilationMode::Ventilated => r.infiltration + r.exhaust,
                VentilationMode::Natural => r.infiltration,
                VentilationMode::PullInward => r.fan_infiltration.unwrap_or(r.infiltration),
            })
            .collect();
        let links = spec
            .edges
            .iter()
            .map(|e| Link {
                a: spec.room_index(&e.a).unwrap(),
                b: spec.room_index(&e.b).unwrap(),
                flow: e.flow * if mode == VentilationMode::PullInward { e.fan_boost } else { 1.0 },
            })
            .collect();
        let per_kind = |f: &dyn Fn(PollutantKind) -> f64| {
            let mut a = [0.0; KINDS];
            for k in PollutantKind::ALL {
                a[k.index()] = f(k);
            }
            a
        };
        let outdoor = per_kind(&|k| spec.outdoor(k));
        let loss_scale = per_kind(&|k| spec.loss_scale(k));
        let noise = per_kind(&|k| spec.noise(k));
        let response_s = per_kind(&|k| spec.response_s(k));
        let devices = spec
            .devices
            .iter()
            .enumerate()
            .map(|(i, d)| DeviceState {
                id: d.device_id.clone(),
                room: spec.room_index(&d.room).unwrap(),
                seq: 0,
                rng: ChaCha8Rng::seed_from_u64(device_seed(spec.seed, i)),
                sensed: outdoor,
                fault: None,
                reboot: None,
            })
            .collect();
        let mut pending_faults = spec.faults.clone();
        pending_faults.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        Ok(Simulator {
            conc: vec![outdoor; spec.rooms.len()],
            bounds: BoundsTable::default(),
            volumes,
            losses,
            links,
            outdoor,
            loss_scale,
            noise,
            response_s,
            devices,
            pending_faults,
            elapsed_ms: 0,
            reboot_delay_ms: DEFAULT_REBOOT_DELAY_MS,
            bus: None,
            spec,
        })
    }

    /// Publishes readings and acks on `bus` and listens for device commands.
    pub fn attach(&mut self, bus: &Bus) -> Result<(), SimError> {
        let sub = bus.subscribe(&format!("{CMD_PREFIX}/+"))?;
        self.bus = Some((bus.clone(), sub));
        Ok(())
    }

    pub fn set_reboot_delay_ms(&mut self, ms: i64) {
        self.reboot_delay_ms = ms.max(0);
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn now_ms(&self) -> TimestampMs {
        self.spec.start_ms + self.elapsed_ms
    }

    pub fn elapsed_s(&self) -> f64 {
        self.elapsed_ms as f64 / 1000.0
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.devices.iter().map(|d| d.id.clone()).collect()
    }

    /// True concentration in a room.
    pub fn concentration(&self, room: &str, kind: PollutantKind) -> Option<f64> {
        self.spec.room_index(room).map(|r| self.conc[r][kind.index()])
    }

    /// Volume-weighted excess over outdoors, summed over rooms.
    pub fn excess_mass(&self, kind: PollutantKind) -> f64 {
        let k = kind.index();
        self.conc
            .iter()
            .zip(&self.volumes)
            .map(|(c, v)| v * (c[k] - self.outdoor[k]))
            .sum()
    }

    pub fn fault_of(&self, device_id: &str) -> Result<Option<FaultKind>, SimError> {
        self.device(device_id).map(|d| d.fault)
    }

    fn device(&self, device_id: &str) -> Result<&DeviceState, SimError> {
        self.devices
            .iter()
            .find(|d| d.id == device_id)
            .ok_or_else(|| SimError::UnknownDevice(device_id.to_string()))
    }

    pub fn inject_fault(&mut self, device_id: &str, kind: FaultKind) -> Result<(), SimError> {
        let d = self
            .devices
            .iter_mut()
            .find(|d| d.id == device_id)
            .ok_or_else(|| SimError::UnknownDevice(device_id.to_string()))?;
        d.fault = Some(kind);
        Ok(())
    }

    /// Applies a command as the device firmware would. Returns the ack once
    /// the action completes; a reboot completes after the reboot delay.
    pub fn deliver_command(&mut self, device_id: &str, wire: &CommandWire) -> Result<Option<CommandAck>, SimError> {
        let now = self.now_ms();
        let delay = self.reboot_delay_ms;
        let d = self
            .devices
            .iter_mut()
            .find(|d| d.id == device_id)
            .ok_or_else(|| SimError::UnknownDevice(device_id.to_string()))?;
        match wire.action {
            CommandAction::Reboot | CommandAction::Reset => {
                d.reboot = Some((wire.cmd_id.clone(), now + delay));
                Ok(None)
            }
            CommandAction::Reconfigure => Ok(Some(CommandAck {
                cmd_id: wire.cmd_id.clone(),
                ts_ms: now,
                ok: true,
            })),
        }
    }

    fn take_commands(&mut self) -> Vec<(String, CommandWire)> {
        let Some((_, sub)) = &self.bus else {
            return Vec::new();
        };
        sub.drain()
            .into_iter()
            .filter_map(|m| {
                let wire: CommandWire = serde_json::from_slice(&m.payload).ok()?;
                Some((topic_leaf(&m.topic).to_string(), wire))
            })
            .collect()
    }

    fn finish_reboots(&mut self) -> Vec<(String, CommandAck)> {
        let now = self.now_ms();
        let mut acks = Vec::new();
        for d in &mut self.devices {
            if let Some((cmd_id, due)) = d.reboot.clone() {
                if now >= due {
                    d.reboot = None;
                    d.fault = None;
                    d.sensed = self.conc[d.room];
                    acks.push((d.id.clone(), CommandAck { cmd_id, ts_ms: now, ok: true }));
                }
            }
        }
        acks
    }

    fn apply_scheduled_faults(&mut self) {
        let t = self.elapsed_s();
        while self.pending_faults.first().is_some_and(|f| f.at_s <= t) {
            let f = self.pending_faults.remove(0);
            if let Some(d) = self.devices.iter_mut().find(|d| d.id == f.device_id) {
                d.fault = Some(f.kind);
            }
        }
    }

    fn sense(&mut self, dt_s: f64) -> Vec<Reading> {
        let ts = self.now_ms();
        let mut out = Vec::with_capacity(self.devices.len());
        for d in &mut self.devices {
            let truth = self.conc[d.room];
            for k in PollutantKind::ALL {
                let i = k.index();
                let eps: f64 = StandardNormal.sample(&mut d.rng);
                let noisy = truth[i] * (1.0 + self.noise[i] * eps);
                let tau = self.response_s[i];
                let alpha = if tau > 0.0 { 1.0 - (-dt_s / tau).exp() } else { 1.0 };
                d.sensed[i] += alpha * (noisy - d.sensed[i]);
            }
            if d.fault == Some(FaultKind::Stale) {
                continue;
            }
            d.seq += 1;
            let mut r = Reading::new(d.id.clone(), d.seq, ts);
            for k in PollutantKind::ALL {
                let b = self.bounds.get(k);
                let v = match d.fault {
                    Some(FaultKind::StuckZero) => 0.0,
                    Some(FaultKind::StuckMax) => b.max,
                    _ => d.sensed[k.index()].clamp(b.min, b.max),
                };
                r = r.with(k, v);
            }
            out.push(r);
        }
        out
    }

    fn advance(&mut self, dt_s: f64) {
        let t = self.elapsed_s();
        let n = self.conc.len();
        let mut src = vec![[0.0; KINDS]; n];
        for s in &self.spec.sources {
            if s.active_at(t) {
                let r = self.spec.room_index(&s.room).unwrap();
                for (k, rate) in s.emissions() {
                    src[r][k.index()] += rate;
                }
            }
        }
        // Substeps keep explicit Euler well inside its stability region.
        let mut stiff: f64 = 0.0;
        for r in 0..n {
            let mut out_rate = self.losses[r] * self.loss_scale.iter().cloned().fold(0.0, f64::max);
            for l in &self.links {
                if l.a == r || l.b == r {
                    out_rate += l.flow / self.volumes[r];
                }
            }
            stiff = stiff.max(out_rate);
        }
        let subs = ((stiff * dt_s / 0.25).ceil() as usize).max(1);
        let h = dt_s / subs as f64;
        for _ in 0..subs {
            let mut dc = vec![[0.0; KINDS]; n];
            for l in &self.links {
                for k in 0..KINDS {
                    let q = l.flow * (self.conc[l.b][k] - self.conc[l.a][k]);
                    dc[l.a][k] += q / self.volumes[l.a];
                    dc[l.b][k] -= q / self.volumes[l.b];
                }
            }
            for r in 0..n {
                for k in 0..KINDS {
                    let loss = self.losses[r] * self.loss_scale[k] * (self.conc[r][k] - self.outdoor[k]);
                    let next = self.conc[r][k] + h * (dc[r][k] + src[r][k] / self.volumes[r] - loss);
                    self.conc[r][k] = if k == PollutantKind::Temperature.index() { next } else { next.max(0.0) };
                }
            }
        }
    }

    /// Advances by `dt_s` seconds: handles commands, emits one reading per
    /// live device stamped at the current time, then integrates.
    pub fn step(&mut self, dt_s: f64) -> Result<Vec<Reading>, SimError> {
        self.apply_scheduled_faults();
        let mut acks = Vec::new();
        for (device, wire) in self.take_commands() {
            if let Ok(Some(ack)) = self.deliver_command(&device, &wire) {
                acks.push((device, ack));
            }
        }
        acks.extend(self.finish_reboots());
        let readings = self.sense(dt_s);
        if let Some((bus, _)) = &self.bus {
            for (device, ack) in &acks {
                bus.publish(&ack_topic(device), serde_json::to_vec(ack).expect("ack serializes"))?;
            }
            for r in &readings {
                bus.publish(&data_topic(&r.device_id), r.to_canonical_json())?;
            }
        }
        self.advance(dt_s);
        self.elapsed_ms += (dt_s * 1000.0).round() as i64;
        Ok(readings)
    }

    /// Runs for `duration_s` seconds at 1 Hz and returns every emitted reading.
    pub fn run(&mut self, duration_s: u64) -> Result<Vec<Reading>, SimError> {
        let mut log = Vec::with_capacity(duration_s as usize * self.devices.len());
        for _ in 0..duration_s {
            log.extend(self.step(1.0)?);
        }
        Ok(log)
    }
}

/// Runs a scenario standalone, optionally publishing on `bus`.
pub fn run_scenario(spec: ScenarioSpec, duration_s: u64, bus: Option<&Bus>) -> Result<Vec<Reading>, SimError> {
    let mut sim = Simulator::new(spec)?;
    if let Some(bus) = bus {
        sim.attach(bus)?;
    }
    sim.run(duration_s)
}

/// Sum over the calibrated pollutants of the mean level normalised by its
/// best and worst bounds. Larger is worse.
pub fn exposure(readings: &[Reading], device_id: &str, cal: &CalibrationTable) -> Option<f64> {
    let mut total = 0.0;
    for &k in &cal.pollutants {
        let vals: Vec<f64> = readings
            .iter()
            .filter(|r| r.device_id == device_id)
            .filter_map(|r| r.get(k))
            .collect();
        if vals.is_empty() {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let spec = cal.threshold_spec(k).ok()?;
        let b = cal.bound(k, Source::Mean).ok()?;
        total += (spec.signal(mean) - b.best) / (b.worst - b.best);
    }
    Some(total)
}

/// Mean of one kind for one device over the log.
pub fn mean_of(readings: &[Reading], device_id: &str, kind: PollutantKind) -> Option<f64> {
    let vals: Vec<f64> = readings
        .iter()
        .filter(|r| r.device_id == device_id)
        .filter_map(|r| r.get(kind))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
