//! Stream pipeline: parse, validate, deduplicate and persist readings; detect
//! stuck and silent devices; issue recovery reboots; track command delivery.
//!
//! The pipeline never reads wall time directly. Arrival times come from its
//! [`Clock`] and housekeeping runs in [`Pipeline::tick`].

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::bus::{self, Bus, BusError, Message, Subscription};
use crate::clock::Clock;
use crate::hhi::{hhi_window, CalibrationTable, HhiPoint};
use crate::model::{
    infer_site_and_room, validate_reading, BoundsTable, CommandAck, CommandAction, CommandEnvelope, CommandStatus,
    DeviceRecord, FaultKind, FaultRecord, Liveness, PollutantKind, Reading, TimestampMs, ValidationVerdict,
    DEFAULT_STALE_TIMEOUT_MS, RATE_LIMITED_NOTE,
};
use crate::store::{ErrorEntry, ErrorKind, Store, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub bounds: BoundsTable,
    pub stale_timeout_ms: i64,
    /// Consecutive pinned samples that make a stuck fault.
    pub stuck_run: usize,
    pub reboot_cooldown_ms: i64,
    pub max_reboots_per_hour: usize,
    pub command_ttl_ms: i64,
    /// Live per-site HHI published on the bus every stride, when set.
    pub live_hhi: Option<CalibrationTable>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bounds: BoundsTable::default(),
            stale_timeout_ms: DEFAULT_STALE_TIMEOUT_MS,
            stuck_run: 30,
            reboot_cooldown_ms: 300_000,
            max_reboots_per_hour: 4,
            command_ttl_ms: 60_000,
            live_hhi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineStats {
    pub received: u64,
    pub persisted: u64,
    pub duplicates: u64,
    pub malformed: u64,
    pub out_of_range: u64,
    pub faults: u64,
    pub reboots: u64,
    pub rate_limited: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    kind: FaultKind,
    value: f64,
    count: usize,
    first_ms: TimestampMs,
}

#[derive(Debug, Default)]
struct DeviceState {
    site_id: String,
    room_label: String,
    last_seen_ms: TimestampMs,
    runs: BTreeMap<PollutantKind, Run>,
    active: Option<FaultRecord>,
    stale: Option<FaultRecord>,
    reboots: VecDeque<TimestampMs>,
}

impl DeviceState {
    fn new(device_id: &str, last_seen_ms: TimestampMs) -> Self {
        let (site_id, room_label) = infer_site_and_room(device_id);
        DeviceState {
            site_id,
            room_label,
            last_seen_ms,
            ..Default::default()
        }
    }
}

#[derive(Default)]
struct State {
    devices: BTreeMap<String, DeviceState>,
    open_cmds: BTreeMap<String, CommandEnvelope>,
    next_cmd: u64,
    stats: PipelineStats,
    last_hhi_ms: Option<TimestampMs>,
}

pub struct Pipeline {
    bus: Bus,
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    cfg: PipelineConfig,
    data_sub: Subscription,
    ack_sub: Subscription,
    state: Mutex<State>,
}

impl Pipeline {
    /// Subscribes to device data and acks, and restores the device registry
    /// and open commands from the store.
    pub fn new(bus: Bus, store: Arc<Store>, clock: Arc<dyn Clock>, cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let data_sub = bus.subscribe(&format!("{}/+", bus::DATA_PREFIX))?;
        let ack_sub = bus.subscribe(&format!("{}/+", bus::ACK_PREFIX))?;
        let mut state = State::default();
        for (device, last) in store.devices() {
            state.devices.insert(device.clone(), DeviceState::new(&device, last));
        }
        for c in store.commands() {
            if !c.status.is_terminal() {
                state.devices.entry(c.device_id.clone()).or_insert_with(|| DeviceState::new(&c.device_id, c.issued_ms));
                state.open_cmds.insert(c.cmd_id.clone(), c);
            }
        }
        state.next_cmd = store.commands().len() as u64;
        Ok(Pipeline {
            bus,
            store,
            clock,
            cfg,
            data_sub,
            ack_sub,
            state: Mutex::new(state),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn now_ms(&self) -> TimestampMs {
        self.clock.now_ms()
    }

    pub fn stats(&self) -> PipelineStats {
        self.state.lock().stats
    }

    /// Handles every message currently queued. Returns how many were handled.
    pub fn pump(&self) -> Result<usize, PipelineError> {
        let mut n = 0;
        for m in self.data_sub.drain() {
            self.process(&m)?;
            n += 1;
        }
        for m in self.ack_sub.drain() {
            self.process(&m)?;
            n += 1;
        }
        Ok(n)
    }

    /// Blocks up to `timeout` for the next data message, then pumps.
    pub fn pump_timeout(&self, timeout: Duration) -> Result<usize, PipelineError> {
        let first = self.data_sub.recv_timeout(timeout)?;
        let mut n = 0;
        if let Some(m) = first {
            self.process(&m)?;
            n += 1;
        }
        Ok(n + self.pump()?)
    }

    pub fn process(&self, msg: &Message) -> Result<(), PipelineError> {
        if msg.topic.starts_with(bus::ACK_PREFIX) {
            return self.process_ack(msg);
        }
        let now = self.clock.now_ms();
        self.state.lock().stats.received += 1;
        let reading = match Reading::from_json(&msg.payload) {
            Ok(r) => r,
            Err(e) => {
                self.state.lock().stats.malformed += 1;
                return self.log_error(ErrorEntry {
                    ts_ms: now,
                    kind: ErrorKind::Malformed,
                    device_id: Some(bus::topic_leaf(&msg.topic).to_string()),
                    detail: e.to_string(),
                    payload: Some(String::from_utf8_lossy(&msg.payload).into_owned()),
                });
            }
        };
        if self.store.contains_reading(&reading.device_id, reading.seq) {
            self.state.lock().stats.duplicates += 1;
            return Ok(());
        }
        self.observe(&reading, now)?;
        match validate_reading(&reading, &self.cfg.bounds) {
            ValidationVerdict::Valid => {
                if self.store.append_reading(&reading)? {
                    self.state.lock().stats.persisted += 1;
                    let topic = bus::persisted_topic(&reading.device_id);
                    let _ = self.bus.publish(&topic, reading.to_canonical_json());
                } else {
                    self.state.lock().stats.duplicates += 1;
                }
                Ok(())
            }
            ValidationVerdict::OutOfRange(kinds) => {
                self.state.lock().stats.out_of_range += 1;
                let names: Vec<&str> = kinds.iter().map(|k| k.key()).collect();
                self.log_error(ErrorEntry {
                    ts_ms: now,
                    kind: ErrorKind::OutOfRange,
                    device_id: Some(reading.device_id.clone()),
                    detail: format!("outside operational bounds: {}", names.join(", ")),
                    payload: Some(reading.to_canonical_json()),
                })
            }
            ValidationVerdict::Malformed(reason) => {
                self.state.lock().stats.malformed += 1;
                self.log_error(ErrorEntry {
                    ts_ms: now,
                    kind: ErrorKind::Malformed,
                    device_id: Some(reading.device_id.clone()),
                    detail: reason.to_string(),
                    payload: Some(String::from_utf8_lossy(&msg.payload).into_owned()),
                })
            }
        }
    }

    fn log_error(&self, e: ErrorEntry) -> Result<(), PipelineError> {
        log::debug!("error log: {:?} {}", e.kind, e.detail);
        self.store.append_error(e)?;
        Ok(())
    }

    fn pinned(&self, kind: PollutantKind, v: f64) -> Option<FaultKind> {
        if v == 0.0 {
            Some(FaultKind::StuckZero)
        } else if v == self.cfg.bounds.get(kind).max {
            Some(FaultKind::StuckMax)
        } else {
            None
        }
    }

    /// Registry update and stuck-run tracking for one parsed reading.
    fn observe(&self, r: &Reading, now: TimestampMs) -> Result<(), PipelineError> {
        let mut detected: Option<(FaultKind, TimestampMs)> = None;
        let mut cleared: Option<FaultRecord> = None;
        let mut back_from_stale: Option<FaultRecord> = None;
        {
            let mut st = self.state.lock();
            let dev = st
                .devices
                .entry(r.device_id.clone())
                .or_insert_with(|| DeviceState::new(&r.device_id, now));
            dev.last_seen_ms = dev.last_seen_ms.max(now);
            if let Some(mut f) = dev.stale.take() {
                f.last_ms = now;
                back_from_stale = Some(f);
            }
            for (&kind, &v) in &r.values {
                match self.pinned(kind, v) {
                    Some(fk) => {
                        let run = dev.runs.entry(kind).or_insert(Run {
                            kind: fk,
                            value: v,
                            count: 0,
                            first_ms: r.ts_ms,
                        });
                        if run.kind == fk && run.value == v {
                            run.count += 1;
                        } else {
                            *run = Run {
                                kind: fk,
                                value: v,
                                count: 1,
                                first_ms: r.ts_ms,
                            };
                        }
                    }
                    None => {
                        dev.runs.remove(&kind);
                    }
                }
            }
            let longest = dev.runs.values().filter(|run| run.count >= self.cfg.stuck_run).min_by_key(|run| run.first_ms);
            match (&mut dev.active, longest) {
                (Some(active), Some(_)) => active.last_ms = r.ts_ms,
                (None, Some(run)) => detected = Some((run.kind, run.first_ms)),
                (Some(_), None) => cleared = dev.active.take(),
                (None, None) => {}
            }
        }
        if let Some(f) = back_from_stale {
            self.store.put_fault(&f)?;
        }
        if let Some(f) = cleared {
            self.store.put_fault(&f)?;
        }
        if let Some((kind, first_ms)) = detected {
            let fault = FaultRecord {
                device_id: r.device_id.clone(),
                kind,
                first_ms,
                last_ms: r.ts_ms,
                recovery_cmd_id: None,
                note: String::new(),
            };
            self.state.lock().stats.faults += 1;
            log::info!("{} stuck ({kind:?}) since {first_ms}", r.device_id);
            self.store.put_fault(&fault)?;
            self.state.lock().devices.get_mut(&r.device_id).expect("registered").active = Some(fault);
        }
        self.maybe_recover(&r.device_id, now)
    }

    /// Issues a reboot for an active stuck fault when the cooldown and the
    /// hourly cap allow it and no recovery command is still open.
    fn maybe_recover(&self, device_id: &str, now: TimestampMs) -> Result<(), PipelineError> {
        let decision = {
            let mut st = self.state.lock();
            let open: Vec<String> = st.open_cmds.keys().cloned().collect();
            let dev = st.devices.get_mut(device_id).expect("registered");
            let Some(active) = dev.active.as_ref() else {
                return Ok(());
            };
            if active.recovery_cmd_id.as_ref().is_some_and(|c| open.contains(c)) {
                return Ok(());
            }
            while dev.reboots.front().is_some_and(|&t| now - t >= 3_600_000) {
                dev.reboots.pop_front();
            }
            let cooled = dev.reboots.back().is_none_or(|&t| now - t >= self.cfg.reboot_cooldown_ms);
            if !cooled {
                return Ok(());
            }
            if dev.reboots.len() >= self.cfg.max_reboots_per_hour {
                if active.is_rate_limited() {
                    return Ok(());
                }
                Err(())
            } else {
                dev.reboots.push_back(now);
                Ok(())
            }
        };
        match decision {
            Ok(()) => {
                let cmd = self.issue(device_id, CommandAction::Reboot, BTreeMap::new(), now)?;
                let fault = {
                    let mut st = self.state.lock();
                    st.stats.reboots += 1;
                    let active = st.devices.get_mut(device_id).and_then(|d| d.active.as_mut()).expect("active");
                    active.recovery_cmd_id = Some(cmd.cmd_id.clone());
                    active.clone()
                };
                self.store.put_fault(&fault)?;
            }
            Err(()) => {
                let fault = {
                    let mut st = self.state.lock();
                    st.stats.rate_limited += 1;
                    let active = st.devices.get_mut(device_id).and_then(|d| d.active.as_mut()).expect("active");
                    active.note = RATE_LIMITED_NOTE.to_string();
                    active.clone()
                };
                self.store.put_fault(&fault)?;
                self.log_error(ErrorEntry {
                    ts_ms: now,
                    kind: ErrorKind::RateLimited,
                    device_id: Some(device_id.to_string()),
                    detail: format!("reboot cap of {} per hour reached", self.cfg.max_reboots_per_hour),
                    payload: None,
                })?;
            }
        }
        Ok(())
    }

    fn process_ack(&self, msg: &Message) -> Result<(), PipelineError> {
        let Ok(ack) = serde_json::from_slice::<CommandAck>(&msg.payload) else {
            return self.log_error(ErrorEntry {
                ts_ms: self.clock.now_ms(),
                kind: ErrorKind::Malformed,
                device_id: Some(bus::topic_leaf(&msg.topic).to_string()),
                detail: "unreadable command ack".into(),
                payload: Some(String::from_utf8_lossy(&msg.payload).into_owned()),
            });
        };
        let updated = {
            let mut st = self.state.lock();
            match st.open_cmds.get(&ack.cmd_id) {
                Some(c) if c.status.can_transition_to(CommandStatus::Acked) => {
                    let mut c = st.open_cmds.remove(&ack.cmd_id).expect("present");
                    c.status = CommandStatus::Acked;
                    Some(c)
                }
                _ => None,
            }
        };
        if let Some(c) = updated {
            self.store.put_command(&c)?;
        }
        Ok(())
    }

    fn issue(
        &self,
        device_id: &str,
        action: CommandAction,
        params: BTreeMap<String, String>,
        now: TimestampMs,
    ) -> Result<CommandEnvelope, PipelineError> {
        let cmd_id = {
            let mut st = self.state.lock();
            st.next_cmd += 1;
            format!("cmd-{}-{}", now, st.next_cmd)
        };
        let mut cmd = CommandEnvelope {
            cmd_id,
            device_id: device_id.to_string(),
            action,
            params,
            issued_ms: now,
            status: CommandStatus::Pending,
        };
        self.store.put_command(&cmd)?;
        let report = self.bus.publish(&bus::cmd_topic(device_id), cmd.wire_payload())?;
        if report.delivered > 0 {
            cmd.status = CommandStatus::Delivered;
            self.store.put_command(&cmd)?;
        }
        self.state.lock().open_cmds.insert(cmd.cmd_id.clone(), cmd.clone());
        Ok(cmd)
    }

    /// Persists a command as `PENDING`, publishes it to the device, and marks it
    /// `DELIVERED` when at least one subscriber received it.
    pub fn push_command(
        &self,
        device_id: &str,
        action: CommandAction,
        params: BTreeMap<String, String>,
    ) -> Result<CommandEnvelope, PipelineError> {
        if !self.state.lock().devices.contains_key(device_id) {
            return Err(PipelineError::UnknownDevice(device_id.to_string()));
        }
        self.issue(device_id, action, params, self.clock.now_ms())
    }

    pub fn command(&self, cmd_id: &str) -> Option<CommandEnvelope> {
        self.store.get_command(cmd_id)
    }

    /// Expires overdue commands, flags silent devices, and publishes live HHI.
    pub fn tick(&self, now: TimestampMs) -> Result<(), PipelineError> {
        let expired: Vec<CommandEnvelope> = {
            let mut st = self.state.lock();
            let overdue: Vec<String> = st
                .open_cmds
                .values()
                .filter(|c| now - c.issued_ms >= self.cfg.command_ttl_ms)
                .map(|c| c.cmd_id.clone())
                .collect();
            overdue
                .into_iter()
                .filter_map(|id| st.open_cmds.remove(&id))
                .map(|mut c| {
                    c.status = CommandStatus::Expired;
                    c
                })
                .collect()
        };
        for c in expired {
            self.store.put_command(&c)?;
            self.log_error(ErrorEntry {
                ts_ms: now,
                kind: ErrorKind::CommandExpired,
                device_id: Some(c.device_id.clone()),
                detail: format!("{} {:?} not acknowledged", c.cmd_id, c.action),
                payload: None,
            })?;
        }

        let stale: Vec<FaultRecord> = {
            let mut st = self.state.lock();
            let mut out = Vec::new();
            for (id, dev) in st.devices.iter_mut() {
                if dev.stale.is_none() && now - dev.last_seen_ms > self.cfg.stale_timeout_ms {
                    let f = FaultRecord {
                        device_id: id.clone(),
                        kind: FaultKind::Stale,
                        first_ms: dev.last_seen_ms,
                        last_ms: now,
                        recovery_cmd_id: None,
                        note: String::new(),
                    };
                    dev.stale = Some(f.clone());
                    out.push(f);
                }
            }
            st.stats.faults += out.len() as u64;
            out
        };
        for f in stale {
            log::warn!("{} silent since {}", f.device_id, f.first_ms);
            self.store.put_fault(&f)?;
        }

        if let Some(cal) = &self.cfg.live_hhi {
            let due = {
                let mut st = self.state.lock();
                let due = st.last_hhi_ms.is_none_or(|t| now - t >= cal.stride_ms);
                if due {
                    st.last_hhi_ms = Some(now);
                }
                due
            };
            if due {
                for point in self.live_hhi(now, cal) {
                    let (site, p) = point;
                    let json = serde_json::to_string(&p).expect("point serializes");
                    let _ = self.bus.publish(&bus::hhi_topic(&site), json);
                }
            }
        }
        Ok(())
    }

    fn live_hhi(&self, now: TimestampMs, cal: &CalibrationTable) -> Vec<(String, HhiPoint)> {
        let mut out = Vec::new();
        for (site, devices) in self.sites() {
            let data = self.store.query_site(&devices, now - cal.tau_ms, now);
            match hhi_window(&data, now, cal) {
                Ok(Some(p)) => out.push((site, p)),
                Ok(None) => {}
                Err(e) => log::warn!("live hhi for {site}: {e}"),
            }
        }
        out
    }

    /// Device ids per site.
    pub fn sites(&self) -> BTreeMap<String, Vec<String>> {
        let st = self.state.lock();
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, dev) in &st.devices {
            out.entry(dev.site_id.clone()).or_default().push(id.clone());
        }
        out
    }

    pub fn devices(&self) -> Vec<DeviceRecord> {
        let now = self.clock.now_ms();
        let st = self.state.lock();
        st.devices
            .iter()
            .map(|(id, d)| DeviceRecord {
                device_id: id.clone(),
                site_id: d.site_id.clone(),
                room_label: d.room_label.clone(),
                last_seen_ms: d.last_seen_ms,
                liveness: Liveness::classify(now, d.last_seen_ms, self.cfg.stale_timeout_ms, d.active.is_some()),
            })
            .collect()
    }

    pub fn knows_device(&self, device_id: &str) -> bool {
        self.state.lock().devices.contains_key(device_id)
    }
}
