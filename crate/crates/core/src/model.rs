//! Domain vocabulary shared by the whole hub: pollutants, readings, devices,
//! annotations, commands and faults.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Epoch milliseconds.
pub type TimestampMs = i64;

/// Default time after which a silent device is reported stale.
pub const DEFAULT_STALE_TIMEOUT_MS: i64 = 60_000;

/// The nine quantities a sensing module reports.
///
/// The declaration order is the canonical key order of serialized readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PollutantKind {
    #[serde(rename = "co2_ppm")]
    Co2,
    #[serde(rename = "voc_ppb")]
    Voc,
    #[serde(rename = "pm2_5_ugm3")]
    Pm2_5,
    #[serde(rename = "pm10_ugm3")]
    Pm10,
    #[serde(rename = "no2_ppm")]
    No2,
    #[serde(rename = "c2h5oh_ppm")]
    C2h5oh,
    #[serde(rename = "co_ppm")]
    Co,
    #[serde(rename = "temp_c")]
    Temperature,
    #[serde(rename = "rh_pct")]
    Humidity,
}

impl PollutantKind {
    pub const ALL: [PollutantKind; 9] = [
        PollutantKind::Co2,
        PollutantKind::Voc,
        PollutantKind::Pm2_5,
        PollutantKind::Pm10,
        PollutantKind::No2,
        PollutantKind::C2h5oh,
        PollutantKind::Co,
        PollutantKind::Temperature,
        PollutantKind::Humidity,
    ];

    /// Wire key used in serialized readings and files.
    pub fn key(self) -> &'static str {
        match self {
            PollutantKind::Co2 => "co2_ppm",
            PollutantKind::Voc => "voc_ppb",
            PollutantKind::Pm2_5 => "pm2_5_ugm3",
            PollutantKind::Pm10 => "pm10_ugm3",
            PollutantKind::No2 => "no2_ppm",
            PollutantKind::C2h5oh => "c2h5oh_ppm",
            PollutantKind::Co => "co_ppm",
            PollutantKind::Temperature => "temp_c",
            PollutantKind::Humidity => "rh_pct",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            PollutantKind::Co2 | PollutantKind::No2 | PollutantKind::C2h5oh | PollutantKind::Co => {
                "ppm"
            }
            PollutantKind::Voc => "ppb",
            PollutantKind::Pm2_5 | PollutantKind::Pm10 => "µg/m³",
            PollutantKind::Temperature => "°C",
            PollutantKind::Humidity => "%RH",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Temperature and humidity are comfort quantities with a two-sided band.
    pub fn is_comfort(self) -> bool {
        matches!(self, PollutantKind::Temperature | PollutantKind::Humidity)
    }
}

impl fmt::Display for PollutantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown pollutant key `{0}`")]
pub struct UnknownPollutant(pub String);

impl FromStr for PollutantKind {
    type Err = UnknownPollutant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PollutantKind::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| UnknownPollutant(s.to_string()))
    }
}

/// Sensor operational range for one quantity, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperationalBounds {
    pub kind: PollutantKind,
    pub min: f64,
    pub max: f64,
}

impl OperationalBounds {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// Operational bounds for every [`PollutantKind`].
///
/// Defaults are the sensing module's rated ranges. VOC is carried in ppb; its
/// ceiling is the rated 500 ppm expressed in ppb and its floor is 0 ppb.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsTable {
    bounds: [OperationalBounds; 9],
}

impl Default for BoundsTable {
    fn default() -> Self {
        use PollutantKind::*;
        let b = |kind, min, max| OperationalBounds { kind, min, max };
        BoundsTable {
            bounds: [
                b(Co2, 0.0, 10_000.0),
                b(Voc, 0.0, 500_000.0),
                b(Pm2_5, 0.0, 500.0),
                b(Pm10, 0.0, 500.0),
                b(No2, 0.1, 10.0),
                b(C2h5oh, 1.0, 500.0),
                b(Co, 5.0, 5000.0),
                b(Temperature, -20.0, 99.0),
                b(Humidity, 0.0, 99.0),
            ],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("bounds for {kind} must satisfy min < max (got {min}..{max})")]
pub struct InvalidBounds {
    pub kind: PollutantKind,
    pub min: f64,
    pub max: f64,
}

impl BoundsTable {
    pub fn get(&self, kind: PollutantKind) -> OperationalBounds {
        self.bounds[kind.index()]
    }

    pub fn set(&mut self, kind: PollutantKind, min: f64, max: f64) -> Result<(), InvalidBounds> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(InvalidBounds { kind, min, max });
        }
        self.bounds[kind.index()] = OperationalBounds { kind, min, max };
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperationalBounds> {
        self.bounds.iter()
    }
}

/// One timestamped multi-pollutant sample from one device.
///
/// Absent keys in `values` mean "not measured".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reading {
    pub device_id: String,
    pub seq: u64,
    pub ts_ms: TimestampMs,
    pub values: BTreeMap<PollutantKind, f64>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("payload is not valid UTF-8")]
    Utf8,
    #[error("invalid payload: {0}")]
    Json(#[from] serde_json::Error),
}

impl Reading {
    pub fn new(device_id: impl Into<String>, seq: u64, ts_ms: TimestampMs) -> Self {
        Reading {
            device_id: device_id.into(),
            seq,
            ts_ms,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, kind: PollutantKind, value: f64) -> Self {
        self.values.insert(kind, value);
        self
    }

    pub fn get(&self, kind: PollutantKind) -> Option<f64> {
        self.values.get(&kind).copied()
    }

    /// Canonical single-line JSON used on the bus and in the store.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("reading serialization is infallible")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ParseError> {
        let text = std::str::from_utf8(bytes).map_err(|_| ParseError::Utf8)?;
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MalformedReason {
    Empty,
    NonFinite(PollutantKind),
    BadTimestamp,
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::Empty => f.write_str("no values"),
            MalformedReason::NonFinite(k) => write!(f, "non-finite {k}"),
            MalformedReason::BadTimestamp => f.write_str("ts_ms must be positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationVerdict {
    Valid,
    OutOfRange(Vec<PollutantKind>),
    Malformed(MalformedReason),
}

impl ValidationVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationVerdict::Valid)
    }
}

/// Checks well-formedness first, then every value against its bounds.
pub fn validate_reading(r: &Reading, bounds: &BoundsTable) -> ValidationVerdict {
    if r.values.is_empty() {
        return ValidationVerdict::Malformed(MalformedReason::Empty);
    }
    if r.ts_ms <= 0 {
        return ValidationVerdict::Malformed(MalformedReason::BadTimestamp);
    }
    if let Some((&kind, _)) = r.values.iter().find(|(_, v)| !v.is_finite()) {
        return ValidationVerdict::Malformed(MalformedReason::NonFinite(kind));
    }
    let offending: Vec<PollutantKind> = r
        .values
        .iter()
        .filter(|(&k, &v)| !bounds.get(k).contains(v))
        .map(|(&k, _)| k)
        .collect();
    if offending.is_empty() {
        ValidationVerdict::Valid
    } else {
        ValidationVerdict::OutOfRange(offending)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Liveness {
    Live,
    Stale,
    Faulted,
}

impl Liveness {
    /// A device with an open stuck-sensor fault is FAULTED regardless of age.
    pub fn classify(now_ms: TimestampMs, last_seen_ms: TimestampMs, stale_timeout_ms: i64, faulted: bool) -> Self {
        if faulted {
            Liveness::Faulted
        } else if now_ms - last_seen_ms > stale_timeout_ms {
            Liveness::Stale
        } else {
            Liveness::Live
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub site_id: String,
    pub room_label: String,
    pub last_seen_ms: TimestampMs,
    pub liveness: Liveness,
}

/// Splits `"<site>-<room>"` device ids; ids without a dash form their own site.
pub fn infer_site_and_room(device_id: &str) -> (String, String) {
    match device_id.split_once('-') {
        Some((site, room)) if !site.is_empty() && !room.is_empty() => (site.to_string(), room.to_string()),
        _ => (device_id.to_string(), device_id.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotationSource {
    Manual,
    #[default]
    Api,
}

/// A timestamped ground-truth activity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub site_id: String,
    pub occupant_id: String,
    pub activity: String,
    pub start_ms: TimestampMs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_ms: Option<TimestampMs>,
    #[serde(default)]
    pub source: AnnotationSource,
}

impl Annotation {
    pub fn check(&self) -> Result<(), String> {
        match self.end_ms {
            Some(end) if end < self.start_ms => Err(format!(
                "end_ms {end} precedes start_ms {}",
                self.start_ms
            )),
            _ => Ok(()),
        }
    }

    /// Half-open overlap test against `[t0, t1)`; open-ended labels extend forever.
    pub fn intersects(&self, t0: TimestampMs, t1: TimestampMs) -> bool {
        let end = self.end_ms.unwrap_or(TimestampMs::MAX);
        if end == self.start_ms {
            self.start_ms >= t0 && self.start_ms < t1
        } else {
            self.start_ms < t1 && end > t0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CommandAction {
    Reboot,
    Reset,
    Reconfigure,
}

impl FromStr for CommandAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "REBOOT" => Ok(CommandAction::Reboot),
            "RESET" => Ok(CommandAction::Reset),
            "RECONFIGURE" => Ok(CommandAction::Reconfigure),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CommandStatus {
    Pending,
    Delivered,
    Acked,
    Expired,
}

impl CommandStatus {
    /// Forward-only: PENDING < DELIVERED < ACKED, and EXPIRED only from the
    /// two non-terminal states.
    pub fn can_transition_to(self, next: CommandStatus) -> bool {
        use CommandStatus::*;
        match (self, next) {
            (Pending, Delivered) | (Pending, Acked) | (Delivered, Acked) => true,
            (Pending, Expired) | (Delivered, Expired) => true,
            _ => false,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, CommandStatus::Acked | CommandStatus::Expired)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    pub cmd_id: String,
    pub device_id: String,
    pub action: CommandAction,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub issued_ms: TimestampMs,
    pub status: CommandStatus,
}

impl CommandEnvelope {
    /// Payload published on `dalton/cmd/<device_id>`.
    pub fn wire_payload(&self) -> String {
        serde_json::to_string(&CommandWire {
            cmd_id: self.cmd_id.clone(),
            action: self.action,
            params: self.params.clone(),
            ts_ms: self.issued_ms,
        })
        .expect("command serialization is infallible")
    }
}

/// Command as it travels to a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandWire {
    pub cmd_id: String,
    pub action: CommandAction,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    pub ts_ms: TimestampMs,
}

/// Device acknowledgement published on `dalton/ack/<device_id>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandAck {
    pub cmd_id: String,
    pub ts_ms: TimestampMs,
    #[serde(default = "default_true")]
    pub ok: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultKind {
    StuckZero,
    StuckMax,
    Stale,
}

impl FaultKind {
    pub fn is_stuck(self) -> bool {
        matches!(self, FaultKind::StuckZero | FaultKind::StuckMax)
    }
}

/// Note attached to faults whose recovery was suppressed by rate limiting.
pub const RATE_LIMITED_NOTE: &str = "RateLimited";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub device_id: String,
    pub kind: FaultKind,
    pub first_ms: TimestampMs,
    pub last_ms: TimestampMs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_cmd_id: Option<String>,
    #[serde(default)]
    pub note: String,
}

impl FaultRecord {
    pub fn is_rate_limited(&self) -> bool {
        self.note.contains(RATE_LIMITED_NOTE)
    }
}
