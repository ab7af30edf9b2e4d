//! Scenario files (`.scn`, TOML): rooms, airflow graph, devices, scheduled
//! sources, ventilation mode and scripted faults.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FaultKind, PollutantKind, TimestampMs};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    SpecInvalid(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Bus(#[from] crate::bus::BusError),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::SpecInvalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VentilationMode {
    /// Exhaust on, ceiling fan off.
    Ventilated,
    /// Exhaust off, ceiling fan off.
    Natural,
    /// Exhaust off, ceiling fan on.
    PullInward,
}

impl FromStr for VentilationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "VENTILATED" => Ok(VentilationMode::Ventilated),
            "NATURAL" => Ok(VentilationMode::Natural),
            "PULL_INWARD" => Ok(VentilationMode::PullInward),
            _ => Err(format!("unknown ventilation mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VolumeClass {
    Small,
    Medium,
    Large,
}

impl VolumeClass {
    pub fn relative_volume(self) -> f64 {
        match self {
            VolumeClass::Small => 1.0,
            VolumeClass::Medium => 2.0,
            VolumeClass::Large => 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub label: String,
    pub volume: VolumeClass,
    /// Air exchange with outdoors through leaks and windows, per second.
    #[serde(default)]
    pub infiltration: f64,
    /// Extra exchange while the exhaust runs, per second.
    #[serde(default)]
    pub exhaust: f64,
    /// Exchange with outdoors while the ceiling fan runs; defaults to
    /// `infiltration`. A fan pulling air inward stops the window venting.
    #[serde(default)]
    pub fan_infiltration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    /// Interzonal airflow in room volumes of a `SMALL` room per second.
    pub flow: f64,
    /// Multiplier on `flow` while the ceiling fan runs.
    #[serde(default = "one")]
    pub fan_boost: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: String,
    pub room: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activity {
    Boiling,
    Frying,
    Steaming,
    AcNight,
    Cleaning,
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::Boiling,
        Activity::Frying,
        Activity::Steaming,
        Activity::AcNight,
        Activity::Cleaning,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Activity::Boiling => "BOILING",
            Activity::Frying => "FRYING",
            Activity::Steaming => "STEAMING",
            Activity::AcNight => "AC_NIGHT",
            Activity::Cleaning => "CLEANING",
        }
    }

    /// Emission per second into a `SMALL` room, per kind.
    pub fn profile(self) -> Vec<(PollutantKind, f64)> {
        use PollutantKind::*;
        match self {
            // Water vapour plus combustion gases from the burner.
            Activity::Boiling => vec![
                (Humidity, 0.060),
                (Co2, 1.5),
                (Co, 0.020),
                (Temperature, 0.004),
                (Voc, 0.3),
                (Pm2_5, 0.010),
                (Pm10, 0.012),
            ],
            // Oil aerosol: alcohols, NO2, VOC and particles.
            Activity::Frying => vec![
                (C2h5oh, 0.060),
                (No2, 0.0020),
                (Voc, 1.6),
                (Pm2_5, 0.060),
                (Pm10, 0.080),
                (Co2, 1.2),
                (Co, 0.010),
                (Temperature, 0.005),
                (Humidity, 0.010),
            ],
            // Long burner time with a closed vessel: the heaviest load.
            Activity::Steaming => vec![
                (Humidity, 0.080),
                (Co2, 2.6),
                (Co, 0.030),
                (Voc, 2.0),
                (Pm2_5, 0.080),
                (Pm10, 0.100),
                (C2h5oh, 0.020),
                (Temperature, 0.005),
            ],
            // Sleepers in a closed, air-conditioned bedroom.
            Activity::AcNight => vec![(Co2, 0.55), (Voc, 0.06), (Humidity, 0.002), (Temperature, -0.0005)],
            Activity::Cleaning => vec![(Voc, 3.0), (C2h5oh, 0.040), (Pm10, 0.10), (Pm2_5, 0.03)],
        }
    }
}

/// A scheduled emission: either an activity template or an explicit kind and
/// rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub room: String,
    #[serde(default)]
    pub activity: Option<Activity>,
    #[serde(default)]
    pub kind: Option<PollutantKind>,
    /// Explicit rate, or a multiplier on the template profile.
    #[serde(default)]
    pub rate: Option<f64>,
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub label: Option<String>,
}

impl SourceSpec {
    pub fn emissions(&self) -> Vec<(PollutantKind, f64)> {
        match (self.activity, self.kind) {
            (Some(a), _) => {
                let scale = self.rate.unwrap_or(1.0);
                a.profile().into_iter().map(|(k, r)| (k, r * scale)).collect()
            }
            (None, Some(k)) => vec![(k, self.rate.unwrap_or(0.0))],
            (None, None) => Vec::new(),
        }
    }

    pub fn active_at(&self, t_s: f64) -> bool {
        t_s >= self.start_s && t_s < self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub device_id: String,
    pub kind: FaultKind,
    pub at_s: f64,
}

/// Per-kind overrides for noise and sensor response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    /// Relative Gaussian noise, as a fraction of the value.
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub noise_by_kind: BTreeMap<PollutantKind, f64>,
    /// First-order response time in seconds.
    #[serde(default)]
    pub response_s: BTreeMap<PollutantKind, f64>,
}

pub const DEFAULT_NOISE: f64 = 0.01;
pub const DEFAULT_START_MS: TimestampMs = 1_700_000_000_000;

/// Response time of the sensing element per kind, seconds.
pub fn default_response_s(kind: PollutantKind) -> f64 {
    use PollutantKind::*;
    match kind {
        Pm2_5 | Pm10 | Temperature | Humidity | Co => 10.0,
        Co2 | Voc | No2 | C2h5oh => 30.0,
    }
}

pub fn default_outdoor(kind: PollutantKind) -> f64 {
    use PollutantKind::*;
    match kind {
        Co2 => 415.0,
        Voc => 225.0,
        Pm2_5 => 6.0,
        Pm10 => 14.0,
        No2 => 0.12,
        C2h5oh => 1.5,
        Co => 5.5,
        Temperature => 24.0,
        Humidity => 50.0,
    }
}

/// Loss-rate multiplier per kind.
pub fn default_loss_scale(_kind: PollutantKind) -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub site_id: String,
    pub mode: VentilationMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ms: TimestampMs,
    pub rooms: Vec<RoomSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub outdoor: BTreeMap<PollutantKind, f64>,
    #[serde(default)]
    pub loss_scale: BTreeMap<PollutantKind, f64>,
    #[serde(default)]
    pub sensor: SensorSpec,
}

fn default_start() -> TimestampMs {
    DEFAULT_START_MS
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn with_mode(mut self, mode: VentilationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn outdoor(&self, kind: PollutantKind) -> f64 {
        self.outdoor.get(&kind).copied().unwrap_or_else(|| default_outdoor(kind))
    }

    pub fn loss_scale(&self, kind: PollutantKind) -> f64 {
        self.loss_scale.get(&kind).copied().unwrap_or_else(|| default_loss_scale(kind))
    }

    pub fn noise(&self, kind: PollutantKind) -> f64 {
        self.sensor
            .noise_by_kind
            .get(&kind)
            .copied()
            .unwrap_or(self.sensor.noise.unwrap_or(DEFAULT_NOISE))
    }

    pub fn response_s(&self, kind: PollutantKind) -> f64 {
        self.sensor.response_s.get(&kind).copied().unwrap_or_else(|| default_response_s(kind))
    }

    pub fn room_index(&self, label: &str) -> Option<usize> {
        self.rooms.iter().position(|r| r.label == label)
    }

    pub fn device_room(&self, device_id: &str) -> Option<usize> {
        self.devices
            .iter()
            .find(|d| d.device_id == device_id)
            .and_then(|d| self.room_index(&d.room))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rooms.is_empty() {
            return Err(invalid("at least one room is required"));
        }
        let mut labels = BTreeSet::new();
        for r in &self.rooms {
            if !labels.insert(r.label.as_str()) {
                return Err(invalid(format!("duplicate room `{}`", r.label)));
            }
            let fan = r.fan_infiltration.unwrap_or(0.0);
            for (name, v) in [("infiltration", r.infiltration), ("exhaust", r.exhaust), ("fan_infiltration", fan)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(format!("room `{}`: {name} must be >= 0", r.label)));
                }
            }
        }
        for e in &self.edges {
            for end in [&e.a, &e.b] {
                if self.room_index(end).is_none() {
                    return Err(invalid(format!("edge references unknown room `{end}`")));
                }
            }
            if e.a == e.b {
                return Err(invalid(format!("self edge on `{}`", e.a)));
            }
            if !(e.flow >= 0.0 && e.fan_boost >= 0.0 && e.flow.is_finite() && e.fan_boost.is_finite()) {
                return Err(invalid(format!("edge {}-{}: coefficients must be >= 0", e.a, e.b)));
            }
        }
        if !self.connected() {
            return Err(invalid("room graph is not connected"));
        }
        let mut ids = BTreeSet::new();
        if self.devices.is_empty() {
            return Err(invalid("at least one device is required"));
        }
        for d in &self.devices {
            if !ids.insert(d.device_id.as_str()) {
                return Err(invalid(format!("duplicate device `{}`", d.device_id)));
            }
            if d.device_id.is_empty() || d.device_id.contains('/') || d.device_id.contains('+') || d.device_id.contains('#') {
                return Err(invalid(format!("device id `{}` is not a valid topic segment", d.device_id)));
            }
            if self.room_index(&d.room).is_none() {
                return Err(invalid(format!("device `{}` in unknown room `{}`", d.device_id, d.room)));
            }
        }
        for s in &self.sources {
            if self.room_index(&s.room).is_none() {
                return Err(invalid(format!("source in unknown room `{}`", s.room)));
            }
            if s.activity.is_none() && s.kind.is_none() {
                return Err(invalid("source needs an activity or a kind"));
            }
            if !(s.duration_s >= 0.0 && s.start_s.is_finite()) {
                return Err(invalid("source timing must be finite with duration >= 0"));
            }
        }
        for f in &self.faults {
            if !ids.contains(f.device_id.as_str()) {
                return Err(invalid(format!("fault on unknown device `{}`", f.device_id)));
            }
        }
        let n = self.sensor.noise.into_iter().chain(self.sensor.noise_by_kind.values().copied());
        for v in n {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("noise must be >= 0"));
            }
        }
        if self.sensor.response_s.values().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid("response times must be >= 0"));
        }
        if self.loss_scale.values().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid("loss scales must be >= 0"));
        }
        Ok(())
    }

    fn connected(&self) -> bool {
        let n = self.rooms.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            let (a, b) = (self.room_index(&e.a).unwrap(), self.room_index(&e.b).unwrap());
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(r) = queue.pop_front() {
            for &m in &adj[r] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
site_id = "t"
mode = "NATURAL"
seed = 3

[[rooms]]
label = "a"
volume = "SMALL"
infiltration = 0.001

[[rooms]]
label = "b"
volume = "LARGE"

[[edges]]
a = "a"
b = "b"
flow = 0.01

[[devices]]
device_id = "t-a"
room = "a"

[[sources]]
room = "a"
activity = "FRYING"
start_s = 10
duration_s = 60
"#;

    #[test]
    fn parses_and_validates() {
        let s = ScenarioSpec::from_toml(MINI).unwrap();
        assert_eq!(s.mode, VentilationMode::Natural);
        assert_eq!(s.start_ms, DEFAULT_START_MS);
        assert_eq!(s.device_room("t-a"), Some(0));
        assert!(s.sources[0].active_at(10.0) && !s.sources[0].active_at(70.0));
        assert_eq!(s.noise(PollutantKind::Co2), DEFAULT_NOISE);
    }

    #[test]
    fn rejects_invalid_specs() {
        let disconnected = MINI.replace("flow = 0.01", "flow = 0.01\n[[rooms]]\nlabel = \"c\"\nvolume = \"SMALL\"");
        assert!(matches!(ScenarioSpec::from_toml(&disconnected), Err(SimError::SpecInvalid(_))));
        let bad_room = MINI.replace("room = \"a\"\n\n[[sources]]", "room = \"zz\"\n\n[[sources]]");
        assert!(matches!(ScenarioSpec::from_toml(&bad_room), Err(SimError::SpecInvalid(_))));
        let negative = MINI.replace("flow = 0.01", "flow = -0.01");
        assert!(matches!(ScenarioSpec::from_toml(&negative), Err(SimError::SpecInvalid(_))));
        let unknown = MINI.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(matches!(ScenarioSpec::from_toml(&unknown), Err(SimError::Parse(_))));
    }

    #[test]
    fn modes_parse() {
        assert_eq!("pull-inward".parse::<VentilationMode>(), Ok(VentilationMode::PullInward));
        assert!("open".parse::<VentilationMode>().is_err());
    }
}
