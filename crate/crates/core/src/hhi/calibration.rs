//! Calibration file: weights, window geometry, thresholds, normalization
//! bounds and IAQI breakpoints.
//!
//! The file is JSON with `"calib_version": 1`. Unknown keys are rejected so a
//! typo never silently falls back to a default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::iaqi::{default_breakpoints, Breakpoints};
use crate::model::PollutantKind;
use crate::window_stats::{StatKind, ThresholdSpec, Thresholds, DEFAULT_MIN_COVERAGE, DEFAULT_SAMPLE_INTERVAL_MS, DEFAULT_TAU_MS};

pub const CALIB_VERSION: u32 = 1;
pub const DEFAULT_STRIDE_MS: i64 = 60_000;
pub const DEFAULT_MAX_FILL_GAP_MS: i64 = 5_000;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("unsupported calib_version {0} (expected {CALIB_VERSION})")]
    Version(u32),
    #[error("missing calibration entry: {0}")]
    Missing(String),
    #[error("invalid calibration value `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("calibration parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read calibration file: {0}")]
    Io(#[from] std::io::Error),
}

/// Input-to-score normalization endpoints: `best` maps to 1, `worst` to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub best: f64,
    pub worst: f64,
}

impl Bound {
    pub fn new(best: f64, worst: f64) -> Self {
        Bound { best, worst }
    }
}

/// The normalization input a bound applies to: the window mean or one of the
/// eight window statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Mean,
    Stat(StatKind),
}

impl Source {
    pub fn all() -> impl Iterator<Item = Source> {
        std::iter::once(Source::Mean).chain(StatKind::ALL.into_iter().map(Source::Stat))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollutantBounds {
    pub mean: Bound,
    pub min: Bound,
    pub max: Bound,
    pub std: Bound,
    pub roc_raise: Bound,
    pub roc_fall: Bound,
    pub peak_count: Bound,
    pub peak_duration: Bound,
    pub long_stay: Bound,
}

impl PollutantBounds {
    pub fn get(&self, source: Source) -> Bound {
        match source {
            Source::Mean => self.mean,
            Source::Stat(StatKind::Min) => self.min,
            Source::Stat(StatKind::Max) => self.max,
            Source::Stat(StatKind::Std) => self.std,
            Source::Stat(StatKind::RocRaise) => self.roc_raise,
            Source::Stat(StatKind::RocFall) => self.roc_fall,
            Source::Stat(StatKind::PeakCount) => self.peak_count,
            Source::Stat(StatKind::PeakDuration) => self.peak_duration,
            Source::Stat(StatKind::LongStay) => self.long_stay,
        }
    }

    pub fn set(&mut self, source: Source, bound: Bound) {
        let slot = match source {
            Source::Mean => &mut self.mean,
            Source::Stat(StatKind::Min) => &mut self.min,
            Source::Stat(StatKind::Max) => &mut self.max,
            Source::Stat(StatKind::Std) => &mut self.std,
            Source::Stat(StatKind::RocRaise) => &mut self.roc_raise,
            Source::Stat(StatKind::RocFall) => &mut self.roc_fall,
            Source::Stat(StatKind::PeakCount) => &mut self.peak_count,
            Source::Stat(StatKind::PeakDuration) => &mut self.peak_duration,
            Source::Stat(StatKind::LongStay) => &mut self.long_stay,
        };
        *slot = bound;
    }

    pub fn uniform(b: Bound) -> Self {
        PollutantBounds {
            mean: b,
            min: b,
            max: b,
            std: b,
            roc_raise: b,
            roc_fall: b,
            peak_count: b,
            peak_duration: b,
            long_stay: b,
        }
    }

    /// Level statistics share the mean's endpoints; activity statistics run
    /// from zero activity to a quarter span (std), a span per minute (roc),
    /// ten peaks, and a full window of exceedance.
    pub fn derived(best_level: f64, t: &Thresholds, tau_s: f64) -> Self {
        let level = Bound::new(best_level, t.unsafe_level);
        let span = t.unsafe_level - t.safe;
        PollutantBounds {
            mean: level,
            min: level,
            max: level,
            std: Bound::new(0.0, span / 4.0),
            roc_raise: Bound::new(0.0, span / 60.0),
            roc_fall: Bound::new(0.0, span / 60.0),
            peak_count: Bound::new(0.0, 10.0),
            peak_duration: Bound::new(0.0, tau_s),
            long_stay: Bound::new(0.0, tau_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Fixed best/worst endpoints from this table, with clamping.
    #[default]
    Calibrated,
    /// Per-batch min–max over the evaluated series.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTable {
    pub calib_version: u32,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau_ms: i64,
    pub stride_ms: i64,
    #[serde(default = "default_interval")]
    pub sample_interval_ms: i64,
    #[serde(default = "default_coverage")]
    pub min_coverage: f64,
    #[serde(default = "default_fill_gap")]
    pub max_fill_gap_ms: i64,
    #[serde(default)]
    pub normalization: Normalization,
    pub pollutants: Vec<PollutantKind>,
    pub thresholds: BTreeMap<PollutantKind, ThresholdSpec>,
    pub bounds: BTreeMap<PollutantKind, PollutantBounds>,
    #[serde(default)]
    pub iaqi: BTreeMap<PollutantKind, Breakpoints>,
}

fn default_interval() -> i64 {
    DEFAULT_SAMPLE_INTERVAL_MS
}
fn default_coverage() -> f64 {
    DEFAULT_MIN_COVERAGE
}
fn default_fill_gap() -> i64 {
    DEFAULT_MAX_FILL_GAP_MS
}

/// Cleanest plausible level per kind, in the kind's exposure signal.
fn best_level(kind: PollutantKind) -> f64 {
    match kind {
        PollutantKind::Co2 => 415.0,
        PollutantKind::Voc => 220.0,
        _ => 0.0,
    }
}

pub const DEFAULT_POLLUTANTS: [PollutantKind; 6] = [
    PollutantKind::Co2,
    PollutantKind::Voc,
    PollutantKind::Pm2_5,
    PollutantKind::Pm10,
    PollutantKind::Temperature,
    PollutantKind::Humidity,
];

impl Default for CalibrationTable {
    fn default() -> Self {
        let tau_s = DEFAULT_TAU_MS as f64 / 1000.0;
        let mut thresholds = BTreeMap::new();
        let mut bounds = BTreeMap::new();
        for kind in DEFAULT_POLLUTANTS {
            let spec = ThresholdSpec::default_for(kind).expect("default pollutant has thresholds");
            let t = spec.thresholds(kind).expect("default thresholds are ordered");
            thresholds.insert(kind, spec);
            bounds.insert(kind, PollutantBounds::derived(best_level(kind), &t, tau_s));
        }
        CalibrationTable {
            calib_version: CALIB_VERSION,
            lambda1: 2.0,
            lambda2: 1.0,
            tau_ms: DEFAULT_TAU_MS,
            stride_ms: DEFAULT_STRIDE_MS,
            sample_interval_ms: DEFAULT_SAMPLE_INTERVAL_MS,
            min_coverage: DEFAULT_MIN_COVERAGE,
            max_fill_gap_ms: DEFAULT_MAX_FILL_GAP_MS,
            normalization: Normalization::Calibrated,
            pollutants: DEFAULT_POLLUTANTS.to_vec(),
            thresholds,
            bounds,
            iaqi: default_breakpoints(),
        }
    }
}

impl CalibrationTable {
    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let table: CalibrationTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serialization is infallible")
    }

    pub fn with_lambdas(mut self, lambda1: f64, lambda2: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_ms as f64 / 1000.0
    }

    pub fn threshold_spec(&self, kind: PollutantKind) -> Result<ThresholdSpec, CalibrationError> {
        self.thresholds
            .get(&kind)
            .copied()
            .ok_or_else(|| CalibrationError::Missing(format!("thresholds.{kind}")))
    }

    pub fn thresholds_for(&self, kind: PollutantKind) -> Result<Thresholds, CalibrationError> {
        self.threshold_spec(kind)?
            .thresholds(kind)
            .map_err(|e| CalibrationError::Invalid {
                key: format!("thresholds.{kind}"),
                reason: e.to_string(),
            })
    }

    pub fn bound(&self, kind: PollutantKind, source: Source) -> Result<Bound, CalibrationError> {
        self.bounds
            .get(&kind)
            .map(|b| b.get(source))
            .ok_or_else(|| CalibrationError::Missing(format!("bounds.{kind}")))
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.calib_version != CALIB_VERSION {
            return Err(CalibrationError::Version(self.calib_version));
        }
        let invalid = |key: &str, reason: &str| CalibrationError::Invalid {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return Err(invalid("lambda1", "must be positive"));
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return Err(invalid("lambda2", "must be positive"));
        }
        for (key, v) in [
            ("tau_ms", self.tau_ms),
            ("stride_ms", self.stride_ms),
            ("sample_interval_ms", self.sample_interval_ms),
        ] {
            if v <= 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.max_fill_gap_ms < 0 {
            return Err(invalid("max_fill_gap_ms", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(invalid("min_coverage", "must lie in [0, 1]"));
        }
        if self.pollutants.is_empty() {
            return Err(invalid("pollutants", "must name at least one kind"));
        }
        for &kind in &self.pollutants {
            self.thresholds_for(kind)?;
            let bounds = self
                .bounds
                .get(&kind)
                .ok_or_else(|| CalibrationError::Missing(format!("bounds.{kind}")))?;
            for source in Source::all() {
                let b = bounds.get(source);
                if !(b.best.is_finite() && b.worst.is_finite()) || b.best == b.worst {
                    return Err(invalid(
                        &format!("bounds.{kind}.{}", source_key(source)),
                        "best and worst must be finite and distinct",
                    ));
                }
            }
        }
        for (kind, bp) in &self.iaqi {
            bp.validate().map_err(|reason| invalid(&format!("iaqi.{kind}"), &reason))?;
        }
        Ok(())
    }
}

pub fn source_key(source: Source) -> &'static str {
    match source {
        Source::Mean => "mean",
        Source::Stat(StatKind::Min) => "min",
        Source::Stat(StatKind::Max) => "max",
        Source::Stat(StatKind::Std) => "std",
        Source::Stat(StatKind::RocRaise) => "roc_raise",
        Source::Stat(StatKind::RocFall) => "roc_fall",
        Source::Stat(StatKind::PeakCount) => "peak_count",
        Source::Stat(StatKind::PeakDuration) => "peak_duration",
        Source::Stat(StatKind::LongStay) => "long_stay",
    }
}
