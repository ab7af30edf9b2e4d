//! The eight statistical properties of one pollutant series over a window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PollutantKind, TimestampMs};

pub const DEFAULT_TAU_MS: i64 = 600_000;
pub const DEFAULT_SAMPLE_INTERVAL_MS: i64 = 1_000;
pub const DEFAULT_MIN_COVERAGE: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: coverage {coverage:.3} with {samples} samples")]
    InsufficientData { coverage: f64, samples: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid thresholds for {kind}: safe {safe} must be below unsafe {unsafe_level}")]
    InvalidThresholds {
        kind: PollutantKind,
        safe: f64,
        unsafe_level: f64,
    },
}

/// Safe and unsafe levels applied to an exposure signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kind: PollutantKind,
    pub safe: f64,
    #[serde(rename = "unsafe")]
    pub unsafe_level: f64,
}

impl Thresholds {
    pub fn new(kind: PollutantKind, safe: f64, unsafe_level: f64) -> Result<Self, StatsError> {
        if !(safe < unsafe_level) {
            return Err(StatsError::InvalidThresholds {
                kind,
                safe,
                unsafe_level,
            });
        }
        Ok(Thresholds {
            kind,
            safe,
            unsafe_level,
        })
    }
}

/// How raw readings of one kind become the exposure signal the thresholds
/// apply to.
///
/// Ceiling kinds use the raw value. Comfort kinds use the distance from the
/// band centre divided by the half-width, so 1.0 is the band edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdSpec {
    Ceiling {
        safe: f64,
        #[serde(rename = "unsafe")]
        unsafe_level: f64,
    },
    Band {
        low: f64,
        high: f64,
        unsafe_deviation: f64,
    },
}

impl ThresholdSpec {
    pub fn signal(&self, value: f64) -> f64 {
        match *self {
            ThresholdSpec::Ceiling { .. } => value,
            ThresholdSpec::Band { low, high, .. } => {
                let centre = 0.5 * (low + high);
                let half = 0.5 * (high - low);
                (value - centre).abs() / half
            }
        }
    }

    pub fn thresholds(&self, kind: PollutantKind) -> Result<Thresholds, StatsError> {
        match *self {
            ThresholdSpec::Ceiling { safe, unsafe_level } => Thresholds::new(kind, safe, unsafe_level),
            ThresholdSpec::Band {
                low,
                high,
                unsafe_deviation,
            } => {
                if !(low < high) {
                    return Err(StatsError::InvalidThresholds {
                        kind,
                        safe: low,
                        unsafe_level: high,
                    });
                }
                Thresholds::new(kind, 1.0, unsafe_deviation)
            }
        }
    }

    /// Default levels; `None` for kinds without default thresholds.
    pub fn default_for(kind: PollutantKind) -> Option<ThresholdSpec> {
        use PollutantKind::*;
        let ceiling = |safe, unsafe_level| Some(ThresholdSpec::Ceiling { safe, unsafe_level });
        match kind {
            Co2 => ceiling(415.0, 1000.0),
            Voc => ceiling(220.0, 500.0),
            Pm2_5 => ceiling(12.0, 35.0),
            Pm10 => ceiling(50.0, 150.0),
            Temperature => Some(ThresholdSpec::Band {
                low: 18.0,
                high: 30.0,
                unsafe_deviation: 1.5,
            }),
            Humidity => Some(ThresholdSpec::Band {
                low: 30.0,
                high: 70.0,
                unsafe_deviation: 1.5,
            }),
            No2 | C2h5oh | Co => None,
        }
    }
}

/// An ordered run of samples of one kind inside `[start_ms, start_ms + duration_ms)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub kind: PollutantKind,
    pub start_ms: TimestampMs,
    pub duration_ms: i64,
    pub samples: Vec<(TimestampMs, f64)>,
    pub sample_interval_ms: i64,
}

impl Window {
    pub fn new(
        kind: PollutantKind,
        start_ms: TimestampMs,
        duration_ms: i64,
        sample_interval_ms: i64,
        samples: Vec<(TimestampMs, f64)>,
    ) -> Result<Self, StatsError> {
        if duration_ms <= 0 || sample_interval_ms <= 0 {
            return Err(StatsError::InvalidWindow(
                "duration and sample interval must be positive".into(),
            ));
        }
        let end = start_ms + duration_ms;
        if let Some(&(ts, _)) = samples.iter().find(|(ts, _)| *ts < start_ms || *ts >= end) {
            return Err(StatsError::InvalidWindow(format!(
                "sample at {ts} outside [{start_ms}, {end})"
            )));
        }
        if samples.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(StatsError::InvalidWindow("timestamps must strictly increase".into()));
        }
        Ok(Window {
            kind,
            start_ms,
            duration_ms,
            samples,
            sample_interval_ms,
        })
    }

    /// Builds a window over values sampled every `interval_ms` from `start_ms`.
    pub fn regular(kind: PollutantKind, start_ms: TimestampMs, interval_ms: i64, values: &[f64]) -> Self {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (start_ms + i as i64 * interval_ms, v))
            .collect();
        Window {
            kind,
            start_ms,
            duration_ms: (values.len().max(1) as i64) * interval_ms,
            samples,
            sample_interval_ms: interval_ms,
        }
    }

    pub fn with_duration(mut self, duration_ms: i64) -> Self {
        self.duration_ms = duration_ms;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        let covered = self.samples.len() as f64 * self.sample_interval_ms as f64;
        (covered / self.duration_ms as f64).min(1.0)
    }

    pub fn mean(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        Some(self.samples.iter().map(|s| s.1).sum::<f64>() / self.samples.len() as f64)
    }

    fn interval_s(&self) -> f64 {
        self.sample_interval_ms as f64 / 1000.0
    }

    fn tau_s(&self) -> f64 {
        self.duration_ms as f64 / 1000.0
    }
}

/// Identifies one of the eight window statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Min,
    Max,
    Std,
    RocRaise,
    RocFall,
    PeakCount,
    PeakDuration,
    LongStay,
}

impl StatKind {
    pub const ALL: [StatKind; 8] = [
        StatKind::Min,
        StatKind::Max,
        StatKind::Std,
        StatKind::RocRaise,
        StatKind::RocFall,
        StatKind::PeakCount,
        StatKind::PeakDuration,
        StatKind::LongStay,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub min: f64,
    pub max: f64,
    pub std: f64,
    /// Largest rising slope between consecutive samples, units per second.
    pub roc_raise: f64,
    /// Largest falling slope magnitude between consecutive samples.
    pub roc_fall: f64,
    pub peak_c: u32,
    /// Seconds above the unsafe level.
    pub peak_delta: f64,
    /// Seconds in the moderate band `(safe, unsafe]`.
    pub long_stay: f64,
}

impl WindowStats {
    pub fn get(&self, stat: StatKind) -> f64 {
        match stat {
            StatKind::Min => self.min,
            StatKind::Max => self.max,
            StatKind::Std => self.std,
            StatKind::RocRaise => self.roc_raise,
            StatKind::RocFall => self.roc_fall,
            StatKind::PeakCount => self.peak_c as f64,
            StatKind::PeakDuration => self.peak_delta,
            StatKind::LongStay => self.long_stay,
        }
    }
}

pub fn compute_stats(w: &Window, t: &Thresholds) -> Result<WindowStats, StatsError> {
    compute_stats_with_coverage(w, t, DEFAULT_MIN_COVERAGE)
}

pub fn compute_stats_with_coverage(
    w: &Window,
    t: &Thresholds,
    min_coverage: f64,
) -> Result<WindowStats, StatsError> {
    let coverage = w.coverage();
    if w.len() < 2 || coverage < min_coverage {
        return Err(StatsError::InsufficientData {
            coverage,
            samples: w.len(),
        });
    }
    let n = w.len() as f64;
    let (min, max) = w
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    let mean = w.samples.iter().map(|s| s.1).sum::<f64>() / n;
    let var = w.samples.iter().map(|s| (s.1 - mean) * (s.1 - mean)).sum::<f64>() / n;
    let (roc_raise, roc_fall) = rate_of_change(w)?;
    let (peak_c, peak_delta) = peaks(w, t.unsafe_level);
    Ok(WindowStats {
        min,
        max,
        std: var.sqrt(),
        roc_raise,
        roc_fall,
        peak_c,
        peak_delta,
        long_stay: long_stay(w, t),
    })
}

/// Steepest rise and steepest fall between consecutive samples, using the
/// actual timestamp gap of each pair.
pub fn rate_of_change(w: &Window) -> Result<(f64, f64), StatsError> {
    if w.len() < 2 {
        return Err(StatsError::InsufficientData {
            coverage: w.coverage(),
            samples: w.len(),
        });
    }
    Ok(w.samples.windows(2).fold((0.0f64, 0.0f64), |(up, down), pair| {
        let dt = (pair[1].0 - pair[0].0) as f64 / 1000.0;
        let dv = pair[1].1 - pair[0].1;
        (up.max(dv.max(0.0) / dt), down.max((-dv).max(0.0) / dt))
    }))
}

/// Excursions strictly above `unsafe_level`. A window that opens above the
/// level counts as one excursion.
pub fn peaks(w: &Window, unsafe_level: f64) -> (u32, f64) {
    let mut count = 0u32;
    let mut above = 0usize;
    let mut was_above = false;
    for &(_, v) in &w.samples {
        let is_above = v > unsafe_level;
        if is_above {
            above += 1;
            if !was_above {
                count += 1;
            }
        }
        was_above = is_above;
    }
    (count, (above as f64 * w.interval_s()).min(w.tau_s()))
}

/// Seconds spent in the moderate band `(safe, unsafe]`.
pub fn long_stay(w: &Window, t: &Thresholds) -> f64 {
    let in_band = w
        .samples
        .iter()
        .filter(|(_, v)| *v > t.safe && *v <= t.unsafe_level)
        .count();
    (in_band as f64 * w.interval_s()).min(w.tau_s())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn co2() -> Thresholds {
        Thresholds::new(PollutantKind::Co2, 415.0, 1000.0).unwrap()
    }

    fn win(values: &[f64]) -> Window {
        Window::regular(PollutantKind::Co2, 1_000_000, 1000, values)
    }

    #[test]
    fn constant_below_safe_is_all_zero() {
        let w = win(&[400.0; 600]);
        let s = compute_stats(&w, &co2()).unwrap();
        assert_eq!(s.min, 400.0);
        assert_eq!(s.max, 400.0);
        assert_eq!(s.std, 0.0);
        assert_eq!((s.roc_raise, s.roc_fall), (0.0, 0.0));
        assert_eq!((s.peak_c, s.peak_delta, s.long_stay), (0, 0.0, 0.0));
    }

    #[test]
    fn two_rising_crossings() {
        let w = win(&[400.0, 1200.0, 1300.0, 420.0, 1100.0, 410.0]);
        assert_eq!(peaks(&w, 1000.0), (2, 3.0));
        let s = compute_stats(&w, &co2()).unwrap();
        assert_eq!(s.peak_c, 2);
        assert_eq!(s.peak_delta, 3.0);
    }

    #[test]
    fn rate_of_change_examples() {
        assert_eq!(rate_of_change(&win(&[400.0, 410.0, 430.0, 425.0])).unwrap(), (20.0, 5.0));
        let (up, down) = rate_of_change(&win(&[500.0, 480.0, 470.0, 400.0])).unwrap();
        assert_eq!(up, 0.0);
        assert_eq!(down, 70.0);
        let w = Window::new(PollutantKind::Co2, 0, 10_000, 1000, vec![(0, 100.0), (3000, 130.0)]).unwrap();
        assert_eq!(rate_of_change(&w).unwrap(), (10.0, 0.0));
        assert!(rate_of_change(&win(&[1.0])).is_err());
    }

    #[test]
    fn peak_boundaries() {
        let w = win(&[1200.0; 30]);
        assert_eq!(peaks(&w, 1000.0), (1, 30.0));
        assert_eq!(peaks(&win(&[1000.0; 10]), 1000.0), (0, 0.0));
        let empty = Window::new(PollutantKind::Co2, 0, 1000, 1000, vec![]).unwrap();
        assert_eq!(peaks(&empty, 1.0), (0, 0.0));
    }

    #[test]
    fn long_stay_band_is_half_open() {
        assert_eq!(long_stay(&win(&[600.0; 120]), &co2()), 120.0);
        assert_eq!(long_stay(&win(&[1200.0; 120]), &co2()), 0.0);
        assert_eq!(long_stay(&win(&[1000.0; 5]), &co2()), 5.0);
        assert_eq!(long_stay(&win(&[415.0; 5]), &co2()), 0.0);
    }

    #[test]
    fn mixed_series_partitions_the_span() {
        let values = [400.0, 500.0, 1100.0, 900.0, 415.0, 1001.0, 700.0];
        let w = win(&values);
        let t = co2();
        let below = values.iter().filter(|v| **v <= t.safe).count() as f64;
        let (_, pd) = peaks(&w, t.unsafe_level);
        assert_eq!(below + long_stay(&w, &t) + pd, values.len() as f64);
    }

    #[test]
    fn population_std() {
        let w = win(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(compute_stats(&w, &co2()).unwrap().std, 2.0);
    }

    #[test]
    fn coverage_gate() {
        let w = win(&[400.0; 100]).with_duration(DEFAULT_TAU_MS);
        match compute_stats(&w, &co2()) {
            Err(StatsError::InsufficientData { coverage, samples }) => {
                assert_eq!(samples, 100);
                assert!((coverage - 100.0 / 600.0).abs() < 1e-12);
            }
            other => panic!("expected InsufficientData, got {other:?}"),
        }
        assert!(compute_stats(&win(&[400.0]), &co2()).is_err());
        assert!(compute_stats(&win(&[400.0; 480]).with_duration(DEFAULT_TAU_MS), &co2()).is_ok());
    }

    #[test]
    fn window_construction_rejects_bad_samples() {
        assert!(Window::new(PollutantKind::Co2, 0, 1000, 1000, vec![(1000, 1.0)]).is_err());
        assert!(Window::new(PollutantKind::Co2, 0, 5000, 1000, vec![(2000, 1.0), (2000, 2.0)]).is_err());
        assert!(Window::new(PollutantKind::Co2, 0, 0, 1000, vec![]).is_err());
    }

    #[test]
    fn band_signal_is_normalised_distance() {
        let t = ThresholdSpec::default_for(PollutantKind::Temperature).unwrap();
        assert_eq!(t.signal(24.0), 0.0);
        assert_eq!(t.signal(30.0), 1.0);
        assert_eq!(t.signal(18.0), 1.0);
        assert_eq!(t.signal(33.0), 1.5);
        let th = t.thresholds(PollutantKind::Temperature).unwrap();
        assert_eq!((th.safe, th.unsafe_level), (1.0, 1.5));
        assert!(Thresholds::new(PollutantKind::Co2, 5.0, 5.0).is_err());
    }

    fn arb_values() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..2000.0, 2..200)
    }

    proptest! {
        #[test]
        fn stats_ranges_hold(values in arb_values()) {
            let s = compute_stats(&win(&values), &co2()).unwrap();
            prop_assert!(s.min <= s.max);
            prop_assert!(s.std >= 0.0);
            prop_assert!(s.roc_raise >= 0.0 && s.roc_fall >= 0.0);
            prop_assert_eq!(s.peak_c == 0, s.peak_delta == 0.0);
            let tau = values.len() as f64;
            prop_assert!(s.peak_delta <= tau && s.long_stay <= tau);
        }

        #[test]
        fn translation_invariance(values in arb_values(), c in -100.0f64..100.0) {
            let t = co2();
            let a = compute_stats(&win(&values), &t).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let b = compute_stats(&win(&shifted), &t).unwrap();
            prop_assert!((b.min - (a.min + c)).abs() < 1e-9);
            prop_assert!((b.max - (a.max + c)).abs() < 1e-9);
            prop_assert!((b.std - a.std).abs() < 1e-6);
            prop_assert!((b.roc_raise - a.roc_raise).abs() < 1e-9);
            prop_assert!((b.roc_fall - a.roc_fall).abs() < 1e-9);
        }

        #[test]
        fn scale_covariance(values in arb_values(), k in 0.1f64..10.0) {
            let t = co2();
            let a = compute_stats(&win(&values), &t).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
            let scaled_t = Thresholds::new(PollutantKind::Co2, t.safe * k, t.unsafe_level * k).unwrap();
            let b = compute_stats(&win(&scaled), &scaled_t).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
            prop_assert!(close(b.min, a.min * k));
            prop_assert!(close(b.max, a.max * k));
            prop_assert!(close(b.std, a.std * k));
            prop_assert!(close(b.roc_raise, a.roc_raise * k));
            prop_assert!(close(b.roc_fall, a.roc_fall * k));
        }
    }
}
