//! Healthy Home Index: a 0–1000 score per window combining how far each
//! pollutant's level sits from its ideal (C1) with how calm its dynamics are
//! across every device in the home (C2).

pub mod calibration;
pub mod iaqi;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{
    Bound, CalibrationError, CalibrationTable, Normalization, PollutantBounds, Source, DEFAULT_POLLUTANTS,
};
pub use iaqi::{default_breakpoints, iaqi_of, Breakpoints};

use crate::model::{PollutantKind, Reading, TimestampMs};
use crate::window_stats::{compute_stats_with_coverage, StatKind, Window, WindowStats};

pub const HEALTHY_MIN: f64 = 700.0;
pub const ALERT_MIN: f64 = 400.0;
pub const HHI_MAX: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HhiError {
    #[error("degenerate normalization bounds: best == worst == {0}")]
    DegenerateBounds(f64),
    #[error("value {0} outside the 0-1000 scale")]
    OutOfScale(f64),
    #[error("component {name} = {value} outside [0, 1]")]
    ComponentRange { name: &'static str, value: f64 },
    #[error("no IAQI breakpoints for any present pollutant")]
    MissingBreakpoints,
    #[error("IAQI needs a single-device matrix, got {0} devices")]
    NotSingleDevice(usize),
    #[error("window has no present cells")]
    NoData,
    #[error("calibration: {0}")]
    Calibration(String),
}

impl From<CalibrationError> for HhiError {
    fn from(e: CalibrationError) -> Self {
        HhiError::Calibration(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Healthy,
    Alert,
    Actionable,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Healthy, Category::Alert, Category::Actionable];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Healthy => "HEALTHY",
            Category::Alert => "ALERT",
            Category::Actionable => "ACTIONABLE",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify(hhi: f64) -> Result<Category, HhiError> {
    if !(0.0..=HHI_MAX).contains(&hhi) {
        return Err(HhiError::OutOfScale(hhi));
    }
    Ok(if hhi >= HEALTHY_MIN {
        Category::Healthy
    } else if hhi >= ALERT_MIN {
        Category::Alert
    } else {
        Category::Actionable
    })
}

/// Affine map sending `best` to 1 and `worst` to 0, after clamping `v` into the
/// interval between them.
pub fn phi_value(v: f64, best: f64, worst: f64) -> Result<f64, HhiError> {
    if best == worst {
        return Err(HhiError::DegenerateBounds(best));
    }
    let clamped = v.clamp(best.min(worst), best.max(worst));
    Ok(((clamped - worst) / (best - worst)).clamp(0.0, 1.0))
}

pub fn phi(values: &[f64], best: f64, worst: f64) -> Result<Vec<f64>, HhiError> {
    values.iter().map(|&v| phi_value(v, best, worst)).collect()
}

/// One (device, pollutant) entry of a window matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    /// Window mean of the raw readings.
    pub raw_mean: f64,
    /// Exposure signal of `raw_mean`; what C1 normalizes.
    pub exposure: f64,
    pub stats: WindowStats,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Cell {
    Present(CellStats),
    Absent,
}

/// Per-window statistics for every device and pollutant in a home.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMatrix {
    pub start_ms: TimestampMs,
    pub tau_ms: i64,
    pub devices: Vec<String>,
    pub pollutants: Vec<PollutantKind>,
    cells: BTreeMap<(usize, PollutantKind), CellStats>,
}

impl WindowMatrix {
    pub fn new(start_ms: TimestampMs, tau_ms: i64, devices: Vec<String>, pollutants: Vec<PollutantKind>) -> Self {
        WindowMatrix {
            start_ms,
            tau_ms,
            devices,
            pollutants,
            cells: BTreeMap::new(),
        }
    }

    pub fn end_ms(&self) -> TimestampMs {
        self.start_ms + self.tau_ms
    }

    pub fn insert(&mut self, device: &str, kind: PollutantKind, cell: CellStats) {
        let idx = match self.devices.iter().position(|d| d == device) {
            Some(i) => i,
            None => {
                self.devices.push(device.to_string());
                self.devices.len() - 1
            }
        };
        self.cells.insert((idx, kind), cell);
    }

    pub fn cell(&self, device: &str, kind: PollutantKind) -> Cell {
        self.devices
            .iter()
            .position(|d| d == device)
            .and_then(|i| self.cells.get(&(i, kind)))
            .map_or(Cell::Absent, |c| Cell::Present(c.clone()))
    }

    fn present(&self, device: usize, kind: PollutantKind) -> Option<&CellStats> {
        self.cells.get(&(device, kind))
    }

    pub fn present_cells(&self) -> usize {
        self.cells.len()
    }

    /// Devices with at least one present cell.
    pub fn device_count(&self) -> usize {
        (0..self.devices.len())
            .filter(|&d| self.pollutants.iter().any(|&k| self.present(d, k).is_some()))
            .count()
    }

    /// Builds a cell from raw samples; too little data leaves the cell absent.
    pub fn insert_window(&mut self, device: &str, raw: &Window, cal: &CalibrationTable) -> Result<bool, HhiError> {
        let spec = cal.threshold_spec(raw.kind)?;
        let thresholds = cal.thresholds_for(raw.kind)?;
        let signal = Window {
            samples: raw.samples.iter().map(|&(t, v)| (t, spec.signal(v))).collect(),
            ..raw.clone()
        };
        let stats = match compute_stats_with_coverage(&signal, &thresholds, cal.min_coverage) {
            Ok(s) => s,
            Err(_) => return Ok(false),
        };
        let raw_mean = raw.mean().expect("stats imply samples");
        self.insert(
            device,
            raw.kind,
            CellStats {
                raw_mean,
                exposure: spec.signal(raw_mean),
                stats,
                coverage: raw.coverage(),
            },
        );
        Ok(true)
    }
}

type BoundsMap = BTreeMap<PollutantKind, PollutantBounds>;

/// Degenerate bounds are an error in calibrated mode and a neutral 1 in
/// empirical mode, where a constant input carries no information.
fn phi_with(v: f64, b: Bound, lenient: bool) -> Result<f64, HhiError> {
    if lenient && b.best == b.worst {
        return Ok(1.0);
    }
    phi_value(v, b.best, b.worst)
}

fn bound_of(bounds: &BoundsMap, kind: PollutantKind, source: Source) -> Result<Bound, HhiError> {
    bounds
        .get(&kind)
        .map(|b| b.get(source))
        .ok_or_else(|| HhiError::Calibration(format!("missing bounds for {kind}")))
}

fn c1_with(m: &WindowMatrix, bounds: &BoundsMap, lenient: bool) -> Result<f64, HhiError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in 0..m.devices.len() {
        for &kind in &m.pollutants {
            if let Some(cell) = m.present(d, kind) {
                sum += phi_with(cell.exposure, bound_of(bounds, kind, Source::Mean)?, lenient)?;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(HhiError::NoData);
    }
    Ok(sum / n as f64)
}

fn c2_with(m: &WindowMatrix, bounds: &BoundsMap, lenient: bool) -> Result<f64, HhiError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &kind in &m.pollutants {
        for stat in StatKind::ALL {
            let b = bound_of(bounds, kind, Source::Stat(stat))?;
            let mut product = 1.0;
            let mut any = false;
            for d in 0..m.devices.len() {
                if let Some(cell) = m.present(d, kind) {
                    product *= phi_with(cell.stats.get(stat), b, lenient)?;
                    any = true;
                }
            }
            if any {
                sum += product;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(HhiError::NoData);
    }
    Ok(sum / n as f64)
}

/// Mean normalized level over present cells.
pub fn compute_c1(m: &WindowMatrix, cal: &CalibrationTable) -> Result<f64, HhiError> {
    c1_with(m, &cal.bounds, false)
}

/// Mean over (pollutant, statistic) pairs of the product across devices of
/// the normalized statistic. Absent devices contribute a factor of 1.
pub fn compute_c2(m: &WindowMatrix, cal: &CalibrationTable) -> Result<f64, HhiError> {
    c2_with(m, &cal.bounds, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HhiScore {
    pub hhi: f64,
    pub c1: f64,
    pub c2: f64,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HhiPoint {
    /// End of the window the score covers.
    pub ts_ms: TimestampMs,
    #[serde(flatten)]
    pub score: HhiScore,
    pub device_count: usize,
}

impl HhiPoint {
    pub fn hhi(&self) -> f64 {
        self.score.hhi
    }

    pub fn category(&self) -> Category {
        self.score.category
    }
}

fn weighted(c1: f64, c2: f64, cal: &CalibrationTable) -> f64 {
    (cal.lambda1 * c1 + cal.lambda2 * c2) / (cal.lambda1 + cal.lambda2)
}

pub fn compute_hhi(c1: f64, c2: f64, cal: &CalibrationTable) -> Result<HhiScore, HhiError> {
    for (name, value) in [("c1", c1), ("c2", c2)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(HhiError::ComponentRange { name, value });
        }
    }
    let (l1, l2) = (cal.lambda1, cal.lambda2);
    let hhi = (HHI_MAX * (l1 * c1 + l2 * c2) / (l1 + l2)).clamp(0.0, HHI_MAX);
    Ok(HhiScore {
        hhi,
        c1,
        c2,
        category: classify(hhi)?,
    })
}

/// Streams resampled onto a shared regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedStreams {
    pub start_ms: TimestampMs,
    pub interval_ms: i64,
    pub len: usize,
    pub series: BTreeMap<String, BTreeMap<PollutantKind, Vec<Option<f64>>>>,
}

impl AlignedStreams {
    pub fn end_ms(&self) -> TimestampMs {
        self.start_ms + self.len as i64 * self.interval_ms
    }

    fn window(&self, device: &str, kind: PollutantKind, start_ms: TimestampMs, tau_ms: i64) -> Window {
        let first = ((start_ms - self.start_ms) / self.interval_ms) as usize;
        let count = (tau_ms / self.interval_ms) as usize;
        let samples = self.series[device]
            .get(&kind)
            .map(|slots| {
                (first..(first + count).min(self.len))
                    .filter_map(|k| slots[k].map(|v| (self.start_ms + k as i64 * self.interval_ms, v)))
                    .collect()
            })
            .unwrap_or_default();
        Window {
            kind,
            start_ms,
            duration_ms: tau_ms,
            samples,
            sample_interval_ms: self.interval_ms,
        }
    }
}

/// Places each reading in its grid slot and forward-fills gaps of at most
/// `max_gap_ms`; longer gaps stay empty. The grid starts at the earliest
/// reading rounded down to the interval.
pub fn align(
    streams: &BTreeMap<String, Vec<Reading>>,
    kinds: &[PollutantKind],
    interval_ms: i64,
    max_gap_ms: i64,
) -> Option<AlignedStreams> {
    let all_ts = streams.values().flatten().map(|r| r.ts_ms);
    let (lo, hi) = all_ts.fold(None, |acc: Option<(i64, i64)>, t| {
        Some(acc.map_or((t, t), |(a, b)| (a.min(t), b.max(t))))
    })?;
    let start_ms = lo.div_euclid(interval_ms) * interval_ms;
    let len = ((hi - start_ms) / interval_ms + 1) as usize;
    Some(align_grid(streams, kinds, start_ms, len, interval_ms, max_gap_ms))
}

/// Like [`align`] on an explicit grid of `len` slots from `start_ms`.
/// Readings outside the grid only seed or end forward fills.
pub fn align_grid(
    streams: &BTreeMap<String, Vec<Reading>>,
    kinds: &[PollutantKind],
    start_ms: TimestampMs,
    len: usize,
    interval_ms: i64,
    max_gap_ms: i64,
) -> AlignedStreams {
    let end_ms = start_ms + len as i64 * interval_ms;
    let slot = |ts: i64| (ts - start_ms).div_euclid(interval_ms);
    let mut series = BTreeMap::new();
    for (device, readings) in streams {
        let mut per_kind = BTreeMap::new();
        for &kind in kinds {
            let mut points: Vec<(i64, f64)> = readings
                .iter()
                .filter_map(|r| r.get(kind).map(|v| (r.ts_ms, v)))
                .collect();
            points.sort_by_key(|p| p.0);
            let mut slots = vec![None; len];
            for (i, &(ts, v)) in points.iter().enumerate() {
                let k = slot(ts);
                if (0..len as i64).contains(&k) {
                    slots[k as usize] = Some(v);
                }
                let next_ts = points.get(i + 1).map_or(end_ms, |p| p.0);
                if next_ts - ts <= max_gap_ms {
                    let from = (k + 1).clamp(0, len as i64) as usize;
                    let to = slot(next_ts).clamp(0, len as i64) as usize;
                    for s in slots.iter_mut().take(to).skip(from) {
                        *s = Some(v);
                    }
                }
            }
            per_kind.insert(kind, slots);
        }
        series.insert(device.clone(), per_kind);
    }
    AlignedStreams {
        start_ms,
        interval_ms,
        len,
        series,
    }
}

fn matrix_at(
    aligned: &AlignedStreams,
    devices: &[String],
    start: TimestampMs,
    cal: &CalibrationTable,
) -> Result<WindowMatrix, HhiError> {
    let mut m = WindowMatrix::new(start, cal.tau_ms, devices.to_vec(), cal.pollutants.clone());
    for device in devices {
        for &kind in &cal.pollutants {
            let w = aligned.window(device, kind, start, cal.tau_ms);
            m.insert_window(device, &w, cal)?;
        }
    }
    Ok(m)
}

/// Calibrated score of the single window `[end_ms - tau, end_ms)`, or `None`
/// when no cell in it has enough data.
pub fn hhi_window(
    streams: &BTreeMap<String, Vec<Reading>>,
    end_ms: TimestampMs,
    cal: &CalibrationTable,
) -> Result<Option<HhiPoint>, HhiError> {
    let start = end_ms - cal.tau_ms;
    let len = (cal.tau_ms / cal.sample_interval_ms) as usize;
    let aligned = align_grid(streams, &cal.pollutants, start, len, cal.sample_interval_ms, cal.max_fill_gap_ms);
    let devices: Vec<String> = streams.keys().cloned().collect();
    let m = matrix_at(&aligned, &devices, start, cal)?;
    if m.present_cells() == 0 {
        return Ok(None);
    }
    let score = compute_hhi(compute_c1(&m, cal)?, compute_c2(&m, cal)?, cal)?;
    Ok(Some(HhiPoint {
        ts_ms: end_ms,
        score,
        device_count: m.device_count(),
    }))
}

/// Window matrices for every full window of the aligned streams, in time
/// order. Windows with no present cell are dropped.
pub fn window_matrices(
    streams: &BTreeMap<String, Vec<Reading>>,
    cal: &CalibrationTable,
) -> Result<Vec<WindowMatrix>, HhiError> {
    cal.validate()?;
    let Some(aligned) = align(streams, &cal.pollutants, cal.sample_interval_ms, cal.max_fill_gap_ms) else {
        return Ok(Vec::new());
    };
    let mut starts = Vec::new();
    let mut s = aligned.start_ms;
    while s + cal.tau_ms <= aligned.end_ms() {
        starts.push(s);
        s += cal.stride_ms;
    }
    let devices: Vec<String> = streams.keys().cloned().collect();
    let built: Result<Vec<WindowMatrix>, HhiError> = starts
        .par_iter()
        .map(|&start| matrix_at(&aligned, &devices, start, cal))
        .collect();
    Ok(built?.into_iter().filter(|m| m.present_cells() > 0).collect())
}

/// Per-batch bounds: best is the smallest observed input, worst the largest.
pub fn empirical_bounds(matrices: &[WindowMatrix], kinds: &[PollutantKind]) -> BTreeMap<PollutantKind, PollutantBounds> {
    let mut out = BTreeMap::new();
    for &kind in kinds {
        let mut b = PollutantBounds::uniform(Bound::new(0.0, 0.0));
        for source in Source::all() {
            let (lo, hi) = matrices
                .iter()
                .flat_map(|m| (0..m.devices.len()).filter_map(move |d| m.present(d, kind)))
                .map(|c| match source {
                    Source::Mean => c.exposure,
                    Source::Stat(s) => c.stats.get(s),
                })
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let bound = if lo.is_finite() { Bound::new(lo, hi) } else { Bound::new(0.0, 0.0) };
            b.set(source, bound);
        }
        out.insert(kind, b);
    }
    out
}

/// Scores a sequence of window matrices under the table's normalization mode.
pub fn score_matrices(matrices: &[WindowMatrix], cal: &CalibrationTable) -> Result<Vec<HhiPoint>, HhiError> {
    match cal.normalization {
        Normalization::Calibrated => matrices
            .iter()
            .map(|m| {
                let score = compute_hhi(compute_c1(m, cal)?, compute_c2(m, cal)?, cal)?;
                Ok(HhiPoint {
                    ts_ms: m.end_ms(),
                    score,
                    device_count: m.device_count(),
                })
            })
            .collect(),
        Normalization::Empirical => {
            let bounds = empirical_bounds(matrices, &cal.pollutants);
            let comps: Vec<(f64, f64)> = matrices
                .iter()
                .map(|m| Ok((c1_with(m, &bounds, true)?, c2_with(m, &bounds, true)?)))
                .collect::<Result<_, HhiError>>()?;
            let s: Vec<f64> = comps.iter().map(|&(c1, c2)| weighted(c1, c2, cal)).collect();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            matrices
                .iter()
                .zip(comps.iter().zip(&s))
                .map(|(m, (&(c1, c2), &st))| {
                    let hhi = if hi > lo {
                        (HHI_MAX * (st - lo) / (hi - lo)).clamp(0.0, HHI_MAX)
                    } else {
                        HHI_MAX * st
                    };
                    Ok(HhiPoint {
                        ts_ms: m.end_ms(),
                        score: HhiScore {
                            hhi,
                            c1,
                            c2,
                            category: classify(hhi)?,
                        },
                        device_count: m.device_count(),
                    })
                })
                .collect()
        }
    }
}

/// HHI over sliding windows of `tau_ms` stepped by `stride_ms`, one point per
/// window stamped with the window end.
pub fn hhi_series(streams: &BTreeMap<String, Vec<Reading>>, cal: &CalibrationTable) -> Result<Vec<HhiPoint>, HhiError> {
    score_matrices(&window_matrices(streams, cal)?, cal)
}

/// IAQI of a single-device window from the raw means of its present cells.
pub fn compute_iaqi(m: &WindowMatrix, breakpoints: &BTreeMap<PollutantKind, Breakpoints>) -> Result<f64, HhiError> {
    if m.devices.len() != 1 {
        return Err(HhiError::NotSingleDevice(m.devices.len()));
    }
    let means = m.pollutants.iter().filter_map(|&k| m.present(0, k).map(|c| (k, c.raw_mean)));
    iaqi_of(means, breakpoints).ok_or(HhiError::MissingBreakpoints)
}

/// Share of points per category, in `[0, 1]`.
pub fn category_shares(points: &[HhiPoint]) -> BTreeMap<Category, f64> {
    let mut out: BTreeMap<Category, f64> = Category::ALL.iter().map(|&c| (c, 0.0)).collect();
    if points.is_empty() {
        return out;
    }
    for p in points {
        *out.entry(p.category()).or_default() += 1.0;
    }
    let n = points.len() as f64;
    out.values_mut().for_each(|v| *v /= n);
    out
}
