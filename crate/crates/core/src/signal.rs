//! Cross-correlation and time-lag estimation between two series.
//!
//! `xr[m] = Σ_l x[l] · y[l + m]` for every lag `m ∈ [-(|x|-1), |y|-1]`, with
//! `y` zero outside its support. A positive lag means `y` repeats the pattern
//! of `x` `m` samples later.

use serde::Serialize;
use thiserror::Error;

/// Peaks below this normalized correlation are reported as uncorrelated.
pub const DEFAULT_MIN_CORR: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("series must be non-empty")]
    EmptySeries,
    #[error("reference series longer than target ({x} > {y})")]
    LengthOrder { x: usize, y: usize },
    #[error("normalized correlation undefined for a zero-norm series")]
    ZeroNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagResult {
    /// Correlation per lag, starting at lag `-(|x|-1)`.
    pub xr: Vec<f64>,
    pub best_lag: i64,
    pub peak_value: f64,
    /// Lag of `xr[0]`.
    pub min_lag: i64,
}

impl LagResult {
    pub fn at_lag(&self, lag: i64) -> Option<f64> {
        let idx = lag - self.min_lag;
        usize::try_from(idx).ok().and_then(|i| self.xr.get(i).copied())
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.xr.len() as i64).map(move |i| i + self.min_lag)
    }
}

pub fn cross_correlate(x: &[f64], y: &[f64], normalized: bool) -> Result<LagResult, SignalError> {
    if x.is_empty() || y.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    if x.len() > y.len() {
        return Err(SignalError::LengthOrder { x: x.len(), y: y.len() });
    }
    let scale = if normalized {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            return Err(SignalError::ZeroNorm);
        }
        Some(nx * ny)
    } else {
        None
    };

    let min_lag = -(x.len() as i64 - 1);
    let max_lag = y.len() as i64 - 1;
    let xr: Vec<f64> = (min_lag..=max_lag)
        .map(|lag| {
            // x[l] overlaps y[l + lag] for l in [max(0, -lag), min(|x|, |y| - lag)).
            let lo = (-lag).max(0) as usize;
            let hi = (y.len() as i64 - lag).min(x.len() as i64) as usize;
            let sum: f64 = (lo..hi).map(|l| x[l] * y[(l as i64 + lag) as usize]).sum();
            match scale {
                Some(s) => sum / s,
                None => sum,
            }
        })
        .collect();

    let (best_lag, peak_value) = best_peak(&xr, min_lag);
    Ok(LagResult {
        xr,
        best_lag,
        peak_value,
        min_lag,
    })
}

/// Largest value; ties go to the smallest |lag|, then to the negative side.
fn best_peak(xr: &[f64], min_lag: i64) -> (i64, f64) {
    let mut best = (min_lag, f64::NEG_INFINITY);
    for (i, &v) in xr.iter().enumerate() {
        let lag = min_lag + i as i64;
        let better = v > best.1 || (v == best.1 && lag.abs() < best.0.abs());
        if better {
            best = (lag, v);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpreadLag {
    Correlated { best_lag: i64, peak_value: f64 },
    Uncorrelated { best_lag: i64, peak_value: f64 },
}

impl SpreadLag {
    pub fn lag(&self) -> i64 {
        match self {
            SpreadLag::Correlated { best_lag, .. } | SpreadLag::Uncorrelated { best_lag, .. } => *best_lag,
        }
    }

    pub fn peak(&self) -> f64 {
        match self {
            SpreadLag::Correlated { peak_value, .. } | SpreadLag::Uncorrelated { peak_value, .. } => {
                *peak_value
            }
        }
    }

    pub fn is_correlated(&self) -> bool {
        matches!(self, SpreadLag::Correlated { .. })
    }
}

/// Lag maximizing the normalized cross-correlation of each series against the
/// reference. Series are mean-removed first so concentration offsets do not
/// swamp the shape comparison; a series with no variation is uncorrelated.
pub fn spread_lags<'a, I>(reference: &[f64], others: I, min_corr: f64) -> Result<Vec<(String, SpreadLag)>, SignalError>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    if reference.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    let reference = centred(reference);
    let mut out = Vec::new();
    for (id, series) in others {
        let series = centred(series);
        let result = match cross_correlate(&reference, &series, true) {
            Ok(r) => r,
            Err(SignalError::ZeroNorm) => {
                out.push((
                    id.to_string(),
                    SpreadLag::Uncorrelated {
                        best_lag: 0,
                        peak_value: 0.0,
                    },
                ));
                continue;
            }
            Err(e) => return Err(e),
        };
        let lag = if result.peak_value >= min_corr {
            SpreadLag::Correlated {
                best_lag: result.best_lag,
                peak_value: result.peak_value,
            }
        } else {
            SpreadLag::Uncorrelated {
                best_lag: 0,
                peak_value: result.peak_value,
            }
        };
        out.push((id.to_string(), lag));
    }
    Ok(out)
}

fn centred(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    series.iter().map(|v| v - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_reproduces_target() {
        let r = cross_correlate(&[1.0], &[3.0, 5.0, 7.0], false).unwrap();
        assert_eq!(r.xr, vec![3.0, 5.0, 7.0]);
        assert_eq!(r.lags().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(r.best_lag, 2);
    }

    #[test]
    fn identical_signals_peak_at_zero() {
        let r = cross_correlate(&[0.0, 1.0], &[0.0, 1.0], false).unwrap();
        assert_eq!(r.xr, vec![0.0, 1.0, 0.0]);
        assert_eq!(r.best_lag, 0);
        assert_eq!(r.at_lag(-1), Some(0.0));
        assert_eq!(r.at_lag(2), None);
    }

    #[test]
    fn delayed_copy_lags_positive() {
        let r = cross_correlate(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], false).unwrap();
        assert_eq!(r.best_lag, 2);
        assert_eq!(r.xr.len(), 7);
    }

    #[test]
    fn errors() {
        assert_eq!(cross_correlate(&[], &[1.0], false), Err(SignalError::EmptySeries));
        assert_eq!(cross_correlate(&[0.0], &[1.0], true), Err(SignalError::ZeroNorm));
        assert!(matches!(
            cross_correlate(&[1.0, 2.0], &[1.0], false),
            Err(SignalError::LengthOrder { .. })
        ));
    }

    #[test]
    fn ties_prefer_smallest_magnitude() {
        let r = cross_correlate(&[1.0, 1.0], &[1.0, 1.0], false).unwrap();
        assert_eq!(r.xr, vec![1.0, 2.0, 1.0]);
        assert_eq!(r.best_lag, 0);
        let r = cross_correlate(&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0], false).unwrap();
        // xr = [0, 1, 0, 1, 0] at lags -2..2: equal magnitude, negative side wins
        assert_eq!(r.xr, vec![0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(r.best_lag, -1);
        assert_eq!(best_peak(&[5.0, 1.0, 5.0], -1), (-1, 5.0));
    }

    #[test]
    fn self_correlation_is_one_at_zero() {
        let s: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.3).sin() + 0.1 * i as f64).collect();
        let out = spread_lags(&s, [("self", s.as_slice())], DEFAULT_MIN_CORR).unwrap();
        assert_eq!(out[0].1.lag(), 0);
        assert!((out[0].1.peak() - 1.0).abs() < 1e-12);
        let flat = vec![3.0; 50];
        let out = spread_lags(&s, [("flat", flat.as_slice())], DEFAULT_MIN_CORR).unwrap();
        assert!(!out[0].1.is_correlated());
        assert_eq!(out[0].1.lag(), 0);
    }
}
