//! Piecewise-linear air-quality index on a 0–500 scale, the maximum of
//! per-pollutant sub-indices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::PollutantKind;

pub const IAQI_MAX: f64 = 500.0;

/// Knots `(concentration, index)`, both strictly increasing. Values below the
/// first knot take its index; values above the last take the last index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Breakpoints(pub Vec<(f64, f64)>);

impl Breakpoints {
    pub fn validate(&self) -> Result<(), String> {
        if self.0.len() < 2 {
            return Err("need at least two knots".into());
        }
        for pair in self.0.windows(2) {
            if !(pair[1].0 > pair[0].0 && pair[1].1 > pair[0].1) {
                return Err("knots must strictly increase".into());
            }
        }
        if self.0.iter().any(|&(c, i)| !c.is_finite() || !(0.0..=IAQI_MAX).contains(&i)) {
            return Err("index values must lie in [0, 500]".into());
        }
        Ok(())
    }

    pub fn sub_index(&self, value: f64) -> f64 {
        let knots = &self.0;
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if value <= first.0 {
            return first.1;
        }
        if value >= last.0 {
            return last.1;
        }
        let k = knots.partition_point(|&(c, _)| c <= value);
        let (c0, i0) = knots[k - 1];
        let (c1, i1) = knots[k];
        i0 + (value - c0) * (i1 - i0) / (c1 - c0)
    }
}

pub fn default_breakpoints() -> BTreeMap<PollutantKind, Breakpoints> {
    let mut m = BTreeMap::new();
    m.insert(
        PollutantKind::Co2,
        Breakpoints(vec![
            (415.0, 0.0),
            (700.0, 50.0),
            (1000.0, 100.0),
            (1500.0, 150.0),
            (2000.0, 200.0),
            (5000.0, 300.0),
            (10000.0, 500.0),
        ]),
    );
    m.insert(
        PollutantKind::Voc,
        Breakpoints(vec![
            (220.0, 0.0),
            (350.0, 50.0),
            (500.0, 100.0),
            (1000.0, 150.0),
            (3000.0, 200.0),
            (10000.0, 300.0),
            (50000.0, 500.0),
        ]),
    );
    m.insert(
        PollutantKind::Pm2_5,
        Breakpoints(vec![
            (0.0, 0.0),
            (12.0, 50.0),
            (35.4, 100.0),
            (55.4, 150.0),
            (150.4, 200.0),
            (250.4, 300.0),
            (500.4, 500.0),
        ]),
    );
    m.insert(
        PollutantKind::Pm10,
        Breakpoints(vec![
            (0.0, 0.0),
            (54.0, 50.0),
            (154.0, 100.0),
            (254.0, 150.0),
            (354.0, 200.0),
            (424.0, 300.0),
            (604.0, 500.0),
        ]),
    );
    m
}

/// Maximum sub-index over the pollutants that have both a value and a table.
/// `None` when no pollutant qualifies.
pub fn iaqi_of<I>(means: I, table: &BTreeMap<PollutantKind, Breakpoints>) -> Option<f64>
where
    I: IntoIterator<Item = (PollutantKind, f64)>,
{
    means
        .into_iter()
        .filter_map(|(kind, v)| table.get(&kind).map(|bp| bp.sub_index(v)))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_clamping() {
        let bp = &default_breakpoints()[&PollutantKind::Pm2_5];
        assert_eq!(bp.sub_index(-1.0), 0.0);
        assert_eq!(bp.sub_index(0.0), 0.0);
        assert_eq!(bp.sub_index(6.0), 25.0);
        assert_eq!(bp.sub_index(12.0), 50.0);
        assert_eq!(bp.sub_index(1e6), 500.0);
    }

    #[test]
    fn max_over_pollutants() {
        let t = default_breakpoints();
        let v = iaqi_of([(PollutantKind::Co2, 1000.0), (PollutantKind::Pm2_5, 6.0)], &t);
        assert_eq!(v, Some(100.0));
        assert_eq!(iaqi_of([(PollutantKind::Co2, 415.0), (PollutantKind::Voc, 220.0)], &t), Some(0.0));
        assert_eq!(iaqi_of([(PollutantKind::Temperature, 25.0)], &t), None);
    }

    #[test]
    fn defaults_validate() {
        for bp in default_breakpoints().values() {
            bp.validate().unwrap();
        }
        assert!(Breakpoints(vec![(1.0, 0.0), (1.0, 5.0)]).validate().is_err());
    }
}
