//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dalton_core::model::{PollutantKind, Reading};
use dalton_core::simulator::{run_scenario, ScenarioSpec};
use dalton_core::window_stats::Window;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"))
}

/// Simulated readings of a shipped scenario, grouped by device.
pub fn household(name: &str, seconds: u64) -> BTreeMap<String, Vec<Reading>> {
    let spec = ScenarioSpec::load(&scenario_path(name)).expect("scenario");
    let mut out: BTreeMap<String, Vec<Reading>> = BTreeMap::new();
    for r in run_scenario(spec, seconds, None).expect("simulation") {
        out.entry(r.device_id.clone()).or_default().push(r);
    }
    out
}

/// A full 1 Hz CO2 window of `len` samples following a random walk.
pub fn random_window(seed: u64, len: usize) -> Window {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = 600.0f64;
    let samples = (0..len)
        .map(|i| {
            level = (level + rng.random_range(-25.0..25.0)).max(350.0);
            (i as i64 * 1000, level)
        })
        .collect();
    Window::new(PollutantKind::Co2, 0, len as i64 * 1000, 1000, samples).expect("window")
}

pub fn random_series(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
