use dalton_core::model::PollutantKind;
use dalton_core::window_stats::{compute_stats_with_coverage, Thresholds, Window, WindowStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each statistic recomputed by its definition, one loop per statistic.
fn brute(samples: &[(i64, f64)], interval_ms: i64, tau_ms: i64, t: &Thresholds) -> WindowStats {
    let vals: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let n = vals.len() as f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in &vals {
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for &v in &vals {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for &v in &vals {
        ss += (v - mean) * (v - mean);
    }
    let (mut up, mut down) = (0.0f64, 0.0f64);
    for i in 1..samples.len() {
        let dt = (samples[i].0 - samples[i - 1].0) as f64 / 1000.0;
        let slope = (samples[i].1 - samples[i - 1].1) / dt;
        if slope > up {
            up = slope;
        }
        if -slope > down {
            down = -slope;
        }
    }
    let mut peak_c = 0;
    let mut above = 0;
    let mut band = 0;
    for i in 0..vals.len() {
        if vals[i] > t.unsafe_level {
            above += 1;
            if i == 0 || vals[i - 1] <= t.unsafe_level {
                peak_c += 1;
            }
        } else if vals[i] > t.safe {
            band += 1;
        }
    }
    let step = interval_ms as f64 / 1000.0;
    let tau = tau_ms as f64 / 1000.0;
    WindowStats {
        min,
        max,
        std: (ss / n).sqrt(),
        roc_raise: up,
        roc_fall: down,
        peak_c,
        peak_delta: (above as f64 * step).min(tau),
        long_stay: (band as f64 * step).min(tau),
    }
}

fn random_window(rng: &mut ChaCha8Rng) -> (Window, Thresholds) {
    let safe = rng.random_range(100.0..500.0);
    let unsafe_level = safe + rng.random_range(50.0..600.0);
    let t = Thresholds::new(PollutantKind::Co2, safe, unsafe_level).unwrap();
    let interval = [1000i64, 2000, 5000][rng.random_range(0..3)];
    let len = rng.random_range(2..700usize);
    let tau = interval * len as i64;
    let drop_p = rng.random_range(0.0..0.15);
    let mut level = rng.random_range(0.0..unsafe_level * 1.5);
    let mut samples = Vec::new();
    for k in 0..len {
        level = (level + rng.random_range(-40.0..40.0)).max(0.0);
        if rng.random_bool(0.02) {
            level = rng.random_range(0.0..unsafe_level * 1.5);
        }
        if k < 2 || !rng.random_bool(drop_p) {
            samples.push((10_000 + k as i64 * interval, level));
        }
    }
    let w = Window::new(PollutantKind::Co2, 10_000, tau, interval, samples).unwrap();
    (w, t)
}

#[test]
fn thousand_random_windows_match_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let (w, t) = random_window(&mut rng);
        let got = compute_stats_with_coverage(&w, &t, 0.0).unwrap();
        let want = brute(&w.samples, w.sample_interval_ms, w.duration_ms, &t);
        assert_eq!(got, want, "window {i}");
    }
}

#[test]
fn time_partition_covers_the_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let (w, t) = random_window(&mut rng);
        let s = compute_stats_with_coverage(&w, &t, 0.0).unwrap();
        let step = w.sample_interval_ms as f64 / 1000.0;
        let below = w.samples.iter().filter(|p| p.1 <= t.safe).count() as f64 * step;
        let covered = w.coverage() * w.duration_ms as f64 / 1000.0;
        assert!((below + s.long_stay + s.peak_delta - covered).abs() <= step);
        assert!(s.long_stay <= w.duration_ms as f64 / 1000.0);
        assert_eq!(s.peak_c == 0, s.peak_delta == 0.0);
    }
}
