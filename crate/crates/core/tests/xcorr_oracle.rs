use dalton_core::signal::cross_correlate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len() as i64;
    let mut out = Vec::new();
    for m in -(n - 1)..y.len() as i64 {
        let mut acc = 0.0;
        for l in 0..n {
            let j = l + m;
            if j >= 0 && (j as usize) < y.len() {
                acc += x[l as usize] * y[j as usize];
            }
        }
        out.push(acc);
    }
    out
}

#[test]
fn five_hundred_random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let nx = rng.random_range(1..40);
        let ny = nx + rng.random_range(0..40);
        let x: Vec<f64> = (0..nx).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..ny).map(|_| rng.random_range(-10.0..10.0)).collect();
        let r = cross_correlate(&x, &y, false).unwrap();
        assert_eq!(r.xr, brute(&x, &y));
        assert_eq!(r.min_lag, -(nx as i64 - 1));
        let best = r.xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.peak_value, best);
    }
}

#[test]
fn shifted_copy_recovers_lag() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 1..=32usize {
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; x.len() + k + 8];
        y[k..k + x.len()].copy_from_slice(&x);
        for normalized in [false, true] {
            let r = cross_correlate(&x, &y, normalized).unwrap();
            assert_eq!(r.best_lag, k as i64, "k={k}");
        }
    }
}
