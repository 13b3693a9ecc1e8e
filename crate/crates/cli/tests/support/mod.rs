//! Oracles shared by the acceptance harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Central differences `(f(x+h·e_i) − f(x−h·e_i)) / 2h` for every coordinate.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both norms
/// are below `floor`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-8;
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < FLOOR {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Noise flags with at least two rows in each split.
pub fn mixed_flags(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    loop {
        let flags: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let noise = flags.iter().filter(|&&f| f).count();
        if noise >= 2 && n - noise >= 2 {
            return flags;
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
