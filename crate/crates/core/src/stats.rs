//! Monte Carlo bookkeeping: seeded trial loops and Wilson score intervals.

use crate::seeds;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// z-score for a two-sided 99% interval.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Trials per independent stream; each chunk gets `seeds::stream(root, chunk)`.
pub const CHUNK: u64 = 4096;

pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub wilson99: (f64, f64),
    pub seed: u64,
}

impl Estimate {
    pub fn new(successes: u64, trials: u64, seed: u64) -> Self {
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        Estimate { successes, trials, rate, wilson99: wilson(successes, trials, Z99), seed }
    }
    pub fn lower(&self) -> f64 {
        self.wilson99.0
    }
    pub fn upper(&self) -> f64 {
        self.wilson99.1
    }
}

/// Runs `trials` seeded Bernoulli trials. The outcome depends only on
/// `(seed, trials)`, never on how the loop is scheduled.
pub fn run_trials(seed: u64, trials: u64, mut f: impl FnMut(&mut ChaCha8Rng) -> bool) -> Estimate {
    let mut ok = 0;
    let mut done = 0;
    let mut chunk = 0;
    while done < trials {
        let mut rng = seeds::stream(seed, chunk);
        let m = CHUNK.min(trials - done);
        for _ in 0..m {
            if f(&mut rng) {
                ok += 1;
            }
        }
        done += m;
        chunk += 1;
    }
    Estimate::new(ok, trials, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn wilson_reference_values() {
        // closed form check at p = 1/2, n = 100, z = 1.96
        let (lo, hi) = wilson(50, 100, 1.96);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_169).abs() < 1e-5, "{lo} {hi}");
        let (lo, hi) = wilson(0, 10, Z99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.3 && hi < 0.5);
    }

    #[test]
    fn trials_reproducible() {
        let a = run_trials(3, 10_000, |r| r.gen_bool(0.3));
        let b = run_trials(3, 10_000, |r| r.gen_bool(0.3));
        assert_eq!(a, b);
        assert!(a.lower() < 0.3 && 0.3 < a.upper());
    }
}
