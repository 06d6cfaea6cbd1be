//! Monte Carlo plumbing: seeded batch streams, estimates, control variates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Paths per seeded batch.
pub const BATCH: usize = 1024;

/// Relative floor on reported standard errors, covering floating-point
/// resolution of the accumulated means.
pub const SE_FLOOR_REL: f64 = 1e-12;

/// Random stream for batch `batch` of estimator `domain` under root `seed`.
///
/// Streams depend only on the triple, never on thread scheduling.
pub fn batch_rng(seed: u64, domain: u64, batch: u64) -> ChaCha8Rng {
    let mixed = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(batch);
    rng
}

/// Runs `paths` simulations split into fixed-size batches starting at batch
/// index `first_batch`, in parallel, returning batch outputs in order.
pub fn run_batches<T, F>(seed: u64, domain: u64, first_batch: u64, paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let n_batches = paths.div_ceil(BATCH);
    (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let size = BATCH.min(paths - b * BATCH);
            let mut rng = batch_rng(seed, domain, first_batch + b as u64);
            f(&mut rng, size)
        })
        .collect()
}

/// A Monte Carlo (or exact) estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    /// False when the standard error is not meaningful (fewer than two paths).
    pub reliable: bool,
    /// Upper bound on the mass lost to abandoned or capped paths.
    pub truncation_bound: f64,
}

impl Estimate {
    pub fn exact(v: f64) -> Self {
        Self { mean: v, se: 0.0, n: 0, reliable: true, truncation_bound: 0.0 }
    }

    /// Sample mean and standard error of `y`, using `z` (known mean `z_mean`)
    /// as a control variate when it has variance.
    pub fn with_control(y: &[f64], z: Option<(&[f64], f64)>) -> Self {
        let n = y.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::INFINITY, n, reliable: false, truncation_bound: 0.0 };
        }
        let nf = n as f64;
        let my = y.iter().sum::<f64>() / nf;
        if n == 1 {
            return Self { mean: my, se: f64::INFINITY, n, reliable: false, truncation_bound: 0.0 };
        }
        let vy = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / (nf - 1.0);
        let (mean, var) = match z {
            Some((z, mu)) => {
                let mz = z.iter().sum::<f64>() / nf;
                let vz = z.iter().map(|v| (v - mz) * (v - mz)).sum::<f64>() / (nf - 1.0);
                let cyz = y.iter().zip(z).map(|(a, b)| (a - my) * (b - mz)).sum::<f64>() / (nf - 1.0);
                if vz > 0.0 && vz.is_finite() && cyz.is_finite() {
                    let b = cyz / vz;
                    let resid = (vy - b * cyz).max(0.0);
                    (my - b * (mz - mu), resid)
                } else {
                    (my, vy)
                }
            }
            None => (my, vy),
        };
        let se = (var / nf).sqrt().max(SE_FLOOR_REL * mean.abs());
        Self { mean, se, n, reliable: true, truncation_bound: 0.0 }
    }
}

/// Normal quantile for a two-sided confidence level.
pub fn z_for_confidence(confidence: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(0.5 + 0.5 * confidence.clamp(0.5, 1.0 - 1e-15))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn batches_are_schedule_independent() {
        let draw = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random::<f64>()).sum::<f64>();
        let a = run_batches(9, 1, 0, 5000, draw);
        let b: Vec<f64> = (0..5).map(|i| draw(&mut batch_rng(9, 1, i), BATCH.min(5000 - i as usize * BATCH))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn control_variate_removes_linear_noise() {
        let z: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let mu = z.iter().sum::<f64>() / 1000.0 + 0.01;
        let y: Vec<f64> = z.iter().map(|v| 2.0 + 3.0 * v).collect();
        let e = Estimate::with_control(&y, Some((&z, mu)));
        assert!((e.mean - (2.0 + 3.0 * mu)).abs() < 1e-12);
        assert!(e.se < 1e-10);
    }

    #[test]
    fn single_path_is_unreliable() {
        let e = Estimate::with_control(&[0.4], None);
        assert_eq!(e.mean, 0.4);
        assert!(!e.reliable);
    }

    #[test]
    fn z_values() {
        assert!((z_for_confidence(0.95) - 1.959963984540054).abs() < 1e-9);
    }
}
