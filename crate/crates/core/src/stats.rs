//! Route-agnostic statistics of atom samples.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::prufer::{nearest_to_zero, SecondOrderSample};

/// Sorted atom arrays from one route, one per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomBatch {
    pub source: String,
    pub samples: Vec<Vec<f64>>,
    /// Half-width of the window every sample was collected on, if known.
    pub window: Option<f64>,
}

impl AtomBatch {
    pub fn new(source: impl Into<String>, samples: Vec<Vec<f64>>, window: Option<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| s.windows(2).any(|w| w[1] < w[0])) {
            return Err(param(format!("sample {i} is not sorted")));
        }
        Ok(Self {
            source: source.into(),
            samples,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub gaps: Vec<f64>,
    pub skipped: usize,
    pub skip_rate: f64,
}

/// `count` consecutive gaps centered on the atom nearest 0, pooled over
/// seeds. For even `count` the central atom has `count / 2` gaps on each side.
pub fn gaps_near_zero(batch: &AtomBatch, count: usize) -> Result<GapSample> {
    if count == 0 {
        return Err(param("gap count must be positive"));
    }
    let mut gaps = Vec::with_capacity(batch.len() * count);
    let mut skipped = 0;
    for atoms in &batch.samples {
        let Some(m) = nearest_to_zero(atoms) else {
            skipped += 1;
            continue;
        };
        let start = m as isize - (count / 2) as isize;
        if start < 0 || start as usize + count >= atoms.len() {
            skipped += 1;
            continue;
        }
        let start = start as usize;
        gaps.extend((start..start + count).map(|i| atoms[i + 1] - atoms[i]));
    }
    let skip_rate = if batch.is_empty() { 0.0 } else { skipped as f64 / batch.len() as f64 };
    Ok(GapSample { gaps, skipped, skip_rate })
}

/// Per-seed number of atoms in the closed interval between 0 and `lambda`.
pub fn counting(batch: &AtomBatch, lambda: f64) -> Result<Vec<u64>> {
    if let Some(w) = batch.window {
        if lambda.abs() > w {
            return Err(Error::Range(format!(
                "λ = {lambda} lies outside the sampled window; need W ≥ {}",
                lambda.abs()
            )));
        }
    }
    let (lo, hi) = if lambda >= 0.0 { (0.0, lambda) } else { (lambda, 0.0) };
    Ok(batch
        .samples
        .iter()
        .map(|s| s.iter().filter(|&&x| lo <= x && x <= hi).count() as u64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub lag: i64,
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Set when the jackknife error vanishes.
    pub degenerate: bool,
}

impl CovarianceReport {
    /// Whether `target` lies within `k` standard errors.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.std_error
    }
}

pub const MIN_TRIALS: usize = 30;

/// Unbiased `Cov(X(0), X(lag))` across trials with jackknife errors.
pub fn covariance_lags(samples: &[SecondOrderSample], lags: &[i64]) -> Result<Vec<CovarianceReport>> {
    if samples.len() < MIN_TRIALS {
        return Err(Error::Insufficient(format!(
            "covariance needs at least {MIN_TRIALS} trials, got {}",
            samples.len()
        )));
    }
    lags.iter()
        .map(|&lag| {
            let mut x = Vec::with_capacity(samples.len());
            let mut y = Vec::with_capacity(samples.len());
            for s in samples {
                match (s.get(0), s.get(lag)) {
                    (Some(a), Some(b)) => {
                        x.push(a);
                        y.push(b);
                    }
                    _ => {
                        return Err(Error::Range(format!(
                            "sample of order {} has no lag {lag}",
                            s.order
                        )))
                    }
                }
            }
            let (estimate, std_error) = jackknife_covariance(&x, &y);
            Ok(CovarianceReport {
                lag,
                estimate,
                std_error,
                trials: x.len(),
                degenerate: std_error == 0.0,
            })
        })
        .collect()
}

/// Unbiased sample covariance and its jackknife standard error.
pub fn jackknife_covariance(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    assert!(n == y.len() && n >= 3);
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let estimate = sxy / (nf - 1.0);
    // leave-one-out: with centered data Σ dx = Σ dy = 0
    let loo: Vec<f64> = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| (sxy - a * b - a * b / (nf - 1.0)) / (nf - 2.0))
        .collect();
    let mean_loo = loo.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * loo.iter().map(|v| (v - mean_loo).powi(2)).sum::<f64>();
    (estimate, var.sqrt())
}

/// Jackknife standard error of a sample mean.
pub fn mean_with_error(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample standard deviation with the `n − 1` normalization.
pub fn sample_sd(x: &[f64]) -> f64 {
    let (_, se) = mean_with_error(x);
    se * (x.len() as f64).sqrt()
}

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(param("sample contains NaN"));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a − F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Insufficient("KS distance needs two non-empty samples".into()));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // step past every copy of the smallest remaining value in both samples
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Integer samples through [`ks_distance`].
pub fn ks_distance_counts(a: &[u64], b: &[u64]) -> Result<f64> {
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    ks_distance(&fa, &fb)
}

/// KS distance between `{φ mod 2π}` and the uniform law on `[0, 2π)`.
pub fn phase_uniformity(phases: &[f64]) -> Result<f64> {
    if phases.is_empty() {
        return Err(Error::Insufficient("phase sample is empty".into()));
    }
    let u: Vec<f64> = phases.iter().map(|p| p.rem_euclid(TAU) / TAU).collect();
    let u = sorted(&u)?;
    let n = u.len() as f64;
    Ok(u.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max))
}

/// Empirical CDF evaluated at the sorted sample points.
pub fn ecdf(x: &[f64]) -> Vec<(f64, f64)> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n)).collect()
}

/// One line of a statistics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub statistic: String,
    pub source_a: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_b: Option<String>,
    pub value: f64,
    pub std_error: Option<f64>,
    pub trials: usize,
    pub params: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn batch(samples: Vec<Vec<f64>>) -> AtomBatch {
        AtomBatch::new("test", samples, None).unwrap()
    }

    #[test]
    fn clock_gaps() {
        let clock: Vec<f64> = (-5..=5).map(|n| n as f64 * PI - 0.3).collect();
        let g = gaps_near_zero(&batch(vec![clock]), 4).unwrap();
        assert_eq!(g.gaps.len(), 4);
        assert!(g.gaps.iter().all(|x| (x - PI).abs() < 1e-12));
    }

    #[test]
    fn gap_arithmetic_and_skips() {
        let g = gaps_near_zero(&batch(vec![vec![-1.0, 0.5, 2.0], vec![0.1], vec![]]), 2).unwrap();
        assert_eq!(g.gaps, vec![1.5, 1.5]);
        assert_eq!(g.skipped, 2);
        assert!((g.skip_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!(AtomBatch::new("x", vec![vec![1.0, 0.0]], None).is_err());
    }

    #[test]
    fn counting_convention() {
        let clock: Vec<f64> = (-3..=3).map(|n| n as f64 * PI).collect();
        let b = batch(vec![clock, vec![]]);
        assert_eq!(counting(&b, 3.5).unwrap(), vec![2, 0]);
        assert_eq!(counting(&b, 2.0 * PI).unwrap(), vec![3, 0]);
        let windowed = AtomBatch::new("w", vec![vec![0.0]], Some(5.0)).unwrap();
        let err = counting(&windowed, 6.0).unwrap_err().to_string();
        assert!(err.contains("W ≥ 6"));
    }

    #[test]
    fn ks_basics() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(ks_distance(&[], &[1.0]).is_err());
        // ties across samples must not register a spurious jump
        assert_eq!(ks_distance(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 1.0 / 3.0);
        assert_eq!(ks_distance_counts(&[4, 4, 5], &[4, 5, 5]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn ks_uniform_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut exceed = 0;
        for _ in 0..100 {
            let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            if ks_distance(&a, &b).unwrap() > 0.03 {
                exceed += 1;
            }
        }
        assert!(exceed <= 1);
    }

    #[test]
    fn uniformity_examples() {
        let m = 500;
        let grid: Vec<f64> = (0..m).map(|k| TAU * k as f64 / m as f64).collect();
        assert!(phase_uniformity(&grid).unwrap() <= 1.0 / m as f64 + 1e-12);
        assert!(phase_uniformity(&[1.0; 100]).unwrap() > 0.8);
        assert!(phase_uniformity(&[]).is_err());
        assert_eq!(phase_uniformity(&[-1.0]).unwrap(), phase_uniformity(&[TAU - 1.0]).unwrap());
    }

    /// X(n) = σ (W_{n+1} − W_n) has covariance σ²(2, −1, 0, …) at lags 0, 1, 2.
    fn synthetic(trials: usize, order: usize, sigma2: f64, rng: &mut ChaCha8Rng) -> Vec<SecondOrderSample> {
        let s = sigma2.sqrt();
        (0..trials)
            .map(|_| {
                let w: Vec<f64> = (0..2 * order + 2).map(|_| rng.sample(StandardNormal)).collect();
                SecondOrderSample {
                    length: 1.0,
                    alpha: 0.75,
                    order,
                    values: (0..=2 * order).map(|i| s * (w[i + 1] - w[i])).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn covariance_recovers_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = synthetic(4000, 3, 1.0 / 34.0, &mut rng);
        let r = covariance_lags(&data, &[0, 1, 3, -1]).unwrap();
        for (rep, target) in r.iter().zip([2.0 / 34.0, -1.0 / 34.0, 0.0, -1.0 / 34.0]) {
            assert!(rep.covers(target, 3.0), "{rep:?}");
            assert!(rep.std_error > 0.0 && !rep.degenerate);
        }
        assert!(covariance_lags(&data[..29], &[0]).is_err());
    }

    #[test]
    fn covariance_degenerate() {
        let zero = SecondOrderSample { length: 1.0, alpha: 1.0, order: 1, values: vec![0.0; 3] };
        let r = covariance_lags(&vec![zero; 40], &[0, 1]).unwrap();
        assert!(r.iter().all(|x| x.estimate == 0.0 && x.std_error == 0.0 && x.degenerate));
    }

    #[test]
    fn covariance_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 200;
        let mut covered = [0usize; 2];
        for _ in 0..reps {
            let data = synthetic(500, 1, 1.0 / 34.0, &mut rng);
            let r = covariance_lags(&data, &[0, 1]).unwrap();
            covered[0] += r[0].covers(2.0 / 34.0, 3.0) as usize;
            covered[1] += r[1].covers(-1.0 / 34.0, 3.0) as usize;
        }
        for c in covered {
            assert!(c as f64 >= 0.99 * reps as f64, "{c}/{reps}");
        }
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let x = [0.3, -1.2, 2.5, 0.7, 1.1, -0.4];
        let y = [1.0, 0.2, -0.3, 0.9, 2.2, -1.5];
        let cov = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
        };
        let loo: Vec<f64> = (0..x.len())
            .map(|i| {
                let xs: Vec<f64> = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                let ys: Vec<f64> = y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                cov(&xs, &ys)
            })
            .collect();
        let n = x.len() as f64;
        let m = loo.iter().sum::<f64>() / n;
        let se = ((n - 1.0) / n * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
        let (est, jse) = jackknife_covariance(&x, &y);
        assert!((est - cov(&x, &y)).abs() < 1e-14);
        assert!((jse - se).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 1..60),
            b in proptest::collection::vec(-5.0f64..5.0, 1..60),
        ) {
            let d1 = ks_distance(&a, &b).unwrap();
            let d2 = ks_distance(&b, &a).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
        }

        #[test]
        fn gaps_are_reproducible(mut v in proptest::collection::vec(-20.0f64..20.0, 3..40)) {
            v.sort_by(f64::total_cmp);
            let b = AtomBatch::new("p", vec![v], None).unwrap();
            let g1 = gaps_near_zero(&b, 2).unwrap();
            let g2 = gaps_near_zero(&b, 2).unwrap();
            prop_assert_eq!(g1, g2);
            prop_assert!(counting(&b, 7.0).unwrap() == counting(&b, 7.0).unwrap());
        }
    }
}
