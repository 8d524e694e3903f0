//! Gaussian β-ensemble through its tridiagonal model.
//!
//! With diagonal entries `N(0, 2/β)` and off-diagonal entries
//! `χ_{kβ}/√β`, `k = n−1, …, 1`, the eigenvalue density is proportional to
//! `exp(−(β/4) Σ λ²) Π |λ_i − λ_j|^β`.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TridiagonalMatrix {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl TridiagonalMatrix {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.len() < 2 {
            return Err(param(format!("matrix order must be at least 2, got {}", diag.len())));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(param("off-diagonal must have n − 1 entries"));
        }
        if offdiag.iter().any(|&b| !(b > 0.0)) {
            return Err(param("off-diagonal entries must be positive"));
        }
        Ok(Self { diag, offdiag })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Leading principal `m × m` block.
    pub fn leading(&self, m: usize) -> Self {
        Self {
            diag: self.diag[..m].to_vec(),
            offdiag: self.offdiag[..m.saturating_sub(1)].to_vec(),
        }
    }

    /// Number of eigenvalues strictly below `shift`.
    pub fn sturm_count(&self, shift: f64) -> usize {
        sturm_count(&self.diag, &self.offdiag, shift)
    }

    /// Interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.offdiag[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }
}

pub fn sample_gbeta_tridiagonal(n: usize, beta: f64, seed: u64) -> Result<TridiagonalMatrix> {
    if n < 2 {
        return Err(param(format!("n must be at least 2, got {n}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(param(format!("beta must be positive, got {beta}")));
    }
    let mut rng = stream_rng(seed, stream::GBETA);
    let sd = (2.0 / beta).sqrt();
    let diag: Vec<f64> = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let scale = 1.0 / beta.sqrt();
    let mut offdiag = Vec::with_capacity(n - 1);
    for k in (1..n).rev() {
        let chi2 = ChiSquared::new(k as f64 * beta).map_err(|e| param(e.to_string()))?;
        // a zero draw has probability zero; keep the matrix unreduced regardless
        offdiag.push((scale * chi2.sample(&mut rng).sqrt()).max(f64::MIN_POSITIVE));
    }
    TridiagonalMatrix::new(diag, offdiag)
}

/// Count of negative pivots of `T − σ = L D Lᵀ`.
pub fn sturm_count(diag: &[f64], offdiag: &[f64], shift: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..diag.len() {
        let coupling = if i == 0 { 0.0 } else { offdiag[i - 1] * offdiag[i - 1] / d };
        d = diag[i] - shift - coupling;
        if d == 0.0 {
            d = -f64::EPSILON * (shift.abs() + 1.0);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// All eigenvalues, ascending, each bisected to bracket width `tol`.
pub fn tridiagonal_eigenvalues(t: &TridiagonalMatrix, tol: f64) -> Result<Vec<f64>> {
    eigenvalues_in(t, f64::NEG_INFINITY, f64::INFINITY, tol)
}

/// Eigenvalues in `[lo, hi)`, ascending.
pub fn eigenvalues_in(t: &TridiagonalMatrix, lo: f64, hi: f64, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(param(format!("tolerance must be positive, got {tol}")));
    }
    if !(hi > lo) {
        return Err(param("empty search interval"));
    }
    let (g_lo, g_hi) = t.gershgorin();
    // Gershgorin bounds can be attained, so pad them
    let pad = tol + 1e-12 * g_lo.abs().max(g_hi.abs()).max(1.0);
    let lo = lo.max(g_lo - pad);
    let hi = hi.min(g_hi + pad);
    if hi <= lo {
        return Ok(Vec::new());
    }
    let first = t.sturm_count(lo);
    let last = t.sturm_count(hi);
    let mut out = Vec::with_capacity(last - first);
    // bracket of the k-th eigenvalue: count(a) ≤ k < count(b)
    let mut a_prev = lo;
    for k in first..last {
        let mut a = a_prev;
        let mut b = hi;
        while b - a > tol {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if t.sturm_count(m) > k {
                b = m;
            } else {
                a = m;
            }
        }
        out.push(0.5 * (a + b));
        a_prev = a;
    }
    Ok(out)
}

/// Default bisection tolerance `1e−11 √n`.
pub fn default_tol(n: usize) -> f64 {
    1e-11 * (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkSample {
    pub n: usize,
    pub mu: f64,
    pub atoms: Vec<f64>,
    pub halved: Vec<f64>,
}

/// `Λ_k = √(4n − μ²)(λ_k − μ)` and the halved atoms `Λ_k / 2`.
pub fn bulk_rescale(eigs: &[f64], n: usize, mu: f64) -> Result<BulkSample> {
    let edge = 2.0 * (n as f64).sqrt();
    if !(mu.abs() < edge) {
        return Err(param(format!("|mu| = {} must be below 2√n = {edge}", mu.abs())));
    }
    let s = (4.0 * n as f64 - mu * mu).sqrt();
    let mut atoms: Vec<f64> = eigs.iter().map(|&l| s * (l - mu)).collect();
    atoms.sort_by(f64::total_cmp);
    let halved = atoms.iter().map(|a| a / 2.0).collect();
    Ok(BulkSample { n, mu, atoms, halved })
}

/// `n^{1/6}(2√n − |μ|)`; the bulk scaling needs this large.
pub fn bulk_margin(n: usize, mu: f64) -> f64 {
    let nf = n as f64;
    nf.powf(1.0 / 6.0) * (2.0 * nf.sqrt() - mu.abs())
}

/// Halved bulk atoms within `[−window, window]` for one sample; only the
/// eigenvalues that map into the window are computed.
pub fn sample_bulk_window(n: usize, beta: f64, mu: f64, seed: u64, window: f64) -> Result<BulkSample> {
    let t = sample_gbeta_tridiagonal(n, beta, seed)?;
    let s = (4.0 * n as f64 - mu * mu).sqrt();
    if !(s > 0.0) {
        return Err(param(format!("|mu| = {} must be below 2√n", mu.abs())));
    }
    let reach = 2.0 * window / s;
    let eigs = eigenvalues_in(&t, mu - reach, mu + reach, default_tol(n))?;
    let mut sample = bulk_rescale(&eigs, n, mu)?;
    let keep = |v: &Vec<f64>, scale: f64| -> Vec<f64> { v.iter().copied().filter(|x| (x / scale).abs() <= window).collect() };
    sample.atoms = keep(&sample.atoms, 2.0);
    sample.halved = keep(&sample.halved, 1.0);
    Ok(sample)
}

/// Rejection sampler of the `n = 2` joint density
/// `exp(−(β/4)(λ₁² + λ₂²)) |λ₁ − λ₂|^β`, returned as `(min, max)`.
pub fn rejection_pair(beta: f64, rng: &mut impl Rng) -> (f64, f64) {
    // proposal: independent N(0, 4/β); the ratio target/proposal is
    // exp(−β r²/8) |Δ|^β ≤ (√2 r)^β exp(−β r²/8), maximal at r = 2
    let sd = (4.0 / beta).sqrt();
    let bound = (2.0 * 2.0f64.sqrt()).powf(beta) * (-beta / 2.0).exp();
    loop {
        let x: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let y: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let ratio = (-beta * (x * x + y * y) / 8.0).exp() * (x - y).abs().powf(beta);
        if rng.random::<f64>() * bound < ratio {
            return (x.min(y), x.max(y));
        }
    }
}
