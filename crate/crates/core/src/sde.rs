//! The limiting phase SDEs and the point processes they encode.
//!
//! Complex noise is `dZ = dZ_re + i dZ_im` with independent standard real
//! components, so `⟨Z, Z̄⟩_t = 2t`. Then
//! `Re(e^{iψ} dZ) = cos ψ dZ_re − sin ψ dZ_im`.
//!
//! All parameters of one joint simulation (`c` or `λ` values) share one
//! [`NoiseBundle`] and are advanced in lockstep.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, range, Error, Result};
use crate::potential::ModelConstants;
use crate::rng::{stream, stream_rng};

/// Gaussian increments driving one joint simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    /// Variance of each increment.
    pub step: f64,
    pub z_re: Vec<f64>,
    pub z_im: Vec<f64>,
    pub b: Vec<f64>,
}

impl NoiseBundle {
    pub fn sample(seed: u64, steps: usize, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(param(format!("noise step must be positive, got {step}")));
        }
        let mut rng = stream_rng(seed, stream::SDE_NOISE);
        let sd = step.sqrt();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..steps).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let z_re = draw(&mut rng);
        let z_im = draw(&mut rng);
        let b = draw(&mut rng);
        Ok(Self { step, z_re, z_im, b })
    }

    /// All increments zero: the deterministic skeleton of each SDE.
    pub fn silent(steps: usize, step: f64) -> Self {
        Self {
            step,
            z_re: vec![0.0; steps],
            z_im: vec![0.0; steps],
            b: vec![0.0; steps],
        }
    }

    pub fn len(&self) -> usize {
        self.z_re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_re.is_empty()
    }

    fn require(&self, steps: usize) -> Result<()> {
        if self.z_re.len() < steps || self.z_im.len() < steps || self.b.len() < steps {
            return Err(range(format!(
                "noise bundle has {} increments, {steps} required",
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeKind {
    Schtau,
    Carousel,
    SineBeta,
}

impl SdeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SdeKind::Schtau => "schtau",
            SdeKind::Carousel => "carousel",
            SdeKind::SineBeta => "sinebeta",
        }
    }
}

/// One phase trajectory of a joint simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdePath {
    pub kind: SdeKind,
    pub parameter: f64,
    pub mesh: Vec<f64>,
    pub psi: Vec<f64>,
}

impl SdePath {
    pub fn end(&self) -> f64 {
        *self.psi.last().expect("non-empty path")
    }

    pub fn t_end(&self) -> f64 {
        *self.mesh.last().expect("non-empty path")
    }
}

/// Runs `advance(j, dt, psi)` on a shared mesh and records every parameter.
fn record_paths(
    kind: SdeKind,
    params: &[f64],
    mesh: &[f64],
    mut advance: impl FnMut(usize, &mut [f64]),
) -> Vec<SdePath> {
    let mut psi = vec![0.0; params.len()];
    let mut paths: Vec<SdePath> = params
        .iter()
        .map(|&p| SdePath {
            kind,
            parameter: p,
            mesh: mesh.to_vec(),
            psi: Vec::with_capacity(mesh.len()),
        })
        .collect();
    for (path, v) in paths.iter_mut().zip(&psi) {
        path.psi.push(*v);
    }
    for j in 0..mesh.len() - 1 {
        advance(j, &mut psi);
        for (path, v) in paths.iter_mut().zip(&psi) {
            path.psi.push(*v);
        }
    }
    paths
}

fn uniform_mesh(steps: usize, step: f64, t_end: f64) -> Vec<f64> {
    (0..=steps)
        .map(|j| if j == steps { t_end } else { j as f64 * step })
        .collect()
}

fn steps_for(horizon: f64, step: f64) -> usize {
    let r = horizon / step;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * n.max(1.0) {
        n as usize
    } else {
        r.ceil() as usize
    }
}

struct SchtauCoefficients {
    drift_shift: f64,
    rotating: f64,
    common: f64,
}

impl SchtauCoefficients {
    fn new(constants: &ModelConstants) -> Self {
        let inv = 1.0 / constants.kappa0;
        Self {
            drift_shift: constants.schtau_drift_correction(),
            rotating: inv * (constants.c_e0 / 2.0).sqrt(),
            common: inv * constants.c_0.sqrt(),
        }
    }

    #[inline]
    fn step(&self, c: f64, psi: f64, dt: f64, dzr: f64, dzi: f64, db: f64) -> f64 {
        let (s, co) = psi.sin_cos();
        psi + (2.0 * c + self.drift_shift) * dt + self.rotating * (co * dzr - s * dzi) + self.common * db
    }
}

fn schtau_setup(cs: &[f64], noise: &NoiseBundle, horizon: f64) -> Result<usize> {
    if cs.is_empty() {
        return Err(param("no c values given"));
    }
    if !(horizon > 0.0) {
        return Err(param(format!("horizon must be positive, got {horizon}")));
    }
    let steps = steps_for(horizon, noise.step);
    noise.require(steps)?;
    Ok(steps)
}

/// Euler–Maruyama for the critical-coupling phase SDE
///
/// `dΨ(c) = (2c − Re(i⟨F g⟩/(2E0))) dt + (1/√E0){√(C(E0)/2) Re(e^{iΨ} dZ) + √C(0) dB}`.
pub fn simulate_schtau(constants: &ModelConstants, cs: &[f64], noise: &NoiseBundle, horizon: f64) -> Result<Vec<SdePath>> {
    let steps = schtau_setup(cs, noise, horizon)?;
    let coef = SchtauCoefficients::new(constants);
    let h = noise.step;
    let mesh = uniform_mesh(steps, h, horizon);
    Ok(record_paths(SdeKind::Schtau, cs, &mesh, |j, psi| {
        let dt = mesh[j + 1] - mesh[j];
        let scale = (dt / h).sqrt();
        let (dzr, dzi, db) = (noise.z_re[j] * scale, noise.z_im[j] * scale, noise.b[j] * scale);
        for (p, &c) in psi.iter_mut().zip(cs) {
            *p = coef.step(c, *p, dt, dzr, dzi, db);
        }
    }))
}

/// Terminal values `Ψ_T(c)` only.
pub fn schtau_terminal(constants: &ModelConstants, cs: &[f64], noise: &NoiseBundle, horizon: f64) -> Result<Vec<f64>> {
    let steps = schtau_setup(cs, noise, horizon)?;
    let coef = SchtauCoefficients::new(constants);
    let h = noise.step;
    let mut psi = vec![0.0; cs.len()];
    for j in 0..steps {
        let t0 = j as f64 * h;
        let dt = if j + 1 == steps { horizon - t0 } else { h };
        let scale = (dt / h).sqrt();
        let (dzr, dzi, db) = (noise.z_re[j] * scale, noise.z_im[j] * scale, noise.b[j] * scale);
        for (p, &c) in psi.iter_mut().zip(cs) {
            *p = coef.step(c, *p, dt, dzr, dzi, db);
        }
    }
    Ok(psi)
}

fn target_levels(lo: f64, hi: f64, beta_phase: f64) -> Vec<(i64, f64)> {
    let first = ((lo + 2.0 * beta_phase) / TAU).ceil() as i64;
    let last = ((hi + 2.0 * beta_phase) / TAU).floor() as i64;
    (first..=last).map(|n| (n, n as f64 * TAU - 2.0 * beta_phase)).collect()
}

/// Invert `c ↦ Ψ_T(c)` by piecewise-linear interpolation at the levels
/// `2nπ − 2β` inside the sampled range.
pub fn schtau_atoms(paths: &[SdePath], beta_phase: f64) -> Result<Vec<f64>> {
    if paths.len() < 2 {
        return Err(Error::Insufficient("need at least two c values".into()));
    }
    let mut pts: Vec<(f64, f64)> = paths.iter().map(|p| (p.parameter, p.end())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = pts.windows(2).find(|w| w[1].1 < w[0].1) {
        return Err(Error::NonMonotone(format!(
            "Ψ decreases between c = {} and c = {}",
            w[0].0, w[1].0
        )));
    }
    let (lo, hi) = (pts[0].1, pts[pts.len() - 1].1);
    let mut atoms = Vec::new();
    for (_, level) in target_levels(lo, hi, beta_phase) {
        let k = pts.partition_point(|p| p.1 < level).max(1).min(pts.len() - 1);
        let (a, b) = (pts[k - 1], pts[k]);
        let x = if b.1 == a.1 { a.0 } else { a.0 + (level - a.1) * (b.0 - a.0) / (b.1 - a.1) };
        atoms.push(x);
    }
    Ok(atoms)
}

/// Atoms of the critical limit in `[−W, W]` for one noise realization: a
/// scan of `Ψ_T` on a `c`-grid followed by bisection in `c` with the same noise.
pub fn schtau_atoms_refined(
    constants: &ModelConstants,
    noise: &NoiseBundle,
    horizon: f64,
    beta_phase: f64,
    window: f64,
    grid_spacing: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let eval = |cs: &[f64]| schtau_terminal(constants, cs, noise, horizon).expect("validated inputs");
    let grid = symmetric_grid(window, grid_spacing)?;
    let values = eval(&grid);
    let mut brackets = Vec::new();
    for i in 0..grid.len() - 1 {
        if values[i + 1] < values[i] {
            return Err(Error::NonMonotone(format!(
                "Ψ decreases between c = {} and c = {}; refine the grid",
                grid[i],
                grid[i + 1]
            )));
        }
        for (_, level) in target_levels(values[i], values[i + 1], beta_phase) {
            if level <= values[i] {
                continue;
            }
            brackets.push(LevelBracket::new(grid[i], values[i], grid[i + 1], values[i + 1], level));
        }
    }
    bisect_levels(&mut brackets, tol, eval);
    Ok(brackets.iter().map(|b| b.estimate()).collect())
}

pub(crate) fn symmetric_grid(window: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(window > 0.0 && spacing > 0.0) {
        return Err(param("window and grid spacing must be positive"));
    }
    let cells = (2.0 * window / spacing).ceil() as usize;
    Ok((0..=cells).map(|i| -window + 2.0 * window * i as f64 / cells as f64).collect())
}

struct LevelBracket {
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    level: f64,
}

impl LevelBracket {
    fn new(a: f64, va: f64, b: f64, vb: f64, level: f64) -> Self {
        Self {
            a,
            fa: va - level,
            b,
            fb: vb - level,
            level,
        }
    }

    fn estimate(&self) -> f64 {
        if self.fb == self.fa {
            0.5 * (self.a + self.b)
        } else {
            (self.a - self.fa * (self.b - self.a) / (self.fb - self.fa)).clamp(self.a, self.b)
        }
    }
}

/// Lockstep bisection of monotone level crossings.
fn bisect_levels(brackets: &mut [LevelBracket], tol: f64, eval: impl Fn(&[f64]) -> Vec<f64>) {
    loop {
        let active: Vec<usize> = (0..brackets.len()).filter(|&i| brackets[i].b - brackets[i].a > tol).collect();
        if active.is_empty() {
            return;
        }
        let mids: Vec<f64> = active.iter().map(|&i| 0.5 * (brackets[i].a + brackets[i].b)).collect();
        let vals = eval(&mids);
        for ((&i, m), v) in active.iter().zip(mids).zip(vals) {
            let br = &mut brackets[i];
            let f = v - br.level;
            if f < 0.0 {
                br.a = m;
                br.fa = f;
            } else {
                br.b = m;
                br.fb = f;
            }
        }
    }
}

/// Mesh of the carousel: `t_{j+1} = t_j + h0 (1 − t_j)`, the last step cut
/// so the path stops at exactly `1 − δ`.
pub fn carousel_mesh(h0: f64, delta_cutoff: f64) -> Result<Vec<f64>> {
    if !(delta_cutoff > 0.0 && delta_cutoff < 0.1) {
        return Err(param(format!("delta_cutoff must lie in (0, 0.1), got {delta_cutoff}")));
    }
    if !(h0 > 0.0 && h0 < 1.0) {
        return Err(param(format!("h0 must lie in (0, 1), got {h0}")));
    }
    let stop = 1.0 - delta_cutoff;
    let mut mesh = vec![0.0];
    let mut t: f64 = 0.0;
    loop {
        let next = t + h0 * (1.0 - t);
        if next >= stop - 1e-15 {
            mesh.push(stop);
            return Ok(mesh);
        }
        mesh.push(next);
        t = next;
    }
}

/// Number of noise increments a carousel run needs.
pub fn carousel_steps(h0: f64, delta_cutoff: f64) -> Result<usize> {
    Ok(carousel_mesh(h0, delta_cutoff)?.len() - 1)
}

fn carousel_run(
    d: f64,
    lambdas: &[f64],
    noise: &NoiseBundle,
    delta_cutoff: f64,
    mut record: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let h0 = noise.step;
    let mesh = carousel_mesh(h0, delta_cutoff)?;
    let steps = mesh.len() - 1;
    noise.require(steps)?;
    let mut psi = vec![0.0; lambdas.len()];
    record(&psi);
    for j in 0..steps {
        let dt = mesh[j + 1] - mesh[j];
        // noise is stored in the local clock du = dt / (1 − t), so the
        // singular factor 1/√(1−t) cancels against √(1−t) of dZ_t
        let du = dt / (1.0 - mesh[j]);
        let scale = d * (du / h0).sqrt();
        let (wr, wi) = (noise.z_re[j] * scale, noise.z_im[j] * scale);
        for (p, &lam) in psi.iter_mut().zip(lambdas) {
            let (s, c) = p.sin_cos();
            *p += 2.0 * lam * dt + (c - 1.0) * wr - s * wi;
        }
        record(&psi);
    }
    Ok(psi)
}

/// Euler–Maruyama for `dΨ = 2λ dt + D/√(1−t) Re[(e^{iΨ} − 1) dZ]` on the
/// geometric mesh `h_t = h0 (1 − t)`, `h0 = noise.step`.
pub fn simulate_carousel(d: f64, lambdas: &[f64], noise: &NoiseBundle, delta_cutoff: f64) -> Result<Vec<SdePath>> {
    check_params(lambdas)?;
    let mesh = carousel_mesh(noise.step, delta_cutoff)?;
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(mesh.len()); lambdas.len()];
    carousel_run(d, lambdas, noise, delta_cutoff, |psi| {
        for (row, v) in rows.iter_mut().zip(psi) {
            row.push(*v);
        }
    })?;
    Ok(lambdas
        .iter()
        .zip(rows)
        .map(|(&l, psi)| SdePath {
            kind: SdeKind::Carousel,
            parameter: l,
            mesh: mesh.clone(),
            psi,
        })
        .collect())
}

/// `Ψ_{1−δ}(λ)` only.
pub fn carousel_terminal(d: f64, lambdas: &[f64], noise: &NoiseBundle, delta_cutoff: f64) -> Result<Vec<f64>> {
    check_params(lambdas)?;
    carousel_run(d, lambdas, noise, delta_cutoff, |_| {})
}

fn check_params(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(param("no parameter values given"));
    }
    Ok(())
}

/// Smallest horizon with `(β/4) e^{−β T/4} ≤ 1e−6`.
pub fn sine_beta_min_horizon(beta: f64) -> f64 {
    let c = beta / 4.0;
    (c / 1e-6).ln().max(0.0) / c
}

fn sine_beta_run(
    beta: f64,
    lambdas: &[f64],
    noise: &NoiseBundle,
    horizon: f64,
    record: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(param(format!("beta must be positive, got {beta}")));
    }
    check_params(lambdas)?;
    let min = sine_beta_min_horizon(beta);
    if horizon < min {
        return Err(param(format!("horizon {horizon} too small for beta = {beta}; need at least {min}")));
    }
    let steps = steps_for(horizon, noise.step);
    noise.require(steps)?;
    Ok(sine_beta_integrate(beta, lambdas, noise, steps, horizon, record))
}

/// The scheme itself, without the horizon rule.
fn sine_beta_integrate(
    beta: f64,
    lambdas: &[f64],
    noise: &NoiseBundle,
    steps: usize,
    horizon: f64,
    mut record: impl FnMut(&[f64]),
) -> Vec<f64> {
    let h = noise.step;
    let c = beta / 4.0;
    let mut psi = vec![0.0; lambdas.len()];
    record(&psi);
    let mut decay = 1.0; // e^{−c t_j}
    for j in 0..steps {
        let t1 = if j + 1 == steps { horizon } else { (j + 1) as f64 * h };
        let dt = t1 - j as f64 * h;
        let next = (-c * t1).exp();
        // drift integrated exactly over the step
        let drift = decay - next;
        let scale = (dt / h).sqrt();
        let (wr, wi) = (noise.z_re[j] * scale, noise.z_im[j] * scale);
        for (p, &lam) in psi.iter_mut().zip(lambdas) {
            let (s, co) = p.sin_cos();
            *p += lam * drift + (co - 1.0) * wr - s * wi;
        }
        decay = next;
        record(&psi);
    }
    psi
}

/// Euler–Maruyama for `dα = λ (β/4) e^{−βt/4} dt + Re[(e^{iα} − 1) dZ]` up
/// to `horizon`, the drift being integrated exactly on each step.
pub fn simulate_sine_beta(beta: f64, lambdas: &[f64], noise: &NoiseBundle, horizon: f64) -> Result<Vec<SdePath>> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); lambdas.len()];
    sine_beta_run(beta, lambdas, noise, horizon, |psi| {
        for (row, v) in rows.iter_mut().zip(psi) {
            row.push(*v);
        }
    })?;
    let steps = rows.first().map_or(0, |r| r.len() - 1);
    let mesh = uniform_mesh(steps, noise.step, horizon);
    Ok(lambdas
        .iter()
        .zip(rows)
        .map(|(&l, psi)| SdePath {
            kind: SdeKind::SineBeta,
            parameter: l,
            mesh: mesh.clone(),
            psi,
        })
        .collect())
}

pub fn sine_beta_terminal(beta: f64, lambdas: &[f64], noise: &NoiseBundle, horizon: f64) -> Result<Vec<f64>> {
    sine_beta_run(beta, lambdas, noise, horizon, |_| {})
}

/// `s = −(4/β) ln(1 − t)`: carousel time to Sine_β time.
pub fn carousel_time_change(t: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(range(format!("carousel time must lie in [0, 1), got {t}")));
    }
    if !(beta > 0.0) {
        return Err(param(format!("beta must be positive, got {beta}")));
    }
    Ok(-(4.0 / beta) * (-t).ln_1p())
}

/// Inverse of [`carousel_time_change`].
pub fn sine_beta_time_to_carousel(s: f64, beta: f64) -> f64 {
    -(-(beta / 4.0) * s).exp_m1()
}

/// `N = round(ψ / 2π)` with the signed residual `ψ − 2πN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub count: i64,
    pub residual: f64,
}

pub fn counting_from_phase(psi_end: f64) -> PhaseCount {
    let count = (psi_end / TAU).round();
    PhaseCount {
        count: count as i64,
        residual: psi_end - count * TAU,
    }
}

/// Atoms in `[−W, W]` read off the jumps of `λ ↦ N(λ)` for one carousel
/// noise realization, each jump located by bisection to `tol`.
pub fn carousel_atoms(d: f64, noise: &NoiseBundle, delta_cutoff: f64, window: f64, grid_spacing: f64, tol: f64) -> Result<Vec<f64>> {
    let eval = |ls: &[f64]| -> Vec<f64> {
        carousel_terminal(d, ls, noise, delta_cutoff)
            .expect("validated inputs")
            .into_iter()
            .map(|p| counting_from_phase(p).count as f64)
            .collect()
    };
    jump_atoms(window, grid_spacing, tol, eval)
}

/// Same as [`carousel_atoms`] for Sine_β. Returned atoms are in the halved
/// scale, i.e. jumps of `λ ↦ N(2λ)`.
pub fn sine_beta_atoms(beta: f64, noise: &NoiseBundle, horizon: f64, window: f64, grid_spacing: f64, tol: f64) -> Result<Vec<f64>> {
    let eval = |ls: &[f64]| -> Vec<f64> {
        let doubled: Vec<f64> = ls.iter().map(|l| 2.0 * l).collect();
        sine_beta_terminal(beta, &doubled, noise, horizon)
            .expect("validated inputs")
            .into_iter()
            .map(|p| counting_from_phase(p).count as f64)
            .collect()
    };
    jump_atoms(window, grid_spacing, tol, eval)
}

fn jump_atoms(window: f64, grid_spacing: f64, tol: f64, eval: impl Fn(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
    let grid = symmetric_grid(window, grid_spacing)?;
    let counts = eval(&grid);
    let mut brackets = Vec::new();
    for i in 0..grid.len() - 1 {
        let (a, b) = (counts[i], counts[i + 1]);
        if b < a {
            return Err(Error::NonMonotone(format!(
                "counting function decreases between λ = {} and λ = {}",
                grid[i],
                grid[i + 1]
            )));
        }
        // one bracket per unit jump, each targeting the half-integer level
        let mut level = a + 0.5;
        while level < b {
            brackets.push(LevelBracket::new(grid[i], a, grid[i + 1], b, level));
            level += 1.0;
        }
    }
    bisect_levels(&mut brackets, tol, eval);
    let mut atoms: Vec<f64> = brackets.iter().map(|b| 0.5 * (b.a + b.b)).collect();
    atoms.sort_by(f64::total_cmp);
    Ok(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::potential::{compute_constants, PotentialShape};

    fn constants() -> ModelConstants {
        compute_constants(&PotentialShape::default(), 1.0).unwrap()
    }

    #[test]
    fn schtau_noise_off_is_linear() {
        let k = constants();
        let d0 = k.schtau_drift_correction();
        let noise = NoiseBundle::silent(1000, 1e-3);
        let cs = [-1.0, 0.0, 0.7];
        let paths = simulate_schtau(&k, &cs, &noise, 1.0).unwrap();
        for (p, c) in paths.iter().zip(cs) {
            assert!((p.end() - (2.0 * c + d0)).abs() < 1e-12);
            assert_eq!(p.psi[0], 0.0);
        }
        assert!(simulate_schtau(&k, &[], &noise, 1.0).is_err());
    }

    #[test]
    fn schtau_drift_constant_for_unit_mode() {
        // ⟨F g⟩ = 1/(−1/2 + 2i) at E0 = 1, so −Re(i⟨Fg⟩/2) = −(8/17)/2·... = −4/17
        let d0 = constants().schtau_drift_correction();
        assert!((d0 + 4.0 / 17.0).abs() < 1e-14);
    }

    #[test]
    fn schtau_terminal_matches_paths() {
        let k = constants();
        let noise = NoiseBundle::sample(3, 1000, 1e-3).unwrap();
        let cs = [-2.0, 0.5, 3.0];
        let paths = simulate_schtau(&k, &cs, &noise, 1.0).unwrap();
        let ends = schtau_terminal(&k, &cs, &noise, 1.0).unwrap();
        for (p, e) in paths.iter().zip(ends) {
            assert!((p.end() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn schtau_is_monotone_in_c() {
        let k = constants();
        let cs: Vec<f64> = (0..41).map(|i| -10.0 + 0.5 * i as f64).collect();
        let mut violations = 0;
        for seed in 0..1000 {
            let noise = NoiseBundle::sample(seed, 1000, 1e-3).unwrap();
            let ends = schtau_terminal(&k, &cs, &noise, 1.0).unwrap();
            violations += ends.windows(2).filter(|w| w[1] < w[0]).count();
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn schtau_variance_bounded_by_isometry() {
        let k = constants();
        let n = 10_000;
        let ends: Vec<f64> = (0..n)
            .map(|seed| {
                let noise = NoiseBundle::sample(seed, 1000, 1e-3).unwrap();
                schtau_terminal(&k, &[0.3], &noise, 1.0).unwrap()[0]
            })
            .collect();
        let mean = ends.iter().sum::<f64>() / n as f64;
        let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let bound = (k.c_e0 / 2.0 + k.c_0) / k.e0;
        // both noise terms have unit rate, so the bound is attained; allow sampling error
        assert!(var <= bound * 1.05, "var {var} bound {bound}");
        assert!(var >= bound * 0.95, "var {var} bound {bound}");
    }

    #[test]
    fn schtau_atoms_noise_off() {
        let k = constants();
        let d0 = k.schtau_drift_correction();
        let noise = NoiseBundle::silent(1000, 1e-3);
        let cs: Vec<f64> = (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect();
        let paths = simulate_schtau(&k, &cs, &noise, 1.0).unwrap();
        let beta = 0.4;
        let atoms = schtau_atoms(&paths, beta).unwrap();
        assert!(!atoms.is_empty());
        for a in &atoms {
            let n = ((2.0 * a + d0 + 2.0 * beta) / TAU).round();
            assert!((a - (n * TAU - 2.0 * beta - d0) / 2.0).abs() < 1e-9);
        }
        let refined = schtau_atoms_refined(&k, &noise, 1.0, beta, 10.0, 0.1, 1e-10).unwrap();
        assert_eq!(refined.len(), atoms.len());
        for (a, b) in refined.iter().zip(&atoms) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn schtau_atoms_rejects_non_monotone() {
        let mk = |c: f64, v: f64| SdePath { kind: SdeKind::Schtau, parameter: c, mesh: vec![0.0, 1.0], psi: vec![0.0, v] };
        let paths = vec![mk(0.0, 0.0), mk(1.0, 7.0), mk(2.0, 6.0)];
        assert!(matches!(schtau_atoms(&paths, 0.0), Err(Error::NonMonotone(_))));
    }

    #[test]
    fn zero_parameter_is_a_fixed_point() {
        for seed in 0..5 {
            let noise = NoiseBundle::sample(seed, 30_000, 1e-3).unwrap();
            let car = simulate_carousel(1.3, &[0.0], &noise, 1e-4).unwrap();
            assert!(car[0].psi.iter().all(|&v| v == 0.0));
            let sb = simulate_sine_beta(2.0, &[0.0], &noise, 30.0).unwrap();
            assert!(sb[0].psi.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn carousel_noise_off() {
        let steps = carousel_steps(1e-3, 1e-4).unwrap();
        let noise = NoiseBundle::silent(steps, 1e-3);
        let p = simulate_carousel(1.0, &[2.5], &noise, 1e-4).unwrap();
        assert!((p[0].end() - 2.0 * 2.5 * (1.0 - 1e-4)).abs() < 1e-10);
        assert_eq!(p[0].t_end(), 1.0 - 1e-4);
        assert!(simulate_carousel(1.0, &[1.0], &noise, 0.2).is_err());
        assert!(simulate_carousel(1.0, &[1.0], &noise, 0.0).is_err());
    }

    #[test]
    fn sine_beta_noise_off() {
        let beta = 2.0;
        let horizon = 30.0;
        let noise = NoiseBundle::silent(15_000, 2e-3);
        let p = simulate_sine_beta(beta, &[10.0], &noise, horizon).unwrap();
        let expected = 10.0 * (1.0 - (-beta * horizon / 4.0).exp());
        assert!((p[0].end() - expected).abs() < 1e-10);
        let err = simulate_sine_beta(beta, &[1.0], &noise, 5.0).unwrap_err();
        assert!(err.to_string().contains("need at least"));
    }

    #[test]
    fn time_change() {
        assert_eq!(carousel_time_change(0.0, 2.0).unwrap(), 0.0);
        let t = 1.0 - (-1.0f64).exp();
        assert!((carousel_time_change(t, 2.0).unwrap() - 2.0).abs() < 1e-14);
        for t in [0.0, 0.3, 0.9, 0.999] {
            let s = carousel_time_change(t, 3.0).unwrap();
            assert!((sine_beta_time_to_carousel(s, 3.0) - t).abs() < 1e-14);
        }
        assert!(carousel_time_change(1.0, 2.0).is_err());
    }

    #[test]
    fn phase_counts() {
        assert_eq!(counting_from_phase(0.0).count, 0);
        let c = counting_from_phase(4.0 * PI + 0.05);
        assert_eq!(c.count, 2);
        assert!((c.residual - 0.05).abs() < 1e-12);
    }

    #[test]
    fn time_changed_schemes_track_each_other() {
        // with h0 = 1 − e^{−βh/4} the meshes coincide under the time change;
        // the same standardized increments drive both schemes
        let beta = 2.0;
        let d = 2.0 / f64::sqrt(beta);
        let h = 2e-3;
        let h0 = -(-beta / 4.0 * h).exp_m1();
        let delta = 1e-4;
        let steps = carousel_steps(h0, delta).unwrap();
        let horizon = carousel_time_change(1.0 - delta, beta).unwrap();
        let lam = 4.0 * PI;
        let trials = 200;
        let mut agree = 0;
        for seed in 0..trials {
            let base = NoiseBundle::sample(seed, steps, 1.0).unwrap();
            let scaled = |s: f64| NoiseBundle {
                step: s,
                z_re: base.z_re.iter().map(|z| z * s.sqrt()).collect(),
                z_im: base.z_im.iter().map(|z| z * s.sqrt()).collect(),
                b: base.b.clone(),
            };
            let car = carousel_terminal(d, &[lam], &scaled(h0), delta).unwrap()[0];
            let sb = sine_beta_integrate(beta, &[2.0 * lam], &scaled(h), steps, horizon, |_| {})[0];
            if counting_from_phase(car).count == counting_from_phase(sb).count {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * trials as f64, "{agree}/{trials}");
    }

    #[test]
    fn carousel_mean_count() {
        let lam = 4.0 * PI;
        let d = 1.0;
        let steps = carousel_steps(1e-3, 1e-4).unwrap();
        let n = 2000;
        let total: i64 = (0..n)
            .map(|seed| {
                let noise = NoiseBundle::sample(seed, steps, 1e-3).unwrap();
                counting_from_phase(carousel_terminal(d, &[lam], &noise, 1e-4).unwrap()[0]).count
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 4.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn carousel_atoms_are_jumps() {
        let steps = carousel_steps(1e-3, 1e-4).unwrap();
        let noise = NoiseBundle::sample(5, steps, 1e-3).unwrap();
        let d = 1.0;
        let atoms = carousel_atoms(d, &noise, 1e-4, 3.0 * PI, PI / 8.0, 1e-6).unwrap();
        assert!(atoms.windows(2).all(|w| w[1] > w[0]));
        for a in &atoms {
            let below = carousel_terminal(d, &[a - 1e-5], &noise, 1e-4).unwrap()[0];
            let above = carousel_terminal(d, &[a + 1e-5], &noise, 1e-4).unwrap()[0];
            assert_eq!(counting_from_phase(above).count - counting_from_phase(below).count, 1);
        }
    }
}
