//! Prüfer phase integration, Sturm oscillation counting and atom location.
//!
//! For `-x'' + q x = κ² x` with `x(0) = 0` write `x = r sin θ`,
//! `x'/κ = r cos θ`. Then
//!
//! ```text
//! θ' = κ − (q/κ) sin²θ,        (log r)' = (q / 2κ) sin 2θ,       θ(0) = 0.
//! ```
//!
//! The solver integrates the slow part `θ̃ = θ − κt` with the explicit
//! midpoint rule on the mesh of the driving path, the potential being held
//! constant on each mesh cell. The fast rotation `e^{2iθ}` is carried along
//! by multiplying small-angle rotations and is resynchronized from `θ`
//! periodically, which keeps every step free of large-argument trig calls.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param, range, Error, Result};
use crate::potential::{mesh_points, DrivingPath, PotentialModel};

/// Rotations are recomputed exactly from `θ` every this many steps.
const RESYNC_EVERY: usize = 64;
/// Largest correction angle handled by the polynomial `cis`.
const SMALL_ANGLE: f64 = 0.1;
/// Number of `κ` values advanced in lockstep.
const LANES: usize = 16;

/// `(cos φ, sin φ)` to about `φ⁸/8!`.
#[inline(always)]
fn cis_small(phi: f64) -> (f64, f64) {
    let x2 = phi * phi;
    let c = 1.0 + x2 * (-1.0 / 2.0 + x2 * (1.0 / 24.0 + x2 * (-1.0 / 720.0)));
    let s = phi * (1.0 + x2 * (-1.0 / 6.0 + x2 * (1.0 / 120.0 + x2 * (-1.0 / 5040.0))));
    (c, s)
}

#[inline(always)]
fn cis(phi: f64, small: bool) -> (f64, f64) {
    if small {
        cis_small(phi)
    } else {
        let (s, c) = phi.sin_cos();
        (c, s)
    }
}

/// Solution of the Prüfer system along one potential sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PruferPath {
    pub kappa: f64,
    pub mesh: Vec<f64>,
    /// Unwrapped phase `θ_t`.
    pub theta: Vec<f64>,
    pub log_r: Vec<f64>,
}

impl PruferPath {
    /// `θ_t − κt` on the mesh.
    pub fn theta_tilde(&self) -> Vec<f64> {
        self.mesh
            .iter()
            .zip(&self.theta)
            .map(|(t, th)| th - self.kappa * t)
            .collect()
    }

    pub fn final_theta(&self) -> f64 {
        *self.theta.last().expect("non-empty path")
    }
}

/// The potential sampled once on the integration mesh, reusable for any
/// number of `κ` evaluations.
#[derive(Debug, Clone)]
pub struct PruferSolver {
    step: f64,
    /// Potential on each cell; the last cell may be shorter than `step`.
    q: Vec<f64>,
    tail: f64,
    length: f64,
    q_max: f64,
}

impl PruferSolver {
    /// Sample `q` along `path` on `[0, length]`.
    pub fn new(path: &DrivingPath, model: &PotentialModel, length: f64) -> Result<Self> {
        if !(length > 0.0) {
            return Err(param(format!("integration length must be positive, got {length}")));
        }
        if length > path.duration * (1.0 + 1e-12) {
            return Err(range(format!(
                "integration length {length} exceeds path duration {}",
                path.duration
            )));
        }
        let step = path.step;
        let full = mesh_points(length, step) - 1;
        let mut tail = length - full as f64 * step;
        if tail <= 1e-9 * step {
            tail = 0.0;
        }
        let cells = full + usize::from(tail > 0.0);
        if cells == 0 {
            return Err(param("integration length shorter than one mesh cell"));
        }
        let q: Vec<f64> = (0..cells)
            .map(|j| model.value(j as f64 * step, path.positions[j.min(path.positions.len() - 1)]))
            .collect();
        let q_max = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            step,
            q,
            tail,
            length,
            q_max,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn cell_width(&self, j: usize) -> f64 {
        if j + 1 == self.q.len() && self.tail > 0.0 {
            self.tail
        } else {
            self.step
        }
    }

    /// Whether every correction angle `2h·q/(2κ)·(1 − cos 2θ)` is small.
    fn small_angles(&self, kappa: f64) -> bool {
        2.0 * self.step * self.q_max / kappa < SMALL_ANGLE
    }

    /// `θ_T(κ)` at the end of the interval.
    pub fn end_phase(&self, kappa: f64) -> f64 {
        self.end_phase_lanes([kappa])[0]
    }

    /// End phases for many `κ` at once.
    pub fn end_phases(&self, kappas: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(kappas.len());
        for chunk in kappas.chunks(LANES) {
            if chunk.len() == LANES {
                out.extend(self.end_phase_lanes::<LANES>(chunk.try_into().expect("full chunk")));
            } else {
                let mut lanes = [chunk[0]; LANES];
                lanes[..chunk.len()].copy_from_slice(chunk);
                out.extend_from_slice(&self.end_phase_lanes(lanes)[..chunk.len()]);
            }
        }
        out
    }

    /// Midpoint steps for `N` values of `κ` at once.
    ///
    /// With `u = e^{2iθ}` and `a = q/(2κ)` one step of width `h` reads
    /// `k₁ = −a(1 − Re u)`, `k₂ = −a(1 − Re[u e^{ih(κ + k₁)}])`,
    /// `θ̃ += h k₂`, `u ← u e^{2ih(κ + k₂)}`. The `κ` part of each rotation is
    /// a fixed factor; only the small `k` part is evaluated per step.
    fn end_phase_lanes<const N: usize>(&self, kappas: [f64; N]) -> [f64; N] {
        if kappas.iter().all(|&k| self.small_angles(k)) {
            self.lockstep::<N, true>(kappas)
        } else {
            self.lockstep::<N, false>(kappas)
        }
    }

    fn lockstep<const N: usize, const SMALL: bool>(&self, kappas: [f64; N]) -> [f64; N] {
        let h = self.step;
        let inv = kappas.map(|k| 0.5 / k);
        let half = kappas.map(|k| cis(h * k, false));
        let full_rot = kappas.map(|k| cis(2.0 * h * k, false));
        let mut tt = [0.0; N];
        let mut ur = [1.0; N];
        let mut ui = [0.0; N];
        let n = self.q.len();
        let full = if self.tail > 0.0 { n - 1 } else { n };
        let mut j = 0;
        while j < full {
            let block_end = (j + RESYNC_EVERY).min(full);
            for &q in &self.q[j..block_end] {
                for l in 0..N {
                    let a = q * inv[l];
                    let k1 = -a * (1.0 - ur[l]);
                    let (e1r, e1i) = half[l];
                    let vr = ur[l] * e1r - ui[l] * e1i;
                    let vi = ur[l] * e1i + ui[l] * e1r;
                    let (c1, s1) = cis(h * k1, SMALL);
                    let mr = vr * c1 - vi * s1;
                    let k2 = -a * (1.0 - mr);
                    tt[l] += h * k2;
                    let (e2r, e2i) = full_rot[l];
                    let wr = ur[l] * e2r - ui[l] * e2i;
                    let wi = ur[l] * e2i + ui[l] * e2r;
                    let (c2, s2) = cis(2.0 * h * k2, SMALL);
                    ur[l] = wr * c2 - wi * s2;
                    ui[l] = wr * s2 + wi * c2;
                }
            }
            j = block_end;
            let t = j as f64 * h;
            for l in 0..N {
                let (s, c) = (2.0 * (kappas[l] * t + tt[l])).sin_cos();
                ur[l] = c;
                ui[l] = s;
            }
        }
        if self.tail > 0.0 {
            let dt = self.tail;
            for l in 0..N {
                let a = self.q[n - 1] * inv[l];
                let k1 = -a * (1.0 - ur[l]);
                let (c1, s1) = cis(dt * (kappas[l] + k1), false);
                let mr = ur[l] * c1 - ui[l] * s1;
                tt[l] += dt * (-a * (1.0 - mr));
            }
        }
        let mut out = [0.0; N];
        for l in 0..N {
            out[l] = kappas[l] * self.length + tt[l];
        }
        out
    }

    /// Full trajectory of `(θ, log r)` on the mesh.
    pub fn trajectory(&self, kappa: f64) -> PruferPath {
        let small = self.small_angles(kappa);
        let inv = 0.5 / kappa;
        let n = self.q.len();
        let mut mesh = Vec::with_capacity(n + 1);
        let mut theta = Vec::with_capacity(n + 1);
        let mut log_r = Vec::with_capacity(n + 1);
        mesh.push(0.0);
        theta.push(0.0);
        log_r.push(0.0);
        let (mut tt, mut lr) = (0.0, 0.0);
        let (mut ur, mut ui) = (1.0, 0.0);
        let (e1r, e1i) = cis(self.step * kappa, false);
        let (e2r, e2i) = cis(2.0 * self.step * kappa, false);
        let mut t = 0.0;
        for j in 0..n {
            let dt = self.cell_width(j);
            let a = self.q[j] * inv;
            let k1 = -a * (1.0 - ur);
            let (mr, mi) = if dt == self.step {
                let (c1, s1) = cis(dt * k1, small);
                let (vr, vi) = (ur * e1r - ui * e1i, ur * e1i + ui * e1r);
                (vr * c1 - vi * s1, vr * s1 + vi * c1)
            } else {
                let (c1, s1) = cis(dt * (kappa + k1), false);
                (ur * c1 - ui * s1, ur * s1 + ui * c1)
            };
            let k2 = -a * (1.0 - mr);
            tt += dt * k2;
            lr += dt * a * mi;
            t = if j + 1 == n { self.length } else { (j + 1) as f64 * self.step };
            if (j + 1) % RESYNC_EVERY == 0 || dt != self.step {
                let (s, c) = (2.0 * (kappa * t + tt)).sin_cos();
                ur = c;
                ui = s;
            } else {
                let (c2, s2) = cis(2.0 * dt * k2, small);
                let (wr, wi) = (ur * e2r - ui * e2i, ur * e2i + ui * e2r);
                ur = wr * c2 - wi * s2;
                ui = wr * s2 + wi * c2;
            }
            mesh.push(t);
            theta.push(kappa * t + tt);
            log_r.push(lr);
        }
        debug_assert_eq!(t, self.length);
        PruferPath {
            kappa,
            mesh,
            theta,
            log_r,
        }
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(param(format!("kappa must be positive, got {kappa}")));
    }
    Ok(())
}

/// Integrate the Prüfer system on `[0, length]`.
pub fn integrate_prufer(path: &DrivingPath, model: &PotentialModel, kappa: f64, length: f64) -> Result<PruferPath> {
    check_kappa(kappa)?;
    Ok(PruferSolver::new(path, model, length)?.trajectory(kappa))
}

/// `θ_{L}(κ)`, the phase at the right end of `[0, L]`.
pub fn boundary_phase(path: &DrivingPath, model: &PotentialModel, kappa: f64, length: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(PruferSolver::new(path, model, length)?.end_phase(kappa))
}

/// `θ = mπ + φ` with `φ ∈ [0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub m: i64,
    pub phi: f64,
}

pub fn split_phase(theta: f64) -> PhaseSplit {
    let m = (theta / PI).floor();
    let mut phi = theta - m * PI;
    let mut m = m as i64;
    if phi >= PI {
        phi -= PI;
        m += 1;
    }
    if phi < 0.0 {
        phi = 0.0;
    }
    PhaseSplit { m, phi }
}

/// Number of `n ≥ 1` with `nπ < θ`. A phase sitting on a multiple of π (up
/// to rounding) is an eigenvalue at exactly `κ²`, which is not counted.
pub fn count_below_phase(theta: f64) -> u64 {
    let r = theta / PI;
    if r <= 0.0 {
        return 0;
    }
    let f = r.floor();
    let count = if r - f <= 1e-12 * r.max(1.0) { f - 1.0 } else { f };
    count.max(0.0) as u64
}

/// Dirichlet eigenvalues of `-d²/dt² + q` on `[0, L]` strictly below `κ²`,
/// by Sturm oscillation.
pub fn count_eigenvalues_below(path: &DrivingPath, model: &PotentialModel, kappa: f64, length: f64) -> Result<u64> {
    Ok(count_below_phase(boundary_phase(path, model, kappa, length)?))
}

/// Length making `√E0 L = mπ + β` exact.
pub fn choose_length(e0: f64, m: u64, beta_phase: f64) -> Result<f64> {
    if !(e0 > 0.0) {
        return Err(param(format!("reference energy must be positive, got {e0}")));
    }
    if m < 1 {
        return Err(param("m must be at least 1"));
    }
    if !(0.0..PI).contains(&beta_phase) {
        return Err(param(format!("phase offset must lie in [0, π), got {beta_phase}")));
    }
    Ok((m as f64 * PI + beta_phase) / e0.sqrt())
}

/// Unfolded eigenvalues `x = L(√E − √E0)` in `[−W, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumWindow {
    pub e0: f64,
    pub length: f64,
    pub atoms: Vec<f64>,
    pub kappas: Vec<f64>,
    pub boundary_phase_m: i64,
    pub boundary_phase_phi: f64,
    pub window: f64,
    /// A non-monotone bracket of `κ ↦ θ_L(κ)` was seen during the scan.
    pub non_monotone: bool,
    /// Number of `κ` evaluations spent.
    pub evaluations: usize,
}

impl SpectrumWindow {
    /// Index of the atom closest to 0.
    pub fn nearest_to_zero(&self) -> Option<usize> {
        nearest_to_zero(&self.atoms)
    }
}

pub(crate) fn nearest_to_zero(atoms: &[f64]) -> Option<usize> {
    atoms
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
}

/// Root-finding options for [`locate_atoms_with`].
#[derive(Debug, Clone, Copy)]
pub struct LocateOptions {
    /// Scan grid spacing in units of `π/L`.
    pub grid_fraction: f64,
    /// Final bracket width relative to `κ0`.
    pub relative_tol: f64,
}

impl Default for LocateOptions {
    fn default() -> Self {
        Self {
            grid_fraction: 1.0 / 8.0,
            relative_tol: 1e-10,
        }
    }
}

pub fn locate_atoms(path: &DrivingPath, model: &PotentialModel, e0: f64, length: f64, window: f64) -> Result<SpectrumWindow> {
    let solver = PruferSolver::new(path, model, length)?;
    locate_atoms_with(&solver, e0, window, LocateOptions::default())
}

/// Straddle half-width relative to the bracket width.
const STRADDLE: f64 = 1e-3;

struct Bracket {
    target: f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    bisect_next: bool,
}

impl Bracket {
    fn interpolate(&self) -> f64 {
        if self.fb == self.fa {
            return 0.5 * (self.a + self.b);
        }
        (self.a - self.fa * (self.b - self.a) / (self.fb - self.fa)).clamp(self.a, self.b)
    }
}

/// Shrink every bracket until its width is at most `tol`.
///
/// Each round evaluates two points straddling the secant estimate at
/// `±max(0.45 tol, STRADDLE·width)`, so a good estimate shrinks a wide bracket
/// by orders of magnitude and closes a narrow one at once; a round that fails
/// to halve the bracket is followed by a plain bisection step.
fn refine_brackets(brackets: &mut [Bracket], tol: f64, eval: impl Fn(&[f64]) -> Vec<f64>) -> usize {
    let mut evaluations = 0;
    for _ in 0..200 {
        let active: Vec<usize> = (0..brackets.len())
            .filter(|&i| brackets[i].b - brackets[i].a > tol && brackets[i].fb != 0.0)
            .collect();
        if active.is_empty() {
            break;
        }
        let mut points = Vec::with_capacity(2 * active.len());
        let mut owners = Vec::with_capacity(2 * active.len());
        for &i in &active {
            let br = &brackets[i];
            let before = points.len();
            if !br.bisect_next {
                let x = br.interpolate();
                let d = (0.45 * tol).max(STRADDLE * (br.b - br.a));
                for p in [x - d, x + d] {
                    if p > br.a && p < br.b {
                        points.push(p);
                        owners.push(i);
                    }
                }
            }
            if points.len() == before {
                points.push(0.5 * (br.a + br.b));
                owners.push(i);
            }
        }
        let values = eval(&points);

        evaluations += points.len();
        let widths: Vec<f64> = active.iter().map(|&i| brackets[i].b - brackets[i].a).collect();
        for ((p, v), &i) in points.iter().zip(values).zip(&owners) {
            let br = &mut brackets[i];
            let f = v - br.target;
            if *p <= br.a || *p >= br.b {
                continue;
            }
            if f < 0.0 {
                br.a = *p;
                br.fa = f;
            } else {
                br.b = *p;
                br.fb = f;
            }
        }
        for (k, &i) in active.iter().enumerate() {
            let br = &mut brackets[i];
            br.bisect_next = !br.bisect_next && (br.b - br.a) > 0.5 * widths[k];
        }
    }
    evaluations
}

/// Scan `κ ∈ [κ0 − W/L, κ0 + W/L]` for phases crossing multiples of π and
/// solve each crossing.
pub fn locate_atoms_with(solver: &PruferSolver, e0: f64, window: f64, opts: LocateOptions) -> Result<SpectrumWindow> {
    if !(e0 > 0.0) {
        return Err(param(format!("reference energy must be positive, got {e0}")));
    }
    if !(window > 0.0) {
        return Err(param(format!("window must be positive, got {window}")));
    }
    let length = solver.length();
    let kappa0 = e0.sqrt();
    let lo = kappa0 - window / length;
    let hi = kappa0 + window / length;
    if lo <= 0.0 {
        return Err(param(format!(
            "window reaches non-positive kappa: κ0 − W/L = {lo}"
        )));
    }
    let spacing = opts.grid_fraction * PI / length;
    let mut cells = ((hi - lo) / spacing).ceil() as usize;
    let mut grid: Vec<f64> = (0..=cells).map(|i| lo + (hi - lo) * i as f64 / cells as f64).collect();
    let mut phases = solver.end_phases(&grid);
    let mut evaluations = grid.len();
    let non_monotone = phases.windows(2).any(|w| w[1] < w[0]);
    if non_monotone {
        let fine = cells * 8;
        let fine_grid: Vec<f64> = (0..=fine).map(|i| lo + (hi - lo) * i as f64 / fine as f64).collect();
        let extra: Vec<f64> = fine_grid
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 8 != 0)
            .map(|(_, &k)| k)
            .collect();
        let extra_phases = solver.end_phases(&extra);
        evaluations += extra.len();
        let mut merged = Vec::with_capacity(fine + 1);
        let mut it = extra_phases.into_iter();
        for i in 0..=fine {
            merged.push(if i % 8 == 0 { phases[i / 8] } else { it.next().unwrap() });
        }
        grid = fine_grid;
        phases = merged;
        cells = fine;
    }
    let center = solver.end_phase(kappa0);
    evaluations += 1;

    let mut brackets = Vec::new();
    for i in 0..cells {
        let (ta, tb) = (phases[i], phases[i + 1]);
        if tb < ta {
            continue;
        }
        let first = (ta / PI).floor() as i64 + 1;
        let last = (tb / PI).floor() as i64;
        for n in first..=last {
            let target = n as f64 * PI;
            brackets.push(Bracket {
                target,
                a: grid[i],
                fa: ta - target,
                b: grid[i + 1],
                fb: tb - target,
                bisect_next: false,
            });
        }
    }
    let tol = opts.relative_tol * kappa0;
    // brackets holding several crossings are split on their own targets first
    evaluations += refine_brackets(&mut brackets, tol, |ks| solver.end_phases(ks));

    let mut kappas: Vec<f64> = brackets
        .iter()
        .map(|br| if br.fb == 0.0 { br.b } else { br.interpolate() })
        .collect();
    kappas.sort_by(f64::total_cmp);
    let atoms: Vec<f64> = kappas.iter().map(|k| length * (k - kappa0)).collect();
    let split = split_phase(center);
    Ok(SpectrumWindow {
        e0,
        length,
        atoms,
        kappas,
        boundary_phase_m: split.m,
        boundary_phase_phi: split.phi,
        window,
        non_monotone,
        evaluations,
    })
}

/// Second-order fluctuations of the spacings around the atom nearest 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSample {
    pub length: f64,
    pub alpha: f64,
    /// Largest |n|; `values[n + order]` holds `X(n)`.
    pub order: usize,
    pub values: Vec<f64>,
}

impl SecondOrderSample {
    pub fn get(&self, n: i64) -> Option<f64> {
        let idx = n + self.order as i64;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied()
    }
}

/// `X(n) = {(κ_{m+n+1} − κ_{m+n}) L − π} L^{α − 1/2}` for `|n| ≤ N`.
pub fn second_order_spacings(window: &SpectrumWindow, alpha: f64, order: usize) -> Result<SecondOrderSample> {
    let m = window
        .nearest_to_zero()
        .ok_or_else(|| Error::Insufficient("window has no atoms".into()))?;
    let n = order as i64;
    let first = m as i64 - n;
    let last = m as i64 + n + 1;
    if first < 0 || last >= window.atoms.len() as i64 {
        return Err(range(format!(
            "need atoms {first}..={last} around index {m}, window holds {}; enlarge W beyond {}",
            window.atoms.len(),
            window.window
        )));
    }
    let scale = window.length.powf(alpha - 0.5);
    let values = (-n..=n)
        .map(|k| {
            let i = (m as i64 + k) as usize;
            (window.atoms[i + 1] - window.atoms[i] - PI) * scale
        })
        .collect();
    Ok(SecondOrderSample {
        length: window.length,
        alpha,
        order,
        values,
    })
}

/// `2θ_t(κ)` reduced to `[0, 2π)` at `t = n − n^exponent` for the decaying
/// model seen from its right end.
pub fn left_phase_mod_2pi(path: &DrivingPath, shape: &crate::potential::PotentialShape, n: f64, exponent: f64, kappa: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&exponent) || exponent == 0.0 {
        return Err(param(format!("exponent must lie in (0, 1), got {exponent}")));
    }
    let model = PotentialModel::decaying_reversed(n, *shape)?;
    let stop = n - n.powf(exponent);
    let theta = boundary_phase(path, &model, kappa, stop)?;
    Ok((2.0 * theta).rem_euclid(2.0 * PI))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{sample_driving_path, PotentialShape};

    fn zero_shape() -> PotentialShape {
        PotentialShape::new(1, 0.0).unwrap()
    }

    fn free_model(length: f64) -> PotentialModel {
        PotentialModel::coupling(1.0, length, zero_shape()).unwrap()
    }

    /// Classical RK4 with adaptive step halving, used only as a reference.
    fn reference_theta(q: f64, kappa: f64, t_end: f64) -> f64 {
        let f = |th: f64| kappa - q / kappa * th.sin().powi(2);
        let rk = |h: f64| {
            let n = (t_end / h).round() as usize;
            let mut th = 0.0;
            for _ in 0..n {
                let k1 = f(th);
                let k2 = f(th + 0.5 * h * k1);
                let k3 = f(th + 0.5 * h * k2);
                let k4 = f(th + h * k3);
                th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            th
        };
        let mut h = 0.01;
        let mut prev = rk(h);
        loop {
            h /= 2.0;
            let next = rk(h);
            if (next - prev).abs() < 1e-12 {
                return next;
            }
            prev = next;
        }
    }

    #[test]
    fn free_evolution_is_exact() {
        let path = sample_driving_path(1, 10.0, 0.01).unwrap();
        let p = integrate_prufer(&path, &free_model(10.0), 1.3, 10.0).unwrap();
        assert_eq!(p.final_theta(), 1.3 * 10.0);
        assert!(p.log_r.iter().all(|&v| v == 0.0));
        assert_eq!(p.theta[0], 0.0);
        assert_eq!(p.log_r[0], 0.0);
    }

    #[test]
    fn frozen_potential_matches_reference_solution() {
        let x = 0.4;
        let shape = PotentialShape::default();
        let path = DrivingPath::constant(x, 10.0, 0.001).unwrap();
        // coupling family with L = 1 has a unit envelope
        let model = PotentialModel::coupling(1.0, 1.0, shape).unwrap();
        let q = shape.eval(x);
        let kappa = 1.1;
        let theta = boundary_phase(&path, &model, kappa, 10.0).unwrap();
        let reference = reference_theta(q, kappa, 10.0);
        assert!((theta - reference).abs() < 1e-6, "{theta} vs {reference}");
    }

    #[test]
    fn large_kappa_stays_near_free_phase() {
        let path = sample_driving_path(4, 1.0, 0.01).unwrap();
        let model = PotentialModel::coupling(0.1, 2.0, PotentialShape::default()).unwrap();
        let q_sup = model.envelope(0.0) * 2f64.sqrt();
        let theta = boundary_phase(&path, &model, 100.0, 1.0).unwrap();
        assert!((theta - 100.0).abs() <= q_sup / 100.0);
    }

    #[test]
    fn trajectory_and_end_phase_agree() {
        let path = sample_driving_path(8, 50.0, 0.01).unwrap();
        let model = PotentialModel::coupling(0.5, 50.0, PotentialShape::default()).unwrap();
        let solver = PruferSolver::new(&path, &model, 49.995).unwrap();
        let traj = solver.trajectory(0.9);
        assert!((traj.final_theta() - solver.end_phase(0.9)).abs() < 1e-9);
        assert_eq!(*traj.mesh.last().unwrap(), 49.995);
        let steps: Vec<f64> = traj.theta.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|d| d.abs() < 0.9 * 0.01 + 0.01 * 1.5 / 0.9));
    }

    #[test]
    fn boundary_phase_free_cases() {
        let path = DrivingPath::constant(0.0, 1.0, 0.001).unwrap();
        let theta = boundary_phase(&path, &free_model(1.0), PI, 1.0).unwrap();
        assert_eq!(theta, PI);
        let s = split_phase(theta);
        assert_eq!((s.m, s.phi), (1, 0.0));
        let theta = boundary_phase(&path, &free_model(1.0), 1.0, 1.0).unwrap();
        let s = split_phase(theta);
        assert_eq!(s.m, 0);
        assert!((s.phi - 1.0).abs() < 1e-15);
        assert!(boundary_phase(&path, &free_model(1.0), 0.0, 1.0).is_err());
        assert!(boundary_phase(&path, &free_model(1.0), 1.0, 2.0).is_err());
    }

    #[test]
    fn free_counts() {
        let path = DrivingPath::constant(0.0, 10.0, 0.01).unwrap();
        assert_eq!(count_eigenvalues_below(&path, &free_model(1.0), 3.5, 1.0).unwrap(), 1);
        assert_eq!(count_eigenvalues_below(&path, &free_model(10.0), PI, 10.0).unwrap(), 9);
    }

    #[test]
    fn lengths() {
        assert_eq!(choose_length(1.0, 100, 0.0).unwrap(), 100.0 * PI);
        assert_eq!(choose_length(4.0, 100, 1.0).unwrap(), (100.0 * PI + 1.0) / 2.0);
        let l = choose_length(2.5, 37, 0.3).unwrap();
        assert!((2.5f64.sqrt() * l - 37.0 * PI - 0.3).abs() < 1e-12);
        assert!(choose_length(1.0, 0, 0.0).is_err());
        assert!(choose_length(1.0, 3, PI).is_err());
    }

    #[test]
    fn free_atoms_form_a_clock() {
        let length = 100.0 * PI;
        let path = DrivingPath::constant(0.0, length, 0.01).unwrap();
        let w = locate_atoms(&path, &free_model(length), 1.0, length, 5.0).unwrap();
        let expect = [-PI, 0.0, PI];
        assert_eq!(w.atoms.len(), 3, "{:?}", w.atoms);
        for (a, e) in w.atoms.iter().zip(expect) {
            assert!((a - e).abs() < 1e-8);
        }
        assert!(!w.non_monotone);
        assert_eq!(w.boundary_phase_m, 100);

        let shifted = length + 0.5;
        let path = DrivingPath::constant(0.0, shifted, 0.01).unwrap();
        let w = locate_atoms(&path, &free_model(shifted), 1.0, shifted, 5.0).unwrap();
        for (a, e) in w.atoms.iter().zip([-PI - 0.5, -0.5, PI - 0.5]) {
            assert!((a - e).abs() < 1e-8, "{a} vs {e}");
        }
    }

    #[test]
    fn window_must_stay_at_positive_kappa() {
        let path = DrivingPath::constant(0.0, 10.0, 0.01).unwrap();
        assert!(locate_atoms(&path, &free_model(10.0), 1.0, 10.0, 20.0).is_err());
        assert!(locate_atoms(&path, &free_model(10.0), 1.0, 10.0, -1.0).is_err());
    }

    #[test]
    fn free_second_order_is_zero() {
        let length = 50.0 * PI;
        let path = DrivingPath::constant(0.0, length, 0.01).unwrap();
        let w = locate_atoms(&path, &free_model(length), 1.0, length, 4.0 * PI).unwrap();
        let x = second_order_spacings(&w, 0.75, 2).unwrap();
        assert_eq!(x.values.len(), 5);
        assert!(x.values.iter().all(|v| v.abs() < 1e-6));
        assert!(second_order_spacings(&w, 0.75, 6).is_err());
    }

    #[test]
    fn atom_count_matches_edge_phases() {
        let length = 300.0;
        for seed in 0..5 {
            let path = sample_driving_path(seed, length, 0.01).unwrap();
            let model = PotentialModel::coupling(0.5, length, PotentialShape::default()).unwrap();
            let solver = PruferSolver::new(&path, &model, length).unwrap();
            let w = locate_atoms_with(&solver, 1.0, 3.0 * PI, LocateOptions::default()).unwrap();
            let lo = solver.end_phase(1.0 - 3.0 * PI / length);
            let hi = solver.end_phase(1.0 + 3.0 * PI / length);
            if !w.non_monotone {
                assert_eq!(w.atoms.len() as i64, (hi / PI).floor() as i64 - (lo / PI).floor() as i64);
            }
            for (x, k) in w.atoms.iter().zip(&w.kappas) {
                let th = solver.end_phase(*k);
                let r = th / PI;
                assert!((r - r.round()).abs() < 1e-6, "phase {th} at atom {x}");
                assert!(x.abs() <= 3.0 * PI);
            }
            assert!(w.atoms.windows(2).all(|p| p[1] > p[0]));
        }
    }
}
