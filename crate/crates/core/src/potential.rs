//! Random potentials driven by Brownian motion on the circle, and the
//! resolvent constants that set the strength of every limit law.
//!
//! The manifold is the circle of circumference 2π with normalized uniform
//! measure. The driving process has generator `½ d²/dx²`, i.e. it is a
//! standard Brownian motion wrapped onto `[0, 2π)`. The potential shape is a
//! single cosine mode `F(x) = A cos(kx)`, which diagonalizes the generator:
//! `L cos(kx) = -(k²/2) cos(kx)`. All constants below are closed forms under
//! that convention.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, range, Result};
use crate::rng::{stream, stream_rng};

/// The fixed compact manifold: a circle with normalized measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSpec {
    pub circumference: f64,
    /// Factor in front of `d²/dx²` in the generator.
    pub generator_factor: f64,
}

impl ManifoldSpec {
    pub const CIRCLE: ManifoldSpec = ManifoldSpec {
        circumference: TAU,
        generator_factor: 0.5,
    };

    /// Wrap a coordinate into `[0, circumference)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let w = x.rem_euclid(self.circumference);
        // rem_euclid can round up to the modulus itself for tiny negative x
        if w >= self.circumference {
            0.0
        } else {
            w
        }
    }

    /// Average of `f` over the manifold (normalized measure), trapezoid rule.
    pub fn mean_of(&self, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
        let dx = self.circumference / nodes as f64;
        (0..nodes).map(|j| f(j as f64 * dx)).sum::<f64>() / nodes as f64
    }
}

/// `F(x) = amplitude * cos(mode * x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialShape {
    pub mode: u32,
    pub amplitude: f64,
}

impl Default for PotentialShape {
    fn default() -> Self {
        Self {
            mode: 1,
            amplitude: std::f64::consts::SQRT_2,
        }
    }
}

impl PotentialShape {
    pub fn new(mode: u32, amplitude: f64) -> Result<Self> {
        if mode == 0 {
            return Err(param("potential mode must be >= 1 (F must have zero mean)"));
        }
        if !amplitude.is_finite() {
            return Err(param("potential amplitude must be finite"));
        }
        Ok(Self { mode, amplitude })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.mode as f64 * x).cos()
    }

    /// `⟨F²⟩` under the normalized measure.
    pub fn mean_square(&self) -> f64 {
        0.5 * self.amplitude * self.amplitude
    }

    fn k2(&self) -> f64 {
        let k = self.mode as f64;
        k * k
    }
}

/// A Brownian trajectory on the circle sampled on a uniform mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    pub step: f64,
    /// `increments[j]` moves `positions[j]` to `positions[j + 1]` (before wrapping).
    pub increments: Vec<f64>,
    pub positions: Vec<f64>,
    pub duration: f64,
}

impl DrivingPath {
    /// Build a path from a starting point and increments. The duration is
    /// `increments.len() * step` unless given explicitly.
    pub fn from_increments(start: f64, increments: Vec<f64>, step: f64, duration: f64) -> Result<Self> {
        validate_mesh(duration, step)?;
        let expected = mesh_points(duration, step);
        if increments.len() + 1 != expected {
            return Err(param(format!(
                "path with duration {duration} and step {step} needs {} increments, got {}",
                expected - 1,
                increments.len()
            )));
        }
        let circle = ManifoldSpec::CIRCLE;
        let mut positions = Vec::with_capacity(expected);
        let mut x = circle.wrap(start);
        positions.push(x);
        for &dx in &increments {
            x = circle.wrap(x + dx);
            positions.push(x);
        }
        Ok(Self {
            step,
            increments,
            positions,
            duration,
        })
    }

    /// A path frozen at `position` (all increments zero).
    pub fn constant(position: f64, duration: f64, step: f64) -> Result<Self> {
        validate_mesh(duration, step)?;
        let n = mesh_points(duration, step);
        Self::from_increments(position, vec![0.0; n - 1], step, duration)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Index of the mesh point at or below `t`.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.duration).contains(&t) {
            return Err(range(format!("t = {t} outside the path [0, {}]", self.duration)));
        }
        Ok(((t / self.step).floor() as usize).min(self.positions.len() - 1))
    }

    pub fn position_at(&self, t: f64) -> Result<f64> {
        Ok(self.positions[self.index_at(t)?])
    }

    /// Halve the mesh by Brownian-bridge interpolation. The coarse mesh
    /// points are kept exactly; midpoints are drawn from the bridge law with
    /// randomness keyed by `(seed, level)`.
    pub fn refine(&self, seed: u64, level: u64) -> Result<Self> {
        let half = 0.5 * self.step;
        let mut rng = stream_rng(seed, stream::PATH_REFINE + level);
        let bridge_sd = (half / 2.0).sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for &dx in &self.increments {
            let z: f64 = rng.sample(StandardNormal);
            let first = 0.5 * dx + bridge_sd * z;
            increments.push(first);
            increments.push(dx - first);
        }
        // a trailing partial interval keeps the coarse point count consistent
        let duration = self.duration;
        let expected = mesh_points(duration, half);
        while increments.len() + 1 < expected {
            let z: f64 = rng.sample(StandardNormal);
            increments.push(half.sqrt() * z);
        }
        increments.truncate(expected - 1);
        Self::from_increments(self.positions[0], increments, half, duration)
    }
}

fn validate_mesh(duration: f64, step: f64) -> Result<()> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(param(format!("duration must be positive, got {duration}")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(param(format!("step must be positive, got {step}")));
    }
    if step > duration {
        return Err(param(format!("step {step} exceeds duration {duration}")));
    }
    Ok(())
}

/// `floor(duration / step) + 1`, robust to `duration` being an exact multiple
/// of `step` up to rounding.
pub(crate) fn mesh_points(duration: f64, step: f64) -> usize {
    let ratio = duration / step;
    let nearest = ratio.round();
    let full = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.floor()
    };
    full as usize + 1
}

/// Sample a wrapped Brownian path with generator `½ d²/dx²`.
///
/// The starting point is uniform on the circle, so the path is stationary.
/// Increments are i.i.d. `N(0, step)`.
pub fn sample_driving_path(seed: u64, duration: f64, step: f64) -> Result<DrivingPath> {
    validate_mesh(duration, step)?;
    let n = mesh_points(duration, step);
    let mut rng = stream_rng(seed, stream::DRIVING_PATH);
    let start = rng.random::<f64>() * TAU;
    let sd = step.sqrt();
    let increments = (0..n - 1)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DrivingPath::from_increments(start, increments, step, duration)
}

/// Which operator family the potential belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `q(t) = length^{-alpha} F(X_t)` on `[0, length]`.
    Coupling { alpha: f64, length: f64 },
    /// `q(t) = a(t) F(X_t)` with `a(s) = 1` on `[0,1)` and `1/√s` beyond.
    Decaying,
    /// `q(t) = a(length - t) F(X_t)`: the decaying model seen from its right end.
    DecayingReversed { length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub family: PotentialFamily,
    pub shape: PotentialShape,
}

/// Envelope of the decaying model.
#[inline]
pub fn decay_envelope(s: f64) -> f64 {
    let s = s.abs();
    if s < 1.0 {
        1.0
    } else {
        1.0 / s.sqrt()
    }
}

impl PotentialModel {
    pub fn coupling(alpha: f64, length: f64, shape: PotentialShape) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(param(format!("alpha must be positive, got {alpha}")));
        }
        if !(length > 0.0) {
            return Err(param(format!("length must be positive, got {length}")));
        }
        Ok(Self {
            family: PotentialFamily::Coupling { alpha, length },
            shape,
        })
    }

    pub fn decaying(shape: PotentialShape) -> Self {
        Self {
            family: PotentialFamily::Decaying,
            shape,
        }
    }

    pub fn decaying_reversed(length: f64, shape: PotentialShape) -> Result<Self> {
        if !(length > 0.0) {
            return Err(param(format!("length must be positive, got {length}")));
        }
        Ok(Self {
            family: PotentialFamily::DecayingReversed { length },
            shape,
        })
    }

    /// Coupling exponent, if the family has one.
    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            PotentialFamily::Coupling { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Deterministic prefactor multiplying `F(X_t)`.
    #[inline]
    pub fn envelope(&self, t: f64) -> f64 {
        match self.family {
            PotentialFamily::Coupling { alpha, length } => length.powf(-alpha),
            PotentialFamily::Decaying => decay_envelope(t),
            PotentialFamily::DecayingReversed { length } => decay_envelope(length - t),
        }
    }

    /// Potential value at an explicit manifold point.
    #[inline]
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.envelope(t) * self.shape.eval(x)
    }
}

/// `q(t)` with the path held constant between mesh points.
pub fn potential_at(path: &DrivingPath, model: &PotentialModel, t: f64) -> Result<f64> {
    let x = path.position_at(t)?;
    Ok(model.value(t, x))
}

/// Scalar `c` with `(L + 2iκ)^{-1} F = c F` for the single-mode shape; at
/// `κ = 0` the coefficient of `L^{-1}(F - ⟨F⟩)`.
pub fn resolvent_coefficient(shape: &PotentialShape, kappa: f64) -> Complex64 {
    let eig = -0.5 * shape.k2();
    if kappa == 0.0 {
        Complex64::new(1.0 / eig, 0.0)
    } else {
        Complex64::new(eig, 2.0 * kappa).inv()
    }
}

/// Resolvent-derived scalars at a reference energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub e0: f64,
    pub kappa0: f64,
    /// `∫ |∇ (L + 2i√E0)^{-1} F|²`
    pub c_e0: f64,
    /// `∫ |∇ L^{-1} F|²`
    pub c_0: f64,
    pub fg_inner_re: f64,
    pub fg_inner_im: f64,
    /// `8 E0 / C(E0)`
    pub beta: f64,
    /// `√(C(E0) / (2 E0))`
    pub d_e0: f64,
}

impl ModelConstants {
    pub fn fg_inner(&self) -> Complex64 {
        Complex64::new(self.fg_inner_re, self.fg_inner_im)
    }

    /// Constant drift correction of the critical phase SDE,
    /// `-Re(i ⟨F g⟩ / (2 E0))`.
    pub fn schtau_drift_correction(&self) -> f64 {
        -(Complex64::i() * self.fg_inner() / (2.0 * self.e0)).re
    }
}

/// `C(E) = ∫|∇ g_{√E}|²` in closed form.
pub fn noise_strength(shape: &PotentialShape, e: f64) -> f64 {
    let kappa = e.max(0.0).sqrt();
    resolvent_coefficient(shape, kappa).norm_sqr() * shape.mean_square() * shape.k2()
}

/// `β(E) = 8E / C(E)`.
pub fn beta_of_energy(shape: &PotentialShape, e: f64) -> f64 {
    8.0 * e / noise_strength(shape, e)
}

pub fn compute_constants(shape: &PotentialShape, e0: f64) -> Result<ModelConstants> {
    if !(e0 > 0.0 && e0.is_finite()) {
        return Err(param(format!("reference energy must be positive, got {e0}")));
    }
    if shape.amplitude == 0.0 {
        return Err(param("constants are undefined for a zero potential"));
    }
    let kappa0 = e0.sqrt();
    let c_e0 = noise_strength(shape, e0);
    let c_0 = resolvent_coefficient(shape, 0.0).norm_sqr() * shape.mean_square() * shape.k2();
    let fg = resolvent_coefficient(shape, kappa0) * shape.mean_square();
    Ok(ModelConstants {
        e0,
        kappa0,
        c_e0,
        c_0,
        fg_inner_re: fg.re,
        fg_inner_im: fg.im,
        beta: 8.0 * e0 / c_e0,
        d_e0: (c_e0 / (2.0 * e0)).sqrt(),
    })
}

/// Reference energy realizing a target β, by bisection on the increasing
/// map `E ↦ 8E / C(E)`.
pub fn solve_energy_for_beta(shape: &PotentialShape, beta_target: f64) -> Result<f64> {
    if !(beta_target > 0.0 && beta_target.is_finite()) {
        return Err(param(format!("beta must be positive, got {beta_target}")));
    }
    if shape.amplitude == 0.0 {
        return Err(param("beta is undefined for a zero potential"));
    }
    let beta = |e: f64| beta_of_energy(shape, e);
    let mut hi = 1.0;
    while beta(hi) < beta_target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let b = beta(mid);
        if (b - beta_target).abs() <= 1e-12 * beta_target.max(1.0) {
            return Ok(mid);
        }
        if b < beta_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (blo, bhi) = (beta(lo), beta(hi));
    Ok(if (blo - beta_target).abs() <= (bhi - beta_target).abs() { lo } else { hi })
}

/// Closed-form `β = 2` energy for `F = √2 cos x`: the positive root of
/// `16E² + E − 1 = 0`.
pub fn beta_two_energy_unit_mode() -> f64 {
    (-1.0 + 65f64.sqrt()) / 32.0
}

/// Mean of `F` over the circle by the trapezoid rule.
pub fn shape_mean(shape: &PotentialShape, nodes: usize) -> f64 {
    ManifoldSpec::CIRCLE.mean_of(nodes, |x| shape.eval(x))
}

/// Half a period of the free oscillation, used for default meshes.
pub fn default_mesh(kappa0: f64) -> f64 {
    0.01f64.min(0.02 / kappa0)
}
