//! Level statistics of one-dimensional random Schrödinger operators.
//!
//! Four routes to the same limiting point processes:
//!
//! * [`prufer`]: eigenvalues of `-d²/dt² + q(t)` on `[0, L]` with a potential
//!   driven by Brownian motion on the circle ([`potential`]), located through
//!   Prüfer phases and Sturm oscillation;
//! * [`sde`]: the limiting phase SDEs (critical coupling, carousel, Sine_β);
//! * [`gbeta`]: the tridiagonal Gaussian β-ensemble;
//! * [`stats`]: gap, counting, covariance and Kolmogorov–Smirnov statistics
//!   comparing them.
//!
//! [`experiment`] wires these into reproducible Monte Carlo runs.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod gbeta;
pub mod io;
pub mod potential;
pub mod prufer;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use potential::{
    compute_constants, potential_at, resolvent_coefficient, sample_driving_path, solve_energy_for_beta,
    DrivingPath, ModelConstants, PotentialFamily, PotentialModel, PotentialShape,
};
pub use prufer::{
    boundary_phase, choose_length, count_eigenvalues_below, integrate_prufer, locate_atoms,
    second_order_spacings, PruferPath, PruferSolver, SecondOrderSample, SpectrumWindow,
};
