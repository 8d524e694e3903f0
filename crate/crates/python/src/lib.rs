//! Python bindings for `beta_spectra_core`.

use std::f64::consts::PI;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use beta_spectra_core::experiment::{self, Experiment, ExperimentConfig};
use beta_spectra_core::potential::{self as pot, ModelConstants, PotentialModel, PotentialShape};
use beta_spectra_core::prufer::{self, LocateOptions, PruferSolver};
use beta_spectra_core::{gbeta, sde, stats, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Single-mode potential `F(x) = amplitude · cos(mode · x)`.
#[pyclass(name = "PotentialShape", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyShape(PotentialShape);

#[pymethods]
impl PyShape {
    #[new]
    #[pyo3(signature = (mode = 1, amplitude = std::f64::consts::SQRT_2))]
    fn new(mode: u32, amplitude: f64) -> PyResult<Self> {
        PotentialShape::new(mode, amplitude).map(Self).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> u32 {
        self.0.mode
    }

    #[getter]
    fn amplitude(&self) -> f64 {
        self.0.amplitude
    }

    fn __call__(&self, x: f64) -> f64 {
        self.0.eval(x)
    }

    /// Resolvent constants at the reference energy `e0`.
    fn constants(&self, e0: f64) -> PyResult<PyConstants> {
        pot::compute_constants(&self.0, e0).map(PyConstants).map_err(py_err)
    }

    /// Reference energy realizing `beta`.
    fn energy_for_beta(&self, beta: f64) -> PyResult<f64> {
        pot::solve_energy_for_beta(&self.0, beta).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("PotentialShape(mode={}, amplitude={})", self.0.mode, self.0.amplitude)
    }
}

#[pyclass(name = "ModelConstants", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyConstants(ModelConstants);

#[pymethods]
impl PyConstants {
    #[getter]
    fn e0(&self) -> f64 {
        self.0.e0
    }
    #[getter]
    fn c_e0(&self) -> f64 {
        self.0.c_e0
    }
    #[getter]
    fn c_0(&self) -> f64 {
        self.0.c_0
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }
    #[getter]
    fn d_e0(&self) -> f64 {
        self.0.d_e0
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConstants(e0={}, c_e0={}, beta={}, d_e0={})",
            self.0.e0, self.0.c_e0, self.0.beta, self.0.d_e0
        )
    }
}

/// Unfolded atoms of one operator window.
#[pyclass(name = "SpectrumWindow", frozen, get_all)]
struct PyWindow {
    atoms: Vec<f64>,
    kappas: Vec<f64>,
    length: f64,
    e0: f64,
    boundary_phase_m: i64,
    boundary_phase_phi: f64,
    non_monotone: bool,
}

/// Atoms of `−d²/dt² + q` on `[0, length]` within `[−window, window]`.
///
/// `family` is `"coupling"` (needs `alpha`) or `"decaying"`. The length
/// defaults to `choose_length(e0, m, 0)`.
#[pyfunction]
#[pyo3(signature = (seed, e0 = 1.0, alpha = 1.0, length = None, m = 600, window = 3.0 * PI, shape = None, family = "coupling", h = None))]
#[allow(clippy::too_many_arguments)]
fn operator_window(
    py: Python<'_>,
    seed: u64,
    e0: f64,
    alpha: f64,
    length: Option<f64>,
    m: u64,
    window: f64,
    shape: Option<PyShape>,
    family: &str,
    h: Option<f64>,
) -> PyResult<PyWindow> {
    let shape = shape.map(|s| s.0).unwrap_or_default();
    let length = match length {
        Some(l) => l,
        None => prufer::choose_length(e0, m, 0.0).map_err(py_err)?,
    };
    let model = match family {
        "coupling" => PotentialModel::coupling(alpha, length, shape).map_err(py_err)?,
        "decaying" => PotentialModel::decaying(shape),
        other => return Err(PyValueError::new_err(format!("unknown family {other:?}"))),
    };
    let step = h.unwrap_or_else(|| pot::default_mesh(e0.sqrt()));
    let w = py
        .detach(|| {
            let path = pot::sample_driving_path(seed, length, step)?;
            let solver = PruferSolver::new(&path, &model, length)?;
            prufer::locate_atoms_with(&solver, e0, window, LocateOptions::default())
        })
        .map_err(py_err)?;
    Ok(PyWindow {
        atoms: w.atoms,
        kappas: w.kappas,
        length: w.length,
        e0: w.e0,
        boundary_phase_m: w.boundary_phase_m,
        boundary_phase_phi: w.boundary_phase_phi,
        non_monotone: w.non_monotone,
    })
}

#[pyfunction]
fn choose_length(e0: f64, m: u64, beta_phase: f64) -> PyResult<f64> {
    prufer::choose_length(e0, m, beta_phase).map_err(py_err)
}

/// Sorted eigenvalues of one Gβ tridiagonal sample.
#[pyfunction]
fn gbeta_eigenvalues(n: usize, beta: f64, seed: u64) -> PyResult<Vec<f64>> {
    let t = gbeta::sample_gbeta_tridiagonal(n, beta, seed).map_err(py_err)?;
    gbeta::tridiagonal_eigenvalues(&t, gbeta::default_tol(n)).map_err(py_err)
}

/// Halved bulk-rescaled Gβ atoms within `[−window, window]`.
#[pyfunction]
#[pyo3(signature = (n, beta, seed, mu = 0.0, window = 3.0 * PI))]
fn gbeta_bulk_window(py: Python<'_>, n: usize, beta: f64, seed: u64, mu: f64, window: f64) -> PyResult<Vec<f64>> {
    py.detach(|| gbeta::sample_bulk_window(n, beta, mu, seed, window))
        .map(|b| b.halved)
        .map_err(py_err)
}

/// Terminal carousel phases `Ψ_{1−δ}(λ)` for each `λ`.
#[pyfunction]
#[pyo3(signature = (d, lambdas, seed, h0 = 1e-3, delta_cutoff = 1e-4))]
fn carousel_terminal(d: f64, lambdas: Vec<f64>, seed: u64, h0: f64, delta_cutoff: f64) -> PyResult<Vec<f64>> {
    let steps = sde::carousel_steps(h0, delta_cutoff).map_err(py_err)?;
    let noise = sde::NoiseBundle::sample(seed, steps, h0).map_err(py_err)?;
    sde::carousel_terminal(d, &lambdas, &noise, delta_cutoff).map_err(py_err)
}

/// Terminal Sine_β phases `α_T(λ)` for each `λ`.
#[pyfunction]
#[pyo3(signature = (beta, lambdas, seed, horizon = 30.0, step = 2e-3))]
fn sine_beta_terminal(beta: f64, lambdas: Vec<f64>, seed: u64, horizon: f64, step: f64) -> PyResult<Vec<f64>> {
    let steps = (horizon / step).ceil() as usize;
    let noise = sde::NoiseBundle::sample(seed, steps, step).map_err(py_err)?;
    sde::sine_beta_terminal(beta, &lambdas, &noise, horizon).map_err(py_err)
}

/// `round(ψ / 2π)`.
#[pyfunction]
fn count_from_phase(psi: f64) -> i64 {
    sde::counting_from_phase(psi).count
}

#[pyfunction]
fn ks_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::ks_distance(&a, &b).map_err(py_err)
}

/// Pooled central gaps of per-seed sorted atom lists.
#[pyfunction]
#[pyo3(signature = (samples, count = 2))]
fn central_gaps(samples: Vec<Vec<f64>>, count: usize) -> PyResult<Vec<f64>> {
    let batch = stats::AtomBatch::new("python", samples, None).map_err(py_err)?;
    stats::gaps_near_zero(&batch, count).map(|g| g.gaps).map_err(py_err)
}

/// Default configuration of `experiment` as JSON.
#[pyfunction]
fn default_config(experiment: &str) -> PyResult<String> {
    let e = Experiment::ALL
        .into_iter()
        .find(|e| e.name() == experiment)
        .ok_or_else(|| PyValueError::new_err(format!("unknown experiment {experiment:?}")))?;
    serde_json::to_string_pretty(&ExperimentConfig::preset(e)).map_err(|e| py_err(e.into()))
}

/// Runs an experiment from a JSON config and returns the report as JSON.
/// Output files are written only when `write` is true.
#[pyfunction]
#[pyo3(signature = (config, write = false))]
fn run_experiment(py: Python<'_>, config: &str, write: bool) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json_str(config).map_err(py_err)?;
    let report = py
        .detach(|| {
            if write {
                experiment::run(&cfg)
            } else {
                experiment::execute(&cfg).map(|o| o.report)
            }
        })
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| py_err(e.into()))
}

#[pymodule]
fn beta_spectra(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyShape>()?;
    m.add_class::<PyConstants>()?;
    m.add_class::<PyWindow>()?;
    m.add_function(wrap_pyfunction!(operator_window, m)?)?;
    m.add_function(wrap_pyfunction!(choose_length, m)?)?;
    m.add_function(wrap_pyfunction!(gbeta_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(gbeta_bulk_window, m)?)?;
    m.add_function(wrap_pyfunction!(carousel_terminal, m)?)?;
    m.add_function(wrap_pyfunction!(sine_beta_terminal, m)?)?;
    m.add_function(wrap_pyfunction!(count_from_phase, m)?)?;
    m.add_function(wrap_pyfunction!(ks_distance, m)?)?;
    m.add_function(wrap_pyfunction!(central_gaps, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
