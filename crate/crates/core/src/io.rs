//! CSV and JSON output formats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::gbeta::BulkSample;
use crate::prufer::SpectrumWindow;
use crate::sde::{counting_from_phase, SdePath};

#[derive(Debug, Clone, Serialize)]
pub struct AtomRow {
    pub seed: u64,
    #[serde(rename = "L")]
    pub length: f64,
    pub alpha: Option<f64>,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub atom_x: f64,
    pub kappa: f64,
}

/// Sidecar metadata for one operator window.
#[derive(Debug, Clone, Serialize)]
pub struct WindowMeta {
    pub seed: u64,
    pub boundary_phase_m: i64,
    pub boundary_phase_phi: f64,
    pub flags: Vec<String>,
}

impl WindowMeta {
    pub fn of(seed: u64, w: &SpectrumWindow) -> Self {
        let mut flags = Vec::new();
        if w.non_monotone {
            flags.push("non_monotone".to_string());
        }
        Self {
            seed,
            boundary_phase_m: w.boundary_phase_m,
            boundary_phase_phi: w.boundary_phase_phi,
            flags,
        }
    }
}

pub fn atom_rows(seed: u64, alpha: Option<f64>, w: &SpectrumWindow) -> Vec<AtomRow> {
    w.atoms
        .iter()
        .zip(&w.kappas)
        .map(|(&x, &k)| AtomRow {
            seed,
            length: w.length,
            alpha,
            e0: w.e0,
            atom_x: x,
            kappa: k,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SdeRow {
    pub seed: u64,
    pub kind: &'static str,
    pub parameter: f64,
    pub t_end: f64,
    pub psi_end: f64,
    pub n_count: i64,
    pub residual: f64,
}

impl SdeRow {
    pub fn new(seed: u64, kind: &'static str, parameter: f64, t_end: f64, psi_end: f64) -> Self {
        let c = counting_from_phase(psi_end);
        Self {
            seed,
            kind,
            parameter,
            t_end,
            psi_end,
            n_count: c.count,
            residual: c.residual,
        }
    }

    pub fn of_path(seed: u64, p: &SdePath) -> Self {
        Self::new(seed, p.kind.name(), p.parameter, p.t_end(), p.end())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BulkRow {
    pub seed: u64,
    pub n: usize,
    pub beta: f64,
    pub mu: f64,
    pub atom: f64,
    pub halved_atom: f64,
}

pub fn bulk_rows(seed: u64, beta: f64, b: &BulkSample) -> Vec<BulkRow> {
    b.atoms
        .iter()
        .map(|&a| BulkRow {
            seed,
            n: b.n,
            beta,
            mu: b.mu,
            atom: a,
            halved_atom: a / 2.0,
        })
        .collect()
}

/// Writes `rows` with a header, which is emitted even when `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const ATOM_HEADER: &[&str] = &["seed", "L", "alpha", "E0", "atom_x", "kappa"];
pub const SDE_HEADER: &[&str] = &["seed", "kind", "parameter", "t_end", "psi_end", "n_count", "residual"];
pub const BULK_HEADER: &[&str] = &["seed", "n", "beta", "mu", "atom", "halved_atom"];

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
