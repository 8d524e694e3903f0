//! Reproducible Monte Carlo experiments.
//!
//! A run fans trials out over a bounded rayon pool. Trial `i` of route `r`
//! draws everything from `trial_seed(route_base(base_seed, r), i)`, and
//! results are gathered in trial order, so outputs do not depend on the
//! number of workers.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{param, Error, Result};
use crate::gbeta::sample_bulk_window;
use crate::io::{self, AtomRow, BulkRow, SdeRow, WindowMeta};
use crate::potential::{
    compute_constants, default_mesh, sample_driving_path, solve_energy_for_beta, ModelConstants, PotentialModel,
    PotentialShape,
};
use crate::prufer::{
    choose_length, left_phase_mod_2pi, locate_atoms_with, second_order_spacings, LocateOptions, PruferSolver,
    SecondOrderSample, SpectrumWindow,
};
use crate::rng::{route_base, trial_seed};
use crate::sde::{
    carousel_atoms, carousel_steps, carousel_terminal, schtau_atoms_refined, sine_beta_terminal,
    NoiseBundle,
};
use crate::stats::{
    covariance_lags, ecdf, gaps_near_zero, ks_distance, ks_distance_counts, mean_with_error, phase_uniformity,
    sample_sd, AtomBatch, StatRecord,
};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "BETA_SPECTRA_WORKERS";
/// Runs whose flagged fraction exceeds this fail.
pub const MAX_FLAG_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Clock,
    SecondOrder,
    SchtauCompare,
    CarouselVsSineb,
    GbetaCoincidence,
    PhaseUniformity,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Clock,
        Experiment::SecondOrder,
        Experiment::SchtauCompare,
        Experiment::CarouselVsSineb,
        Experiment::GbetaCoincidence,
        Experiment::PhaseUniformity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Clock => "clock",
            Experiment::SecondOrder => "second_order",
            Experiment::SchtauCompare => "schtau_compare",
            Experiment::CarouselVsSineb => "carousel_vs_sineb",
            Experiment::GbetaCoincidence => "gbeta_coincidence",
            Experiment::PhaseUniformity => "phase_uniformity",
        }
    }
}

/// Every knob of an experiment. Optional fields are derived when absent:
/// `e0` from `beta_target`, `length` from `(e0, m, beta_phase)`, `h` from `κ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub alpha: f64,
    pub e0: Option<f64>,
    pub beta_target: Option<f64>,
    pub mode: u32,
    pub amplitude: f64,
    pub length: Option<f64>,
    pub m: u64,
    pub beta_phase: f64,
    pub window: f64,
    pub h: Option<f64>,
    pub tol: f64,
    pub sde_step: f64,
    pub sde_tol: f64,
    pub h0: f64,
    pub delta_cutoff: f64,
    pub horizon: f64,
    pub lambdas: Vec<f64>,
    pub gap_count: usize,
    pub order: usize,
    pub lags: Vec<i64>,
    pub exponent: f64,
    pub gbeta_n: usize,
    pub gbeta_mu: f64,
    pub trials: usize,
    pub sde_trials: Option<usize>,
    pub base_seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for `experiment`, at the scale used for acceptance.
    pub fn preset(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            alpha: 1.0,
            e0: Some(1.0),
            beta_target: None,
            mode: 1,
            amplitude: 2f64.sqrt(),
            length: None,
            m: 600,
            beta_phase: 0.0,
            window: 3.0 * PI,
            h: None,
            tol: 1e-10,
            sde_step: 1e-3,
            sde_tol: 1e-8,
            h0: 1e-3,
            delta_cutoff: 1e-4,
            horizon: 1.0,
            lambdas: vec![2.0 * PI, 4.0 * PI],
            gap_count: 2,
            order: 3,
            lags: vec![0, 1, 3],
            exponent: 0.5,
            gbeta_n: 400,
            gbeta_mu: 0.0,
            trials: 200,
            sde_trials: None,
            base_seed: 20_240_601,
            workers: 0,
            out_dir: PathBuf::from("out").join(experiment.name()),
        };
        match experiment {
            Experiment::Clock => base,
            Experiment::SecondOrder => Self {
                alpha: 0.75,
                m: 1200,
                window: 6.0 * PI,
                trials: 2000,
                ..base
            },
            Experiment::SchtauCompare => Self {
                alpha: 0.5,
                m: 1200,
                trials: 1000,
                sde_trials: Some(1000),
                ..base
            },
            Experiment::CarouselVsSineb => Self {
                e0: None,
                beta_target: Some(2.0),
                horizon: 30.0,
                sde_step: 2e-3,
                trials: 10_000,
                ..base
            },
            Experiment::GbetaCoincidence => Self {
                e0: None,
                beta_target: Some(2.0),
                length: Some(3000.0),
                sde_tol: 1e-6,
                trials: 1000,
                ..base
            },
            Experiment::PhaseUniformity => Self {
                length: Some(2000.0),
                trials: 1000,
                ..base
            },
        }
    }

    /// Parses a JSON object naming an `experiment`; keys not given take the
    /// preset values.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(given) = value else {
            return Err(config_error("<root>", "configuration must be a JSON object"));
        };
        let experiment = given
            .get("experiment")
            .ok_or_else(|| config_error("experiment", "missing"))?;
        let experiment: Experiment = serde_json::from_value(experiment.clone())
            .map_err(|e| config_error("experiment", &e.to_string()))?;
        let Value::Object(mut merged) = serde_json::to_value(Self::preset(experiment))? else {
            unreachable!("config serializes to an object");
        };
        for (key, v) in given {
            if !merged.contains_key(&key) {
                return Err(config_error(&key, "unknown key"));
            }
            merged.insert(key, v);
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged)).map_err(|e| config_error("<value>", &e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_error(key, &format!("must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("window", self.window)?;
        positive("tol", self.tol)?;
        positive("sde_step", self.sde_step)?;
        positive("sde_tol", self.sde_tol)?;
        positive("h0", self.h0)?;
        positive("horizon", self.horizon)?;
        if self.amplitude < 0.0 || !self.amplitude.is_finite() {
            return Err(config_error("amplitude", "must be finite and non-negative"));
        }
        if self.mode == 0 {
            return Err(config_error("mode", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(config_error("trials", "must be at least 1"));
        }
        if self.gap_count == 0 {
            return Err(config_error("gap_count", "must be at least 1"));
        }
        match (self.e0, self.beta_target) {
            (Some(_), Some(_)) => return Err(config_error("beta_target", "give either e0 or beta_target, not both")),
            (None, None) => return Err(config_error("e0", "give either e0 or beta_target")),
            (Some(e), None) => positive("e0", e)?,
            (None, Some(b)) => positive("beta_target", b)?,
        }
        if let Some(l) = self.length {
            positive("length", l)?;
        }
        if let Some(h) = self.h {
            positive("h", h)?;
        }
        if !(0.0..PI).contains(&self.beta_phase) {
            return Err(config_error("beta_phase", "must lie in [0, π)"));
        }
        if !(self.delta_cutoff > 0.0 && self.delta_cutoff < 0.1) {
            return Err(config_error("delta_cutoff", "must lie in (0, 0.1)"));
        }
        if !(self.exponent > 0.0 && self.exponent < 1.0) {
            return Err(config_error("exponent", "must lie in (0, 1)"));
        }
        if self.gbeta_n < 2 {
            return Err(config_error("gbeta_n", "must be at least 2"));
        }
        if self.experiment == Experiment::CarouselVsSineb && self.lambdas.is_empty() {
            return Err(config_error("lambdas", "must not be empty"));
        }
        Ok(())
    }

    pub fn shape(&self) -> Result<PotentialShape> {
        PotentialShape::new(self.mode, self.amplitude)
    }

    pub fn resolved_e0(&self) -> Result<f64> {
        match (self.e0, self.beta_target) {
            (Some(e), _) => Ok(e),
            (None, Some(b)) => solve_energy_for_beta(&self.shape()?, b),
            (None, None) => Err(config_error("e0", "give either e0 or beta_target")),
        }
    }

    pub fn resolved_length(&self, e0: f64) -> Result<f64> {
        match self.length {
            Some(l) => Ok(l),
            None => choose_length(e0, self.m, self.beta_phase),
        }
    }

    pub fn resolved_step(&self, e0: f64) -> f64 {
        self.h.unwrap_or_else(|| default_mesh(e0.sqrt()))
    }

    pub fn sde_trial_count(&self) -> usize {
        self.sde_trials.unwrap_or(self.trials)
    }

    /// Worker count after applying [`WORKERS_ENV`]; 0 means one per core.
    pub fn effective_workers(&self) -> usize {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(self.workers)
    }
}

fn config_error(key: &str, reason: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

/// Derived quantities echoed next to the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub e0: f64,
    pub length: f64,
    pub h: f64,
    pub constants: Option<ModelConstants>,
}

/// One pass/fail criterion of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("<= {limit}"),
            passed: value <= limit,
        }
    }

    fn within(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("{target} ± {tol}"),
            passed: (value - target).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlagSummary {
    pub flagged: usize,
    pub total: usize,
    pub rate: f64,
    pub notes: Vec<String>,
}

impl FlagSummary {
    fn add(&mut self, route: &str, flagged: usize, total: usize) {
        self.flagged += flagged;
        self.total += total;
        self.rate = if self.total == 0 { 0.0 } else { self.flagged as f64 / self.total as f64 };
        if flagged > 0 {
            self.notes.push(format!("{route}: {flagged} of {total} trials flagged"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub statistics: Vec<StatRecord>,
    pub checks: Vec<Check>,
    pub flags: FlagSummary,
    pub passed: bool,
}

/// Samples kept for plotting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotData {
    /// `(source, gaps)`.
    pub gaps: Vec<(String, Vec<f64>)>,
    /// `(source, λ, counts)`.
    pub counts: Vec<(String, f64, Vec<u64>)>,
    /// `(source, values)` for any other scalar sample.
    pub samples: Vec<(String, Vec<f64>)>,
}

/// Everything a run produces before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub atoms: Vec<AtomRow>,
    pub windows: Vec<WindowMeta>,
    pub sde: Vec<SdeRow>,
    pub sde_atoms: Vec<(u64, String, f64)>,
    pub bulk: Vec<BulkRow>,
    pub plot: PlotData,
}

impl Outcome {
    fn new(report: Report) -> Self {
        Self {
            report,
            atoms: Vec::new(),
            windows: Vec::new(),
            sde: Vec::new(),
            sde_atoms: Vec::new(),
            bulk: Vec::new(),
            plot: PlotData::default(),
        }
    }
}

/// Everything needed to compute operator windows for many seeds.
#[derive(Debug, Clone)]
pub struct OperatorSetup {
    pub model: PotentialModel,
    pub e0: f64,
    pub length: f64,
    pub step: f64,
    pub window: f64,
    pub options: LocateOptions,
}

impl OperatorSetup {
    pub fn window(&self, seed: u64) -> Result<SpectrumWindow> {
        let path = sample_driving_path(seed, self.length, self.step)?;
        let solver = PruferSolver::new(&path, &self.model, self.length)?;
        locate_atoms_with(&solver, self.e0, self.window, self.options)
    }
}

struct Context {
    cfg: ExperimentConfig,
    shape: PotentialShape,
    resolved: Resolved,
    pool: rayon::ThreadPool,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let shape = cfg.shape()?;
        let e0 = cfg.resolved_e0()?;
        let length = cfg.resolved_length(e0)?;
        let constants = if shape.amplitude > 0.0 {
            Some(compute_constants(&shape, e0)?)
        } else {
            None
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.effective_workers())
            .build()
            .map_err(|e| param(e.to_string()))?;
        Ok(Self {
            cfg: cfg.clone(),
            shape,
            resolved: Resolved {
                e0,
                length,
                h: cfg.resolved_step(e0),
                constants,
            },
            pool,
        })
    }

    fn constants(&self) -> Result<&ModelConstants> {
        self.resolved
            .constants
            .as_ref()
            .ok_or_else(|| config_error("amplitude", "this experiment needs a non-zero potential"))
    }

    fn seeds(&self, route: u64, count: usize) -> Vec<u64> {
        let base = route_base(self.cfg.base_seed, route);
        (0..count as u64).map(|i| trial_seed(base, i)).collect()
    }

    /// Runs `f` on every seed inside the pool, preserving order.
    fn map<T: Send>(&self, seeds: &[u64], f: impl Fn(u64) -> T + Sync) -> Vec<T> {
        self.pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
    }

    fn operator(&self, model: PotentialModel) -> OperatorSetup {
        OperatorSetup {
            model,
            e0: self.resolved.e0,
            length: self.resolved.length,
            step: self.resolved.h,
            window: self.cfg.window,
            options: LocateOptions {
                relative_tol: self.cfg.tol,
                ..LocateOptions::default()
            },
        }
    }

    fn coupling(&self) -> Result<OperatorSetup> {
        Ok(self.operator(PotentialModel::coupling(self.cfg.alpha, self.resolved.length, self.shape)?))
    }

    fn report(&self) -> Report {
        Report {
            experiment: self.cfg.experiment,
            config: self.cfg.clone(),
            resolved: self.resolved.clone(),
            statistics: Vec::new(),
            checks: Vec::new(),
            flags: FlagSummary::default(),
            passed: false,
        }
    }
}

/// Operator windows for every seed, flagged ones set aside.
struct OperatorBatch {
    windows: Vec<(u64, SpectrumWindow)>,
    flagged: usize,
    total: usize,
}

fn run_operator(ctx: &Context, setup: &OperatorSetup, route: u64, count: usize, out: &mut Outcome) -> Result<OperatorBatch> {
    let seeds = ctx.seeds(route, count);
    let results = ctx.map(&seeds, |s| setup.window(s));
    let alpha = setup.model.alpha();
    let mut windows = Vec::with_capacity(count);
    let mut flagged = 0;
    for (seed, r) in seeds.into_iter().zip(results) {
        let w = r?;
        out.atoms.extend(io::atom_rows(seed, alpha, &w));
        out.windows.push(WindowMeta::of(seed, &w));
        if w.non_monotone {
            flagged += 1;
        } else {
            windows.push((seed, w));
        }
    }
    Ok(OperatorBatch { windows, flagged, total: count })
}

impl OperatorBatch {
    fn atoms(&self, source: &str) -> Result<AtomBatch> {
        let window = self.windows.first().map(|(_, w)| w.window);
        AtomBatch::new(source, self.windows.iter().map(|(_, w)| w.atoms.clone()).collect(), window)
    }
}

fn gap_record(source: &str, gaps: &[f64], trials: usize) -> StatRecord {
    let (mean, se) = mean_with_error(gaps);
    StatRecord {
        statistic: "mean_gap".into(),
        source_a: source.into(),
        source_b: None,
        value: mean,
        std_error: Some(se),
        trials,
        params: json!({ "gaps": gaps.len(), "sd": sample_sd(gaps) }),
    }
}

fn ks_record(a: &str, b: &str, value: f64, trials: usize, params: Value) -> StatRecord {
    StatRecord {
        statistic: "ks_distance".into(),
        source_a: a.into(),
        source_b: Some(b.into()),
        value,
        std_error: None,
        trials,
        params,
    }
}

/// Central gaps of a batch, recording the skip rate as a flag.
fn central_gaps(batch: &AtomBatch, count: usize, flags: &mut FlagSummary) -> Result<Vec<f64>> {
    let g = gaps_near_zero(batch, count)?;
    flags.add(&format!("{} (too few atoms)", batch.source), g.skipped, batch.len());
    Ok(g.gaps)
}

fn clock(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let setup = ctx.coupling()?;
    let ops = run_operator(ctx, &setup, 0, ctx.cfg.trials, out)?;
    let r = &mut out.report;
    r.flags.add("operator (non-monotone)", ops.flagged, ops.total);
    let gaps = central_gaps(&ops.atoms("operator")?, ctx.cfg.gap_count, &mut r.flags)?;
    if gaps.is_empty() {
        return Err(Error::Insufficient("no gaps collected".into()));
    }
    r.statistics.push(gap_record("operator", &gaps, ops.windows.len()));
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    r.checks.push(Check::within("mean central gap", mean, PI, 0.02));
    r.checks.push(Check::at_most("sd of central gaps", sample_sd(&gaps), 0.05));
    out.plot.gaps.push(("operator".into(), gaps));
    Ok(())
}

/// `C(E0)/(8E0)` times `2, −1, 0` by lag.
pub fn covariance_target(constants: &ModelConstants, lag: i64) -> f64 {
    let unit = constants.c_e0 / (8.0 * constants.e0);
    match lag.abs() {
        0 => 2.0 * unit,
        1 => -unit,
        _ => 0.0,
    }
}

fn second_order(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let constants = *ctx.constants()?;
    let setup = ctx.coupling()?;
    let ops = run_operator(ctx, &setup, 0, ctx.cfg.trials, out)?;
    let r = &mut out.report;
    r.flags.add("operator (non-monotone)", ops.flagged, ops.total);
    let mut samples: Vec<SecondOrderSample> = Vec::with_capacity(ops.windows.len());
    let mut short = 0;
    for (_, w) in &ops.windows {
        match second_order_spacings(w, ctx.cfg.alpha, ctx.cfg.order) {
            Ok(s) => samples.push(s),
            Err(Error::Range(_)) | Err(Error::Insufficient(_)) => short += 1,
            Err(e) => return Err(e),
        }
    }
    r.flags.add("operator (too few atoms)", short, ops.windows.len());
    let reports = covariance_lags(&samples, &ctx.cfg.lags)?;
    for rep in &reports {
        let target = covariance_target(&constants, rep.lag);
        r.statistics.push(StatRecord {
            statistic: format!("cov_x0_x{}", rep.lag),
            source_a: "operator".into(),
            source_b: None,
            value: rep.estimate,
            std_error: Some(rep.std_error),
            trials: rep.trials,
            params: json!({ "target": target, "degenerate": rep.degenerate }),
        });
        r.checks.push(Check {
            name: format!("Cov(X(0), X({})) within 3 SE of target", rep.lag),
            value: rep.estimate,
            bound: format!("{target} ± 3 × {}", rep.std_error),
            passed: rep.covers(target, 3.0),
        });
    }
    out.plot.samples.push(("x0".into(), samples.iter().filter_map(|s| s.get(0)).collect()));
    Ok(())
}

fn schtau_compare(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let constants = *ctx.constants()?;
    let setup = ctx.coupling()?;
    let ops = run_operator(ctx, &setup, 0, ctx.cfg.trials, out)?;
    out.report.flags.add("operator (non-monotone)", ops.flagged, ops.total);

    let cfg = &ctx.cfg;
    let steps = (cfg.horizon / cfg.sde_step).ceil() as usize;
    let seeds = ctx.seeds(1, cfg.sde_trial_count());
    let results = ctx.map(&seeds, |s| {
        let noise = NoiseBundle::sample(s, steps, cfg.sde_step)?;
        schtau_atoms_refined(&constants, &noise, cfg.horizon, cfg.beta_phase, cfg.window, PI / 8.0, cfg.sde_tol)
    });
    let mut sde_samples = Vec::new();
    let mut flagged = 0;
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(atoms) => {
                out.sde_atoms.extend(atoms.iter().map(|&a| (*seed, "schtau".to_string(), a)));
                sde_samples.push(atoms);
            }
            Err(Error::NonMonotone(_)) => flagged += 1,
            Err(e) => return Err(e),
        }
    }
    let r = &mut out.report;
    r.flags.add("schtau (non-monotone)", flagged, seeds.len());
    let op_gaps = central_gaps(&ops.atoms("operator")?, cfg.gap_count, &mut r.flags)?;
    let sde_gaps = central_gaps(&AtomBatch::new("schtau", sde_samples, Some(cfg.window))?, cfg.gap_count, &mut r.flags)?;
    r.statistics.push(gap_record("operator", &op_gaps, ops.windows.len()));
    r.statistics.push(gap_record("schtau", &sde_gaps, seeds.len() - flagged));
    let d = ks_distance(&op_gaps, &sde_gaps)?;
    r.statistics.push(ks_record("operator", "schtau", d, cfg.trials, json!({ "gaps": "central" })));
    r.checks.push(Check::at_most("KS(operator gaps, schtau gaps)", d, 0.1));
    out.plot.gaps.push(("operator".into(), op_gaps));
    out.plot.gaps.push(("schtau".into(), sde_gaps));
    Ok(())
}

fn carousel_vs_sineb(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let constants = *ctx.constants()?;
    let cfg = &ctx.cfg;
    let d = constants.d_e0;
    let beta = constants.beta;
    let lambdas = cfg.lambdas.clone();
    let doubled: Vec<f64> = lambdas.iter().map(|l| 2.0 * l).collect();

    let c_steps = carousel_steps(cfg.h0, cfg.delta_cutoff)?;
    let c_seeds = ctx.seeds(0, cfg.trials);
    let car = ctx.map(&c_seeds, |s| -> Result<Vec<f64>> {
        let noise = NoiseBundle::sample(s, c_steps, cfg.h0)?;
        carousel_terminal(d, &lambdas, &noise, cfg.delta_cutoff)
    });
    let s_steps = (cfg.horizon / cfg.sde_step).ceil() as usize;
    let s_seeds = ctx.seeds(1, cfg.sde_trial_count());
    let sb = ctx.map(&s_seeds, |s| -> Result<Vec<f64>> {
        let noise = NoiseBundle::sample(s, s_steps, cfg.sde_step)?;
        sine_beta_terminal(beta, &doubled, &noise, cfg.horizon)
    });

    let t_car = 1.0 - cfg.delta_cutoff;
    let mut n_car = vec![Vec::with_capacity(cfg.trials); lambdas.len()];
    for (seed, r) in c_seeds.iter().zip(car) {
        for (j, psi) in r?.into_iter().enumerate() {
            let row = SdeRow::new(*seed, "carousel", lambdas[j], t_car, psi);
            n_car[j].push(row.n_count.max(0) as u64);
            out.sde.push(row);
        }
    }
    let mut n_sb = vec![Vec::with_capacity(s_seeds.len()); lambdas.len()];
    for (seed, r) in s_seeds.iter().zip(sb) {
        for (j, psi) in r?.into_iter().enumerate() {
            let row = SdeRow::new(*seed, "sinebeta", doubled[j], cfg.horizon, psi);
            n_sb[j].push(row.n_count.max(0) as u64);
            out.sde.push(row);
        }
    }
    let r = &mut out.report;
    for (j, &lam) in lambdas.iter().enumerate() {
        let ks = ks_distance_counts(&n_car[j], &n_sb[j])?;
        let params = json!({ "lambda": lam, "sine_beta_lambda": doubled[j], "beta": beta, "D": d });
        r.statistics.push(ks_record("carousel", "sinebeta", ks, cfg.trials, params));
        r.checks.push(Check::at_most(format!("KS(N_carousel, N_sinebeta) at λ = {lam:.6}"), ks, 0.05));
        let counts: Vec<f64> = n_car[j].iter().map(|&v| v as f64).collect();
        let (mean, se) = mean_with_error(&counts);
        let expected = lam / PI;
        r.statistics.push(StatRecord {
            statistic: "mean_count".into(),
            source_a: "carousel".into(),
            source_b: None,
            value: mean,
            std_error: Some(se),
            trials: counts.len(),
            params: json!({ "lambda": lam, "expected": expected }),
        });
        if (lam - 4.0 * PI).abs() < 1e-9 {
            r.checks.push(Check::within("mean N_carousel(4π)", mean, expected, 0.05 * expected));
        }
        out.plot.counts.push(("carousel".into(), lam, n_car[j].clone()));
        out.plot.counts.push(("sinebeta".into(), lam, n_sb[j].clone()));
    }
    Ok(())
}

fn gbeta_coincidence(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let constants = *ctx.constants()?;
    let cfg = &ctx.cfg;
    let setup = ctx.operator(PotentialModel::decaying(ctx.shape));
    let ops = run_operator(ctx, &setup, 0, cfg.trials, out)?;
    out.report.flags.add("decaying operator (non-monotone)", ops.flagged, ops.total);

    let g_seeds = ctx.seeds(1, cfg.trials);
    let bulk = ctx.map(&g_seeds, |s| sample_bulk_window(cfg.gbeta_n, constants.beta, cfg.gbeta_mu, s, cfg.window));
    let mut g_samples = Vec::with_capacity(cfg.trials);
    for (seed, b) in g_seeds.iter().zip(bulk) {
        let b = b?;
        out.bulk.extend(io::bulk_rows(*seed, constants.beta, &b));
        g_samples.push(b.halved);
    }

    let c_steps = carousel_steps(cfg.h0, cfg.delta_cutoff)?;
    let c_seeds = ctx.seeds(2, cfg.sde_trial_count());
    let car = ctx.map(&c_seeds, |s| -> Result<Vec<f64>> {
        let noise = NoiseBundle::sample(s, c_steps, cfg.h0)?;
        carousel_atoms(constants.d_e0, &noise, cfg.delta_cutoff, cfg.window, PI / 8.0, cfg.sde_tol)
    });
    let mut c_samples = Vec::new();
    let mut flagged = 0;
    for (seed, r) in c_seeds.iter().zip(car) {
        match r {
            Ok(atoms) => {
                out.sde_atoms.extend(atoms.iter().map(|&a| (*seed, "carousel".to_string(), a)));
                c_samples.push(atoms);
            }
            Err(Error::NonMonotone(_)) => flagged += 1,
            Err(e) => return Err(e),
        }
    }
    let r = &mut out.report;
    r.flags.add("carousel (non-monotone count)", flagged, c_seeds.len());

    let routes = [
        ("decaying_operator", ops.atoms("decaying_operator")?),
        ("gbeta", AtomBatch::new("gbeta", g_samples, Some(cfg.window))?),
        ("carousel", AtomBatch::new("carousel", c_samples, Some(cfg.window))?),
    ];
    let mut gaps = Vec::new();
    for (name, batch) in &routes {
        let g = central_gaps(batch, cfg.gap_count, &mut r.flags)?;
        r.statistics.push(gap_record(name, &g, batch.len()));
        gaps.push((name.to_string(), g));
    }
    for i in 0..gaps.len() {
        for j in i + 1..gaps.len() {
            let d = ks_distance(&gaps[i].1, &gaps[j].1)?;
            let params = json!({ "beta": constants.beta, "e0": constants.e0 });
            r.statistics.push(ks_record(&gaps[i].0, &gaps[j].0, d, cfg.trials, params));
            r.checks.push(Check::at_most(format!("KS({} gaps, {} gaps)", gaps[i].0, gaps[j].0), d, 0.1));
        }
    }
    out.plot.gaps = gaps;
    Ok(())
}

fn phase_uniformity_run(ctx: &Context, out: &mut Outcome) -> Result<()> {
    let cfg = &ctx.cfg;
    let n = ctx.resolved.length;
    let kappa = ctx.resolved.e0.sqrt();
    let step = ctx.resolved.h;
    let seeds = ctx.seeds(0, cfg.trials);
    let shape = ctx.shape;
    let phases = ctx.map(&seeds, |s| -> Result<f64> {
        let path = sample_driving_path(s, n, step)?;
        left_phase_mod_2pi(&path, &shape, n, cfg.exponent, kappa)
    });
    let phases: Vec<f64> = phases.into_iter().collect::<Result<_>>()?;
    let d = phase_uniformity(&phases)?;
    let r = &mut out.report;
    r.statistics.push(StatRecord {
        statistic: "phase_uniformity_ks".into(),
        source_a: "decaying_reversed".into(),
        source_b: None,
        value: d,
        std_error: None,
        trials: phases.len(),
        params: json!({ "n": n, "exponent": cfg.exponent, "kappa": kappa }),
    });
    r.checks.push(Check::at_most("KS(left phase mod 2π, uniform)", d, 0.05));
    out.plot.samples.push(("left_phase".into(), phases));
    Ok(())
}

/// Runs `cfg` without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ctx = Context::new(cfg)?;
    let mut out = Outcome::new(ctx.report());
    match cfg.experiment {
        Experiment::Clock => clock(&ctx, &mut out)?,
        Experiment::SecondOrder => second_order(&ctx, &mut out)?,
        Experiment::SchtauCompare => schtau_compare(&ctx, &mut out)?,
        Experiment::CarouselVsSineb => carousel_vs_sineb(&ctx, &mut out)?,
        Experiment::GbetaCoincidence => gbeta_coincidence(&ctx, &mut out)?,
        Experiment::PhaseUniformity => phase_uniformity_run(&ctx, &mut out)?,
    }
    let r = &mut out.report;
    r.checks.push(Check::at_most("flag rate", r.flags.rate, MAX_FLAG_RATE));
    r.passed = r.checks.iter().all(|c| c.passed);
    Ok(out)
}

/// Runs `cfg` and writes its outputs under `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let out = execute(cfg)?;
    write_outputs(&out, &cfg.out_dir)?;
    Ok(out.report)
}

pub fn write_outputs(out: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_csv(&dir.join("atoms.csv"), io::ATOM_HEADER, &out.atoms)?;
    io::write_json(&dir.join("atoms_meta.json"), &out.windows)?;
    io::write_csv(&dir.join("sde.csv"), io::SDE_HEADER, &out.sde)?;
    if !out.sde_atoms.is_empty() {
        io::write_csv(&dir.join("sde_atoms.csv"), &["seed", "kind", "atom"], &out.sde_atoms)?;
    }
    if !out.bulk.is_empty() {
        io::write_csv(&dir.join("gbeta.csv"), io::BULK_HEADER, &out.bulk)?;
    }
    io::write_json(&dir.join("report.json"), &out.report)?;
    emit_plotdata(out, &dir.join("plotdata"))
}

const HIST_BINS: usize = 40;

/// `(lo, hi, count)` bins over the sample range; a constant sample gives
/// one degenerate bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-9 * hi.abs().max(1.0) {
        return vec![(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// Long-format CSV files for plotting: gap histograms, empirical CDFs,
/// counting distributions, and the route CDFs aligned on one grid.
pub fn emit_plotdata(out: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let p = &out.plot;

    let mut hist = Vec::new();
    for (source, g) in &p.gaps {
        hist.extend(histogram(g, HIST_BINS).into_iter().map(|(lo, hi, c)| (source.clone(), lo, hi, c)));
    }
    io::write_csv(&dir.join("gap_histogram.csv"), &["source", "bin_lo", "bin_hi", "count"], &hist)?;

    let mut cdf = Vec::new();
    for (source, values) in p.gaps.iter().chain(&p.samples) {
        cdf.extend(ecdf(values).into_iter().map(|(v, f)| (source.clone(), v, f)));
    }
    io::write_csv(&dir.join("ecdf.csv"), &["source", "value", "cdf"], &cdf)?;

    let mut counts = Vec::new();
    for (source, lam, c) in &p.counts {
        let max = c.iter().copied().max().unwrap_or(0);
        let mut freq = vec![0usize; max as usize + 1];
        for &v in c {
            freq[v as usize] += 1;
        }
        let total = c.len().max(1) as f64;
        counts.extend(
            freq.into_iter()
                .enumerate()
                .filter(|(_, f)| *f > 0)
                .map(|(n, f)| (source.clone(), *lam, n, f as f64 / total)),
        );
    }
    io::write_csv(&dir.join("counts.csv"), &["source", "lambda", "n", "frequency"], &counts)?;

    // route CDFs side by side on the pooled support
    let mut header = vec!["x".to_string()];
    header.extend(p.gaps.iter().map(|(s, _)| format!("cdf_{s}")));
    let sorted: Vec<Vec<f64>> = p
        .gaps
        .iter()
        .map(|(_, g)| {
            let mut v = g.clone();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let mut xs: Vec<f64> = sorted.iter().flatten().copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut w = csv::Writer::from_path(dir.join("gap_cdf_aligned.csv"))?;
    w.write_record(&header)?;
    for x in xs {
        let mut row = vec![x.to_string()];
        for s in &sorted {
            let below = s.partition_point(|&v| v <= x);
            row.push((below as f64 / s.len() as f64).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Presets of every experiment, as printed by the `defaults` command.
pub fn all_presets() -> Vec<ExperimentConfig> {
    Experiment::ALL.iter().map(|&e| ExperimentConfig::preset(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in all_presets() {
            cfg.validate().unwrap();
            let e0 = cfg.resolved_e0().unwrap();
            assert!(cfg.resolved_length(e0).unwrap() > 0.0);
        }
        let cfg = ExperimentConfig::preset(Experiment::CarouselVsSineb);
        let e0 = cfg.resolved_e0().unwrap();
        assert!((compute_constants(&cfg.shape().unwrap(), e0).unwrap().beta - 2.0).abs() < 1e-10);
    }

    #[test]
    fn json_overlay_and_errors() {
        let cfg = ExperimentConfig::from_json_str(r#"{"experiment": "clock", "trials": 3, "alpha": 0.9}"#).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.alpha, 0.9);
        assert_eq!(cfg.m, 600);
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "clock", "trails": 3}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "trails"), "{err}");
        let err = ExperimentConfig::from_json_str(r#"{"trials": 3}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "experiment"));
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "clock", "alpha": -1}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "alpha"));
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "clock", "beta_target": 2}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "beta_target"));
    }

    #[test]
    fn free_clock_run_passes() {
        let mut cfg = ExperimentConfig::preset(Experiment::Clock);
        cfg.amplitude = 0.0;
        cfg.trials = 1;
        cfg.m = 50;
        cfg.workers = 1;
        let out = execute(&cfg).unwrap();
        assert!(out.report.passed, "{:?}", out.report.checks);
        let gaps = &out.plot.gaps[0].1;
        assert_eq!(gaps.len(), 2);
        assert!(gaps.iter().all(|g| (g - PI).abs() < 1e-8));
        assert_eq!(histogram(gaps, HIST_BINS).len(), 1);
    }

    #[test]
    fn histogram_bins() {
        assert!(histogram(&[], 10).is_empty());
        let h = histogram(&[0.0, 0.5, 1.0], 2);
        assert_eq!(h, vec![(0.0, 0.5, 1), (0.5, 1.0, 2)]);
    }

    #[test]
    fn covariance_targets() {
        let c = compute_constants(&PotentialShape::default(), 1.0).unwrap();
        assert!((covariance_target(&c, 0) - 2.0 / 34.0).abs() < 1e-15);
        assert!((covariance_target(&c, -1) + 1.0 / 34.0).abs() < 1e-15);
        assert_eq!(covariance_target(&c, 3), 0.0);
    }

    #[test]
    fn flag_summary() {
        let mut f = FlagSummary::default();
        f.add("a", 1, 10);
        f.add("b", 0, 10);
        assert_eq!(f.rate, 0.05);
        assert_eq!(f.notes.len(), 1);
    }
}
