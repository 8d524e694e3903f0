use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use beta_spectra_core::experiment::{self, Experiment, ExperimentConfig};
use beta_spectra_core::gbeta::sample_bulk_window;
use beta_spectra_core::io::{self, SdeRow, WindowMeta};
use beta_spectra_core::potential::{compute_constants, default_mesh, PotentialModel, PotentialShape};
use beta_spectra_core::prufer::{choose_length, LocateOptions};
use beta_spectra_core::rng::trial_seed;
use beta_spectra_core::sde::{carousel_steps, simulate_carousel, simulate_schtau, simulate_sine_beta, NoiseBundle};
use beta_spectra_core::stats::{counting, gaps_near_zero, ks_distance, mean_with_error, AtomBatch, StatRecord};
use beta_spectra_core::{solve_energy_for_beta, Error, Result};

#[derive(Parser)]
#[command(name = "beta-spectra", version, about = "Level statistics of random Schrödinger operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Locate unfolded eigenvalues of the random operator for many seeds.
    SimulateOperator(OperatorArgs),
    /// Integrate one of the limiting phase SDEs.
    SimulateSde(SdeArgs),
    /// Sample bulk-rescaled Gaussian β-ensemble windows.
    SampleGbeta(GbetaArgs),
    /// Gap, counting and KS statistics of atom CSV files.
    Stats(StatsArgs),
    /// Run a composite experiment from a JSON config or a preset.
    Run(RunArgs),
    /// Print the default configuration of every experiment.
    Defaults {
        #[arg(long, value_enum)]
        experiment: Option<ExperimentName>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct Energy {
    /// Reference energy.
    #[arg(long, conflicts_with = "beta_target")]
    e0: Option<f64>,
    /// Pick the reference energy realizing this β.
    #[arg(long)]
    beta_target: Option<f64>,
    #[arg(long, default_value_t = 1)]
    mode: u32,
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    amplitude: f64,
}

impl Energy {
    fn shape(&self) -> Result<PotentialShape> {
        PotentialShape::new(self.mode, self.amplitude)
    }

    fn e0(&self) -> Result<f64> {
        match self.beta_target {
            Some(b) => solve_energy_for_beta(&self.shape()?, b),
            None => Ok(self.e0.unwrap_or(1.0)),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Coupling,
    Decaying,
}

#[derive(Args)]
struct OperatorArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    energy: Energy,
    #[arg(long, value_enum, default_value = "coupling")]
    family: Family,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Interval length; otherwise chosen from `m` and `beta_phase`.
    #[arg(long)]
    length: Option<f64>,
    #[arg(long, default_value_t = 600)]
    m: u64,
    #[arg(long, default_value_t = 0.0)]
    beta_phase: f64,
    /// Half-width of the unfolded window.
    #[arg(long, default_value_t = 3.0 * std::f64::consts::PI)]
    window: f64,
    /// Path mesh; otherwise derived from the energy.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SdeName {
    Schtau,
    Carousel,
    Sinebeta,
}

#[derive(Args)]
struct SdeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    energy: Energy,
    #[arg(long, value_enum)]
    kind: SdeName,
    /// Spectral parameters: c for schtau, λ otherwise.
    #[arg(long, value_delimiter = ',', default_value = "6.283185307179586,12.566370614359172")]
    params: Vec<f64>,
    /// Sine_β β; defaults to β(E0).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    h0: f64,
    #[arg(long, default_value_t = 1e-4)]
    delta_cutoff: f64,
}

#[derive(Args)]
struct GbetaArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Half-width of the halved window.
    #[arg(long, default_value_t = 3.0 * std::f64::consts::PI)]
    window: f64,
}

#[derive(Args)]
struct StatsArgs {
    /// Atom CSV files (atoms.csv, gbeta.csv or sde_atoms.csv).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    gap_count: usize,
    /// Counting-function arguments.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    /// Write the records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Clock,
    SecondOrder,
    SchtauCompare,
    CarouselVsSineb,
    GbetaCoincidence,
    PhaseUniformity,
}

impl From<ExperimentName> for Experiment {
    fn from(e: ExperimentName) -> Self {
        match e {
            ExperimentName::Clock => Experiment::Clock,
            ExperimentName::SecondOrder => Experiment::SecondOrder,
            ExperimentName::SchtauCompare => Experiment::SchtauCompare,
            ExperimentName::CarouselVsSineb => Experiment::CarouselVsSineb,
            ExperimentName::GbetaCoincidence => Experiment::GbetaCoincidence,
            ExperimentName::PhaseUniformity => Experiment::PhaseUniformity,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; keys not given take the preset values.
    #[arg(long, required_unless_present = "experiment")]
    config: Option<PathBuf>,
    /// Preset to run when no config file is given.
    #[arg(long, value_enum, conflicts_with = "config")]
    experiment: Option<ExperimentName>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::SimulateOperator(a) => simulate_operator(a).map(|_| true),
        Command::SimulateSde(a) => simulate_sde(a).map(|_| true),
        Command::SampleGbeta(a) => sample_gbeta(a).map(|_| true),
        Command::Stats(a) => stats(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Defaults { experiment } => {
            let text = match experiment {
                Some(e) => serde_json::to_string_pretty(&ExperimentConfig::preset(e.into()))?,
                None => {
                    let map: BTreeMap<_, _> = experiment::all_presets()
                        .into_iter()
                        .map(|c| (c.experiment.name(), c))
                        .collect();
                    serde_json::to_string_pretty(&map)?
                }
            };
            emit(&text)?;
            Ok(true)
        }
    }
}

/// Prints to stdout; a closed pipe ends output silently.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    let workers = std::env::var(experiment::WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(workers);
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter(e.to_string()))
}

fn seeds(c: &Common) -> Vec<u64> {
    (0..c.trials as u64).map(|i| trial_seed(c.seed, i)).collect()
}

fn simulate_operator(a: OperatorArgs) -> Result<()> {
    let shape = a.energy.shape()?;
    let e0 = a.energy.e0()?;
    let length = match a.length {
        Some(l) => l,
        None => choose_length(e0, a.m, a.beta_phase)?,
    };
    let model = match a.family {
        Family::Coupling => PotentialModel::coupling(a.alpha, length, shape)?,
        Family::Decaying => PotentialModel::decaying(shape),
    };
    let setup = experiment::OperatorSetup {
        model,
        e0,
        length,
        step: a.h.unwrap_or_else(|| default_mesh(e0.sqrt())),
        window: a.window,
        options: LocateOptions {
            relative_tol: a.tol,
            ..LocateOptions::default()
        },
    };
    let seeds = seeds(&a.common);
    let windows = pool(a.common.workers)?.install(|| seeds.par_iter().map(|&s| setup.window(s)).collect::<Vec<_>>());
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (seed, w) in seeds.iter().zip(windows) {
        let w = w?;
        rows.extend(io::atom_rows(*seed, model.alpha(), &w));
        meta.push(WindowMeta::of(*seed, &w));
    }
    std::fs::create_dir_all(&a.common.out)?;
    io::write_csv(&a.common.out.join("atoms.csv"), io::ATOM_HEADER, &rows)?;
    io::write_json(&a.common.out.join("atoms_meta.json"), &meta)?;
    eprintln!("{} atoms from {} seeds, L = {length}", rows.len(), seeds.len());
    Ok(())
}

fn simulate_sde(a: SdeArgs) -> Result<()> {
    let shape = a.energy.shape()?;
    let e0 = a.energy.e0()?;
    let constants = compute_constants(&shape, e0)?;
    let beta = a.beta.unwrap_or(constants.beta);
    let seeds = seeds(&a.common);
    let (steps, step) = match a.kind {
        SdeName::Carousel => (carousel_steps(a.h0, a.delta_cutoff)?, a.h0),
        _ => ((a.horizon / a.step).ceil() as usize, a.step),
    };
    let paths = pool(a.common.workers)?.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let noise = NoiseBundle::sample(s, steps, step)?;
                match a.kind {
                    SdeName::Schtau => simulate_schtau(&constants, &a.params, &noise, a.horizon),
                    SdeName::Carousel => simulate_carousel(constants.d_e0, &a.params, &noise, a.delta_cutoff),
                    SdeName::Sinebeta => simulate_sine_beta(beta, &a.params, &noise, a.horizon),
                }
            })
            .collect::<Vec<_>>()
    });
    let mut rows = Vec::new();
    for (seed, p) in seeds.iter().zip(paths) {
        rows.extend(p?.iter().map(|p| SdeRow::of_path(*seed, p)));
    }
    std::fs::create_dir_all(&a.common.out)?;
    io::write_csv(&a.common.out.join("sde.csv"), io::SDE_HEADER, &rows)?;
    eprintln!("{} terminal phases written", rows.len());
    Ok(())
}

fn sample_gbeta(a: GbetaArgs) -> Result<()> {
    let seeds = seeds(&a.common);
    let samples = pool(a.common.workers)?
        .install(|| seeds.par_iter().map(|&s| sample_bulk_window(a.n, a.beta, a.mu, s, a.window)).collect::<Vec<_>>());
    let mut rows = Vec::new();
    for (seed, b) in seeds.iter().zip(samples) {
        rows.extend(io::bulk_rows(*seed, a.beta, &b?));
    }
    std::fs::create_dir_all(&a.common.out)?;
    io::write_csv(&a.common.out.join("gbeta.csv"), io::BULK_HEADER, &rows)?;
    eprintln!("{} atoms from {} samples", rows.len(), seeds.len());
    Ok(())
}

/// Reads per-seed atoms from any of the atom CSV layouts.
fn read_batch(path: &Path) -> Result<AtomBatch> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = ["atom_x", "halved_atom", "atom"]
        .iter()
        .find_map(|name| headers.iter().position(|h| h == *name))
        .ok_or_else(|| Error::Parameter(format!("{}: no atom column", path.display())))?;
    let seed_col = headers
        .iter()
        .position(|h| h == "seed")
        .ok_or_else(|| Error::Parameter(format!("{}: no seed column", path.display())))?;
    let mut by_seed: Vec<(String, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let seed = record[seed_col].to_string();
        let x: f64 = record[column]
            .parse()
            .map_err(|_| Error::Parameter(format!("{}: bad atom {:?}", path.display(), &record[column])))?;
        match by_seed.last_mut() {
            Some((s, v)) if *s == seed => v.push(x),
            _ => by_seed.push((seed, vec![x])),
        }
    }
    let samples = by_seed
        .into_iter()
        .map(|(_, mut v)| {
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    AtomBatch::new(path.display().to_string(), samples, None)
}

fn stats(a: StatsArgs) -> Result<()> {
    let mut records = Vec::new();
    let mut gaps = Vec::new();
    for f in &a.files {
        let batch = read_batch(f)?;
        let g = gaps_near_zero(&batch, a.gap_count)?;
        let (mean, se) = mean_with_error(&g.gaps);
        records.push(StatRecord {
            statistic: "mean_gap".into(),
            source_a: batch.source.clone(),
            source_b: None,
            value: mean,
            std_error: Some(se),
            trials: batch.len(),
            params: json!({ "gap_count": a.gap_count, "skipped": g.skipped }),
        });
        for &lam in &a.lambdas {
            let n: Vec<f64> = counting(&batch, lam)?.into_iter().map(|v| v as f64).collect();
            let (mean, se) = mean_with_error(&n);
            records.push(StatRecord {
                statistic: "mean_count".into(),
                source_a: batch.source.clone(),
                source_b: None,
                value: mean,
                std_error: Some(se),
                trials: n.len(),
                params: json!({ "lambda": lam }),
            });
        }
        gaps.push((batch.source, g.gaps));
    }
    for i in 0..gaps.len() {
        for j in i + 1..gaps.len() {
            records.push(StatRecord {
                statistic: "ks_distance".into(),
                source_a: gaps[i].0.clone(),
                source_b: Some(gaps[j].0.clone()),
                value: ks_distance(&gaps[i].1, &gaps[j].1)?,
                std_error: None,
                trials: gaps[i].1.len().min(gaps[j].1.len()),
                params: json!({ "gap_count": a.gap_count }),
            });
        }
    }
    match a.out {
        Some(p) => io::write_json(&p, &records)?,
        None => emit(&serde_json::to_string_pretty(&records)?)?,
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<bool> {
    let mut cfg = match (&a.config, a.experiment) {
        (Some(path), _) => ExperimentConfig::from_json_str(&std::fs::read_to_string(path)?)?,
        (None, Some(e)) => ExperimentConfig::preset(e.into()),
        (None, None) => unreachable!("clap requires one of --config and --experiment"),
    };
    if let Some(t) = a.trials {
        cfg.trials = t;
        if cfg.sde_trials.is_some() {
            cfg.sde_trials = Some(t);
        }
    }
    if let Some(s) = a.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let report = experiment::run(&cfg)?;
    let mut lines: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("[{}] {}: {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.bound))
        .collect();
    lines.push(format!("report written to {}", cfg.out_dir.join("report.json").display()));
    emit(&lines.join("\n"))?;
    Ok(report.passed)
}
