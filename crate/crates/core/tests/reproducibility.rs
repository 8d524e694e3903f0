use beta_spectra_core::experiment::{execute, Experiment, ExperimentConfig};
use beta_spectra_core::rng::trial_seed;
use beta_spectra_core::sample_driving_path;

fn small(experiment: Experiment) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(experiment);
    cfg.trials = 6;
    cfg.sde_trials = Some(6);
    cfg.m = 60;
    cfg.length = cfg.length.map(|_| 150.0);
    cfg.gbeta_n = 80;
    cfg
}

#[test]
fn outcomes_do_not_depend_on_worker_count() {
    for e in [Experiment::Clock, Experiment::CarouselVsSineb, Experiment::GbetaCoincidence] {
        let mut one = small(e);
        one.workers = 1;
        let mut many = small(e);
        many.workers = 4;
        let a = execute(&one).unwrap();
        let b = execute(&many).unwrap();
        assert_eq!(a.report.statistics, b.report.statistics, "{}", e.name());
        assert_eq!(a.plot, b.plot);
        assert_eq!(a.sde_atoms, b.sde_atoms);
    }
}

#[test]
fn base_seed_changes_the_sample() {
    let a = execute(&small(Experiment::Clock)).unwrap();
    let mut cfg = small(Experiment::Clock);
    cfg.base_seed += 1;
    let b = execute(&cfg).unwrap();
    assert_ne!(a.plot.gaps, b.plot.gaps);
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn trial_streams_are_uncorrelated() {
    let samples = 20_000;
    let streams: Vec<Vec<f64>> = (0..8)
        .map(|i| sample_driving_path(trial_seed(99, i), samples as f64 * 0.01, 0.01).unwrap().increments)
        .collect();
    let bound = 3.0 / (samples as f64).sqrt();
    for i in 0..streams.len() {
        for j in i + 1..streams.len() {
            let c = corr(&streams[i], &streams[j]);
            assert!(c.abs() <= bound, "streams {i}, {j}: corr {c}");
        }
    }
}
