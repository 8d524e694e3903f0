use std::f64::consts::PI;

use beta_spectra_core::potential::{potential_at, DrivingPath, PotentialModel, PotentialShape};
use beta_spectra_core::prufer::{choose_length, count_eigenvalues_below, integrate_prufer, locate_atoms};
use beta_spectra_core::rng::trial_seed;
use beta_spectra_core::sample_driving_path;

/// Eigenvalues below `e` of the Dirichlet difference operator, by the sign
/// changes of the LDLᵀ pivots of `T − e`.
fn fd_count(q: &[f64], h: f64, e: f64) -> usize {
    let off = -1.0 / (h * h);
    let mut count = 0;
    let mut d = 1.0;
    for (i, &qi) in q.iter().enumerate() {
        let a = 2.0 / (h * h) + qi - e;
        d = if i == 0 { a } else { a - off * off / d };
        if d == 0.0 {
            d = -f64::EPSILON * (h * h).recip();
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

#[test]
fn sturm_count_matches_fine_difference_operator() {
    let (length, h) = (20.0, 0.001);
    let model = PotentialModel::coupling(0.6, length, PotentialShape::default()).unwrap();
    for seed in 0..5 {
        let path = sample_driving_path(trial_seed(604, seed), length, h).unwrap();
        let nodes = (length / h).round() as usize;
        let q: Vec<f64> = (1..nodes)
            .map(|j| potential_at(&path, &model, j as f64 * h).unwrap())
            .collect();
        let fd = fd_count(&q, h, 1.0) as i64;
        let sturm = count_eigenvalues_below(&path, &model, 1.0, length).unwrap() as i64;
        assert!((sturm - fd).abs() <= 1, "seed {seed}: sturm {sturm}, fd {fd}");
    }
}

#[test]
fn fd_count_of_free_operator() {
    // eigenvalues (4/h²) sin²(jπh/2L)
    let h = 0.01;
    let q = vec![0.0; 999];
    let e = |j: f64| (4.0 / (h * h)) * (j * PI * h / 20.0).sin().powi(2);
    assert_eq!(fd_count(&q, h, 0.5 * (e(5.0) + e(6.0))), 5);
}

/// Same piecewise-constant path on a mesh `2^level` times finer.
fn subdivide(path: &DrivingPath, level: u32) -> DrivingPath {
    let parts = 1usize << level;
    let mut inc = Vec::with_capacity(path.increments.len() * parts);
    for &dx in &path.increments {
        inc.extend(std::iter::repeat_n(0.0, parts - 1));
        inc.push(dx);
    }
    // the partial cell at the end holds the last position
    let step = path.step / parts as f64;
    inc.resize((path.duration / step).floor() as usize, 0.0);
    DrivingPath::from_increments(path.positions[0], inc, step, path.duration).unwrap()
}

#[test]
fn halving_the_mesh_shrinks_atom_changes() {
    let length = choose_length(1.0, 100, 0.0).unwrap();
    let model = PotentialModel::coupling(0.75, length, PotentialShape::default()).unwrap();
    for seed in [3, 17] {
        let coarse = sample_driving_path(seed, length, 0.02).unwrap();
        let atoms: Vec<Vec<f64>> = (0..3)
            .map(|level| locate_atoms(&subdivide(&coarse, level), &model, 1.0, length, 3.0 * PI).unwrap().atoms)
            .collect();
        assert!(atoms.iter().all(|a| a.len() == atoms[0].len()), "atom counts differ");
        for (i, ((a, b), c)) in atoms[0].iter().zip(&atoms[1]).zip(&atoms[2]).enumerate() {
            let first = (b - a).abs();
            let second = (c - b).abs();
            assert!(second <= 4.0 * first + 1e-8, "seed {seed} atom {i}: {first:e} then {second:e}");
        }
    }
}

#[test]
fn critical_radius_stays_bounded() {
    let length = 2000.0;
    let model = PotentialModel::coupling(0.5, length, PotentialShape::default()).unwrap();
    let seeds = 500;
    let large = (0..seeds)
        .filter(|&s| {
            let path = sample_driving_path(trial_seed(4300, s), length, 0.01).unwrap();
            let p = integrate_prufer(&path, &model, 1.0, length).unwrap();
            p.log_r.iter().any(|v| v.abs() > 10f64.ln())
        })
        .count();
    assert!(large * 10 <= seeds as usize, "{large} of {seeds} paths left [−ln 10, ln 10]");
}
