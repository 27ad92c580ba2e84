//! Backward scheme on problems with known solutions, and a step-by-step
//! check of the conditional expectations on a lattice-valued state.

use std::collections::HashMap;

use fbsde_core::backward::{solve_backward, y0_estimate, Basis, ClipBound, RegressionInput, RegressionSpec};
use fbsde_core::fbsde::{BenchmarkProblem, FbsdeProblem};
use fbsde_core::harness::{coupled_input, CouplingPlan, LevelMoments};
use fbsde_core::levy::{Atom, LevyModel};
use fbsde_core::shotnoise::{Method, SeriesRepresentation, ShotNoiseSampler};
use fbsde_core::stats;

fn gamma_rep() -> SeriesRepresentation {
    SeriesRepresentation::new(&LevyModel::gamma(1.0, 1.0).unwrap(), Method::Bondesson).unwrap()
}

fn input_for(
    problem: &FbsdeProblem,
    rep: &SeriesRepresentation,
    level: f64,
    steps: usize,
    paths: usize,
    seed: u64,
) -> RegressionInput {
    let plan = CouplingPlan::new(
        seed,
        paths,
        steps,
        ShotNoiseSampler::new(rep, level, problem.horizon).unwrap(),
    )
    .unwrap();
    let lm = LevelMoments::compute(problem, rep, level).unwrap();
    coupled_input(problem, &plan, &lm, steps).unwrap()
}

#[test]
fn zero_generator_tracks_the_state_pathwise() {
    let b1 = BenchmarkProblem::zero_generator(0.1, 0.3, 0.5, 1.0, 1.0).unwrap();
    let input = input_for(&b1.problem, &gamma_rep(), 10.0, 16, 10_000, 31);
    let sol = solve_backward(&input, &b1.problem, &RegressionSpec::default()).unwrap();
    for k in 0..=16 {
        let t = input.time(k);
        let sq: Vec<f64> = input
            .node_x(k)
            .iter()
            .zip(sol.node_y(k))
            .map(|(x, y)| (y - b1.y_exact(t, *x)).powi(2))
            .collect();
        let rms = stats::mean(&sq).sqrt();
        assert!(rms < 0.01, "node {k}: rms {rms}");
    }
}

#[test]
fn discounting_matches_the_discrete_recursion() {
    let b2 = BenchmarkProblem::discounting(0.5, 0.1, 0.3, 0.5, 1.0, 1.0).unwrap();
    let input = input_for(&b2.problem, &gamma_rep(), 10.0, 32, 20_000, 32);
    let (y0, est) = y0_estimate(&input, &b2.problem, &RegressionSpec::default(), 20).unwrap();
    let oracle = (1.0 + 0.5 / 32.0f64).powi(-32) * 1.1;
    let tol = (3.0 * est.std_error).max(0.01 * oracle);
    assert!((y0 - oracle).abs() <= tol, "Y0 {y0} vs {oracle}, tolerance {tol}");
}

#[test]
fn pure_diffusion_recovers_unit_z() {
    let b3 = BenchmarkProblem::pure_diffusion(1.0).unwrap();
    let input = input_for(&b3.problem, &gamma_rep(), 5.0, 16, 20_000, 33);
    let sol = solve_backward(&input, &b3.problem, &RegressionSpec::default()).unwrap();
    assert!(sol.y0().abs() < 0.02, "Y0 {}", sol.y0());
    let z = stats::mean(&sol.z);
    assert!((z - 1.0).abs() < 0.02, "mean Z {z}");
    let gamma = stats::mean(&sol.gamma);
    assert!(gamma.abs() < 0.05, "mean Gamma {gamma}");
}

/// Group means keyed by the lattice cell of the state.
fn group_means(keys: &[i64], values: &[f64]) -> HashMap<i64, f64> {
    let mut acc: HashMap<i64, (f64, usize)> = HashMap::new();
    for (k, v) in keys.iter().zip(values) {
        let e = acc.entry(*k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

fn check_lattice_consistency(centered: bool) {
    // Unit jumps at rate 2 and no diffusion: X_k = 0.25 + j - k/2 sits at the
    // middle of a half-width bin, so each bin's regression is its sample mean.
    let model = LevyModel::compound_poisson(vec![Atom { size: 1.0, weight: 2.0 }]).unwrap();
    let rep = SeriesRepresentation::new(&model, Method::InverseLevy).unwrap();
    let (c_gamma, c_z, r) = (0.3, 0.2, 0.5);
    let problem = FbsdeProblem::new("lattice", 0.25, 1.0)
        .unwrap()
        .with_constant_jump(1.0)
        .with_generator(move |_, _, y, z, g| -r * y + c_z * z + c_gamma * g)
        .with_terminal(|x| x * x);
    let steps = 4;
    let input = input_for(&problem, &rep, 3.0, steps, 4_000, 34);
    let spec = RegressionSpec {
        basis: Basis::PartitionedLinear {
            bins: 28,
            range: Some((-2.5, 11.5)),
        },
        ridge: 0.0,
        truncation_bound: ClipBound::Off,
        centered_targets: centered,
    };
    let sol = solve_backward(&input, &problem, &spec).unwrap();

    let dt = 1.0 / steps as f64;
    let mut y: Vec<f64> = input.node_x(steps).iter().map(|x| x * x).collect();
    for k in (0..steps).rev() {
        let keys: Vec<i64> = input.node_x(k).iter().map(|x| (2.0 * x).floor() as i64).collect();
        let cond = group_means(&keys, &y);
        let base: Vec<f64> = keys
            .iter()
            .zip(&y)
            .map(|(key, v)| if centered { v - cond[key] } else { *v })
            .collect();
        let tz: Vec<f64> = base.iter().zip(input.node_db(k)).map(|(b, d)| b * d / dt).collect();
        let tg: Vec<f64> = base.iter().zip(input.node_w(k)).map(|(b, w)| b * w / dt).collect();
        let (zm, gm) = (group_means(&keys, &tz), group_means(&keys, &tg));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        for (i, key) in keys.iter().enumerate() {
            assert!(close(sol.node_z(k)[i], zm[key]), "z at node {k}, path {i}");
            assert!(close(sol.node_gamma(k)[i], gm[key]), "gamma at node {k}, path {i}");
        }
        y = keys
            .iter()
            .map(|key| (cond[key] + dt * (c_z * zm[key] + c_gamma * gm[key])) / (1.0 + r * dt))
            .collect();
        for (i, v) in y.iter().enumerate() {
            assert!(
                (sol.node_y(k)[i] - v).abs() <= 1e-9 * v.abs().max(1.0),
                "y at node {k}, path {i}"
            );
        }
    }
}

#[test]
fn lattice_state_regression_is_the_cell_mean() {
    check_lattice_consistency(true);
    check_lattice_consistency(false);
}
