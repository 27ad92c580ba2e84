//! Acceptance criteria, one line each. Exit status is nonzero if any fails.

use std::time::{Duration, Instant};

use fbsde_core::backward::{solve_backward, y0_estimate, RegressionSpec};
use fbsde_core::fbsde::{validate_assumption2, BenchmarkProblem, CheckStatus, FbsdeProblem, SampleSpec};
use fbsde_core::forward::{simulate_path, BrownianPath};
use fbsde_core::harness::{
    coupled_input, empirical_norms, forward_strong_errors, rate_fit, CouplingPlan, LevelMoments, ReportMeta, Scale,
};
use fbsde_core::levy::{Atom, LevyModel, TruncationMoments};
use fbsde_core::rng::{Purpose, RngStream};
use fbsde_core::shotnoise::{Method, SeriesRepresentation, ShotNoiseSampler};
use fbsde_core::stats;

type Outcome = Result<(bool, String), fbsde_core::Error>;

fn gamma_bondesson() -> SeriesRepresentation {
    SeriesRepresentation::new(&LevyModel::gamma(1.0, 1.0).unwrap(), Method::Bondesson).unwrap()
}

fn samples(level: f64, paths: usize, seed: u64) -> Vec<fbsde_core::shotnoise::JumpSkeleton> {
    let sampler = ShotNoiseSampler::new(&gamma_bondesson(), level, 1.0).unwrap();
    (0..paths)
        .map(|m| {
            sampler
                .sample(&mut RngStream::new(seed, m as u64, Purpose::Jumps))
                .unwrap()
        })
        .collect()
}

fn truncated_mass() -> Outcome {
    let counts: Vec<f64> = samples(5.0, 10_000, 1).iter().map(|s| s.count() as f64).collect();
    let mean = stats::mean(&counts);
    let tol = 3.0 * 5f64.sqrt() / 100.0;
    Ok((
        (mean - 5.0).abs() <= tol,
        format!("mean count {mean:.4}, |mean - 5| <= {tol:.4}"),
    ))
}

fn moment_closed_forms() -> Outcome {
    let rep = gamma_bondesson();
    let mut worst = 0.0f64;
    for n in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let m = TruncationMoments::compute(&rep, n)?;
        let sigma2 = (-2.0 * n).exp();
        let m1 = 1.0 - (-n).exp();
        worst = worst
            .max(((m.sigma2 - sigma2) / sigma2).abs())
            .max(((m.m1_abs - m1) / m1).abs());
    }
    Ok((worst <= 1e-8, format!("worst relative deviation {worst:.2e} <= 1e-8")))
}

fn shot_noise_distribution() -> Outcome {
    let values: Vec<f64> = samples(30.0, 100_000, 2).iter().map(|s| s.jump_sum(0.0, 1.0)).collect();
    let m = values.len() as f64;
    let mean = stats::mean(&values);
    let var = stats::variance(&values);
    let m4 = stats::mean(&values.iter().map(|v| (v - mean).powi(4)).collect::<Vec<_>>());
    let se_mean = (var / m).sqrt();
    let se_var = ((m4 - var * var) / m).sqrt();
    let (zm, zv) = ((mean - 1.0) / se_mean, (var - 1.0) / se_var);
    Ok((
        zm.abs() <= 4.0 && zv.abs() <= 4.0,
        format!("mean {mean:.4} ({zm:+.2} se), variance {var:.4} ({zv:+.2} se), bound 4 se"),
    ))
}

fn forward_exactness() -> Outcome {
    let (b, a, h, x0) = (0.2, 0.5, 0.7, 1.5);
    let problem = FbsdeProblem::new("constant", x0, 1.0)?
        .with_drift(move |_, _| b)
        .with_diffusion(move |_, _| a)
        .with_constant_jump(h);
    let rep = gamma_bondesson();
    let zeta = TruncationMoments::compute(&rep, 6.0)?.zeta1;
    let sampler = ShotNoiseSampler::new(&rep, 6.0, 1.0)?;
    let mut worst = 0.0f64;
    for m in 0..100u64 {
        let sk = sampler.sample(&mut RngStream::new(4, m, Purpose::Jumps))?;
        let times: Vec<f64> = sk.jumps().iter().map(|j| j.time).collect();
        let bm = BrownianPath::sample(4, m, 64, 1.0, &times)?;
        let path = simulate_path(&problem, sk.clone(), &bm, 16)?;
        for (i, &t) in path.grid.nodes().iter().enumerate() {
            let exact = x0 + b * t + a * path.brownian[i] + h * (sk.jump_sum(0.0, t) - zeta * t);
            worst = worst.max(((path.states[i] - exact) / exact.abs().max(1.0)).abs());
        }
    }
    Ok((
        worst <= 1e-12,
        format!("worst relative node error {worst:.2e} <= 1e-12"),
    ))
}

fn forward_rate() -> Outcome {
    let problem = FbsdeProblem::new("nonlinear forward", 0.5, 1.0)?
        .with_drift(|_, x| x.sin())
        .with_diffusion(|_, x| 0.4 + 0.2 * x.cos())
        .with_constant_jump(0.2);
    let rep = gamma_bondesson();
    let plan = CouplingPlan::new(5, 20_000, 4096, ShotNoiseSampler::new(&rep, 5.0, 1.0)?)?;
    let level = LevelMoments::compute(&problem, &rep, 5.0)?;
    let steps: Vec<usize> = (4..=9).map(|k| 1 << k).collect();
    let errors = forward_strong_errors(&problem, &plan, &level, &steps, 4096, 2.0)?;
    let pts: Vec<(f64, f64)> = errors.iter().map(|e| (e.steps as f64, e.sup.mean)).collect();
    let fit = rate_fit(&pts, Scale::LogLog)?;
    let ok = (-0.75..=-0.35).contains(&fit.slope) && fit.r_squared >= 0.9;
    Ok((
        ok,
        format!(
            "slope {:.3} in [-0.75, -0.35], R^2 {:.4} >= 0.9",
            fit.slope, fit.r_squared
        ),
    ))
}

fn benchmark_input(
    b: &BenchmarkProblem,
    level: f64,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<fbsde_core::backward::RegressionInput, fbsde_core::Error> {
    let rep = gamma_bondesson();
    let plan = CouplingPlan::new(seed, paths, steps, ShotNoiseSampler::new(&rep, level, 1.0)?)?;
    let lm = LevelMoments::compute(&b.problem, &rep, level)?;
    coupled_input(&b.problem, &plan, &lm, steps)
}

fn benchmark_b1() -> Outcome {
    let b = BenchmarkProblem::zero_generator(0.1, 0.3, 0.5, 1.0, 1.0)?;
    let input = benchmark_input(&b, 20.0, 64, 100_000, 6)?;
    let spec = RegressionSpec::default();
    let sol = solve_backward(&input, &b.problem, &spec)?;
    let mut tower = 0.0f64;
    for k in 0..64 {
        let (a, c) = (stats::mean(sol.node_y(k)), stats::mean(sol.node_y(k + 1)));
        tower = tower.max((a - c).abs());
    }
    let (_, est) = y0_estimate(&input, &b.problem, &spec, 20)?;
    let exact = b.y_exact(0.0, 1.0);
    let tol = (3.0 * est.std_error).max(0.01 * exact.abs());
    let ok = (est.mean - exact).abs() <= tol && tower <= 1e-10;
    Ok((
        ok,
        format!(
            "Y0 {:.5} vs {exact:.5}, tolerance {tol:.5}; tower residual {tower:.1e} <= 1e-10",
            est.mean
        ),
    ))
}

fn benchmark_b2() -> Outcome {
    let b = BenchmarkProblem::discounting(0.5, 0.1, 0.3, 0.5, 1.0, 1.0)?;
    let input = benchmark_input(&b, 20.0, 64, 100_000, 7)?;
    let sol = solve_backward(&input, &b.problem, &RegressionSpec::default())?;
    let oracle = (1.0 + 0.5 / 64.0f64).powi(-64) * 1.1;
    let rel = (sol.y0() - oracle).abs() / oracle;
    Ok((
        rel <= 0.02,
        format!(
            "Y0 {:.5} vs recursion {oracle:.5}, relative {rel:.2e} <= 0.02",
            sol.y0()
        ),
    ))
}

fn backward_rate() -> Outcome {
    let problem = FbsdeProblem::new("nonlinear generator", 0.0, 1.0)?
        .with_drift(|_, x| 0.5 * x.cos())
        .with_diffusion(|_, x| 0.4 + 0.1 * x.sin())
        .with_constant_jump(0.3)
        .with_generator(|_, _, y, z, g| -0.5 * y + 0.5 * z.sin() + 0.3 * g)
        .with_terminal(|x| x.sin());
    let rep = gamma_bondesson();
    let a2 = validate_assumption2(&problem, &rep, 5.0, &SampleSpec::default())?;
    let plan = CouplingPlan::new(8, 20_000, 1024, ShotNoiseSampler::new(&rep, 5.0, 1.0)?)?;
    let level = LevelMoments::compute(&problem, &rep, 5.0)?;
    let spec = RegressionSpec::default();
    let reference = solve_backward(&coupled_input(&problem, &plan, &level, 1024)?, &problem, &spec)?;
    let meta = ReportMeta {
        n: 5.0,
        seed: 8,
        model: "gamma".into(),
        problem: problem.name.clone(),
    };
    let mut y0_pts = Vec::new();
    let mut sup_pts = Vec::new();
    for k in 3..=7 {
        let steps = 1usize << k;
        let sol = solve_backward(&coupled_input(&problem, &plan, &level, steps)?, &problem, &spec)?;
        let r = empirical_norms(&sol, &reference, 2.0, &meta)?;
        y0_pts.push((steps as f64, r.y0_error.mean));
        sup_pts.push((steps as f64, r.sup_y_error.mean));
    }
    let fit = rate_fit(&y0_pts, Scale::LogLog)?;
    let sup = rate_fit(&sup_pts, Scale::LogLog)?;
    let ok = a2.status == CheckStatus::Pass && (-0.8..=-0.3).contains(&fit.slope);
    Ok((
        ok,
        format!(
            "Y0-error slope {:.3} in [-0.8, -0.3] (R^2 {:.3}); sup-node Y-error slope {:.3}; assumption check {:?}",
            fit.slope, fit.r_squared, sup.slope, a2.status
        ),
    ))
}

fn level_decay() -> Outcome {
    let b = BenchmarkProblem::zero_generator(0.1, 0.3, 0.5, 1.0, 1.0)?;
    let rep = gamma_bondesson();
    let (n_ref, steps) = (12.0, 256);
    let plan = CouplingPlan::new(9, 50_000, steps, ShotNoiseSampler::new(&rep, n_ref, 1.0)?)?;
    let spec = RegressionSpec::default();
    let solve = |n: f64| -> Result<_, fbsde_core::Error> {
        let lm = LevelMoments::compute(&b.problem, &rep, n)?;
        solve_backward(&coupled_input(&b.problem, &plan, &lm, steps)?, &b.problem, &spec)
    };
    let reference = solve(n_ref)?;
    let mut errs = Vec::new();
    for n in 1..=5 {
        let meta = ReportMeta {
            n: n as f64,
            seed: 9,
            model: "gamma".into(),
            problem: b.problem.name.clone(),
        };
        errs.push((
            n as f64,
            empirical_norms(&solve(n as f64)?, &reference, 2.0, &meta)?.sup_y_error,
        ));
    }
    let decreasing = errs
        .windows(2)
        .all(|w| w[0].1.mean - w[1].1.mean > 3.0 * w[0].1.std_error.hypot(w[1].1.std_error));
    let fit = rate_fit(
        &errs.iter().map(|(n, e)| (*n, e.mean)).collect::<Vec<_>>(),
        Scale::SemiLog,
    )?;
    let listed: Vec<String> = errs.iter().map(|(n, e)| format!("{n}:{:.2e}", e.mean)).collect();
    Ok((
        decreasing && (-1.4..=-0.6).contains(&fit.slope),
        format!(
            "errors [{}], strictly decreasing beyond 3 se: {decreasing}, semilog slope {:.3} in [-1.4, -0.6]",
            listed.join(" "),
            fit.slope
        ),
    ))
}

fn assumption_validator() -> Outcome {
    let spec = SampleSpec::default();
    let gamma = gamma_bondesson();
    let good = FbsdeProblem::new("constant h", 0.0, 1.0)?.with_constant_jump(0.5);
    let pass = validate_assumption2(&good, &gamma, 5.0, &spec)?;
    let atoms = LevyModel::compound_poisson(vec![
        Atom {
            size: -1.0,
            weight: 1.0,
        },
        Atom { size: 0.5, weight: 2.0 },
    ])?;
    let cp = SeriesRepresentation::new(&atoms, Method::InverseLevy)?;
    let bad = FbsdeProblem::new("h = x", 0.0, 1.0)?.with_jump_and_derivative(|_, x| x, |_, _| 1.0);
    let fail = validate_assumption2(&bad, &cp, 3.0, &spec)?;
    let ok = pass.status == CheckStatus::Pass && fail.status == CheckStatus::Fail && fail.violation.is_some();
    let v = fail
        .violation
        .map(|(t, x, e, l)| format!("(t, x, e) = ({t}, {x}, {e}), ell = {l}"));
    Ok((
        ok,
        format!(
            "constant h {:?}; h = x {:?} at {}",
            pass.status,
            fail.status,
            v.unwrap_or_default()
        ),
    ))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("truncated mass", Duration::from_secs(5), truncated_mass),
        ("moment closed forms", Duration::from_secs(1), moment_closed_forms),
        (
            "shot noise distribution",
            Duration::from_secs(30),
            shot_noise_distribution,
        ),
        ("forward exactness", Duration::from_secs(1), forward_exactness),
        ("forward strong rate", Duration::from_secs(300), forward_rate),
        ("benchmark B1", Duration::from_secs(180), benchmark_b1),
        ("benchmark B2", Duration::from_secs(180), benchmark_b2),
        ("backward rate", Duration::from_secs(600), backward_rate),
        ("decay in n", Duration::from_secs(900), level_decay),
        ("assumption validator", Duration::from_secs(1), assumption_validator),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && elapsed < *budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "criterion {:>2} {}: {name}: {detail}; runtime {:.2}s < {}s",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
