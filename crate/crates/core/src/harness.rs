//! Error norms, coupled reference solutions and convergence-rate fits.
//!
//! Every study draws its paths from one [`CouplingPlan`]: skeletons are
//! sampled at the plan's highest truncation level and restricted to lower
//! levels, and the Brownian path lives on the plan's fine grid. Runs at
//! different `(n, N)` therefore see the same randomness.

use rayon::prelude::*;

use crate::backward::{gamma_weight, BackwardSolution, NodeDiagnostics, RegressionInput};
use crate::error::{Error, Result};
use crate::fbsde::{self, BenchmarkProblem, FbsdeProblem};
use crate::forward::{regular_time, simulate_path, simulate_regular_states, BrownianPath, PathEnsemble};
use crate::levy;
use crate::rng::{Purpose, RngStream};
use crate::shotnoise::{JumpSkeleton, SeriesRepresentation, ShotNoiseSampler};
use crate::stats::{self, Estimate};

const CHUNK: usize = 2048;
pub const BATCHES: usize = 20;

/// Empirical error functionals between two solutions on nested grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `sup_k (E|ΔY_{t_k}|^p)^{1/p}`.
    pub sup_y_error: Estimate,
    /// `(E sup_k |ΔY_{t_k}|^p)^{1/p}`.
    pub esup_y_error: Estimate,
    /// `(E (∫ |ΔZ_s|^2 ds)^{p/2})^{1/p}`.
    pub z_error: Estimate,
    pub gamma_error: Estimate,
    /// `|Y_0 - Y_0^{ref}|` with the Monte Carlo error of the difference.
    pub y0_error: Estimate,
    /// `(E sup_k |ΔX_{t_k}|^p)^{1/p}` when forward states are compared.
    pub forward_error: Option<Estimate>,
    pub n: f64,
    pub steps: usize,
    pub paths: usize,
    pub p: f64,
    pub seed: u64,
    pub model: String,
    pub problem: String,
}

/// `(E V)^{1/p}` with a delta-method standard error from batch means of `V`.
pub fn power_mean(values: &[f64], p: f64) -> Estimate {
    let est = stats::batch_means(values, BATCHES);
    let m = est.mean.max(0.0);
    let value = m.powf(1.0 / p);
    let se = if m > 0.0 { est.std_error * value / (p * m) } else { 0.0 };
    Estimate {
        mean: value,
        std_error: se,
    }
}

fn check_nested(coarse: &BackwardSolution, fine: &BackwardSolution) -> Result<usize> {
    if coarse.paths != fine.paths {
        return Err(Error::RefinementRequired(format!(
            "solutions use {} and {} paths",
            coarse.paths, fine.paths
        )));
    }
    if (coarse.horizon - fine.horizon).abs() > 1e-14 * coarse.horizon {
        return Err(Error::RefinementRequired("horizons differ".into()));
    }
    if coarse.steps == 0 || fine.steps % coarse.steps != 0 {
        return Err(Error::RefinementRequired(format!(
            "{} steps are not refined by {} steps",
            coarse.steps, fine.steps
        )));
    }
    Ok(fine.steps / coarse.steps)
}

struct Norms {
    sup_y: Estimate,
    esup_y: Estimate,
    z: Estimate,
    gamma: Estimate,
}

fn solution_norms(coarse: &BackwardSolution, fine: &BackwardSolution, p: f64) -> Result<Norms> {
    if !(p >= 2.0) {
        return Err(Error::domain(format!("error norms need p >= 2, got {p}")));
    }
    let ratio = check_nested(coarse, fine)?;
    let m = coarse.paths;
    let mut sup_y = Estimate {
        mean: 0.0,
        std_error: 0.0,
    };
    let mut path_sup = vec![0.0f64; m];
    for k in 0..=coarse.steps {
        let (a, b) = (coarse.node_y(k), fine.node_y(k * ratio));
        let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| (u - v).abs().powf(p)).collect();
        for (s, v) in path_sup.iter_mut().zip(&d) {
            *s = s.max(*v);
        }
        let e = power_mean(&d, p);
        if e.mean > sup_y.mean {
            sup_y = e;
        }
    }
    let dt = fine.horizon / fine.steps as f64;
    let mut z_int = vec![0.0; m];
    let mut g_int = vec![0.0; m];
    for j in 0..fine.steps {
        let k = j / ratio;
        let (zc, zf) = (coarse.node_z(k), fine.node_z(j));
        let (gc, gf) = (coarse.node_gamma(k), fine.node_gamma(j));
        for i in 0..m {
            z_int[i] += dt * (zc[i] - zf[i]).powi(2);
            g_int[i] += dt * (gc[i] - gf[i]).powi(2);
        }
    }
    let half = p / 2.0;
    let zv: Vec<f64> = z_int.iter().map(|v| v.powf(half)).collect();
    let gv: Vec<f64> = g_int.iter().map(|v| v.powf(half)).collect();
    Ok(Norms {
        sup_y,
        esup_y: power_mean(&path_sup, p),
        z: power_mean(&zv, p),
        gamma: power_mean(&gv, p),
    })
}

/// Identification of a comparison for [`ErrorReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub n: f64,
    pub seed: u64,
    pub model: String,
    pub problem: String,
}

/// Error functionals of `coarse` against `reference` (which must refine it).
pub fn empirical_norms(
    coarse: &BackwardSolution,
    reference: &BackwardSolution,
    p: f64,
    meta: &ReportMeta,
) -> Result<ErrorReport> {
    let norms = solution_norms(coarse, reference, p)?;
    let diff: Vec<f64> = coarse
        .node_y(0)
        .iter()
        .zip(reference.node_y(0))
        .map(|(a, b)| a - b)
        .collect();
    let y0 = stats::batch_means(&diff, BATCHES);
    Ok(ErrorReport {
        sup_y_error: norms.sup_y,
        esup_y_error: norms.esup_y,
        z_error: norms.z,
        gamma_error: norms.gamma,
        y0_error: Estimate {
            mean: y0.mean.abs(),
            std_error: y0.std_error,
        },
        forward_error: None,
        n: meta.n,
        steps: coarse.steps,
        paths: coarse.paths,
        p,
        seed: meta.seed,
        model: meta.model.clone(),
        problem: meta.problem.clone(),
    })
}

/// `(E sup_k |X_a(t_k) - X_b(t_{kr})|^p)^{1/p}` over the nodes of `coarse`.
pub fn forward_sup_error(coarse: &RegressionInput, fine: &RegressionInput, p: f64) -> Result<Estimate> {
    if coarse.paths != fine.paths || coarse.steps == 0 || fine.steps % coarse.steps != 0 {
        return Err(Error::RefinementRequired(format!(
            "forward states on {} steps are not refined by {} steps",
            coarse.steps, fine.steps
        )));
    }
    let r = fine.steps / coarse.steps;
    let mut sup = vec![0.0f64; coarse.paths];
    for k in 0..=coarse.steps {
        for ((s, a), b) in sup.iter_mut().zip(coarse.node_x(k)).zip(fine.node_x(k * r)) {
            *s = s.max((a - b).abs().powf(p));
        }
    }
    Ok(power_mean(&sup, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// `log err` against `log x`.
    LogLog,
    /// `log err` against `x`.
    SemiLog,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln err` on `ln x` (or `x`).
pub fn rate_fit(points: &[(f64, f64)], scale: Scale) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::domain(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, e)) = points
        .iter()
        .find(|&&(x, e)| !(e > 0.0) || !e.is_finite() || !x.is_finite() || (scale == Scale::LogLog && !(x > 0.0)))
    {
        return Err(Error::domain(format!(
            "rate fit needs positive finite values, got ({x}, {e})"
        )));
    }
    let xs: Vec<f64> = points
        .iter()
        .map(|&(x, _)| if scale == Scale::LogLog { x.ln() } else { x })
        .collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
    let (mx, my) = (stats::mean(&xs), stats::mean(&ys));
    let sxx = stats::pairwise_sum(&xs.iter().map(|x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    let sxy = stats::pairwise_sum(&xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).collect::<Vec<_>>());
    let syy = stats::pairwise_sum(&ys.iter().map(|y| (y - my) * (y - my)).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return Err(Error::domain("rate fit needs at least two distinct abscissae"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Truncation-level constants used by the schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMoments {
    pub level: f64,
    /// `ζ(n) = ∫ e ν^n(de)`.
    pub zeta1: f64,
    /// `ζ_ρ(n) = ∫ ρ(e) e ν^n(de)`.
    pub zeta_rho: f64,
    /// `κ_ρ(n) = ∫ ρ(e) e² ν^n(de)`.
    pub kappa_rho: f64,
}

impl LevelMoments {
    pub fn compute(problem: &FbsdeProblem, representation: &SeriesRepresentation, level: f64) -> Result<Self> {
        let (zeta_rho, kappa_rho) = fbsde::rho_weighted_moments(problem, representation, level)?;
        Ok(Self {
            level,
            zeta1: levy::retained_signed_first_moment(representation, level)?,
            zeta_rho,
            kappa_rho,
        })
    }
}

/// Shared randomness for a family of runs.
#[derive(Debug, Clone)]
pub struct CouplingPlan {
    pub seed: u64,
    pub paths: usize,
    /// Brownian grid; every step count in the study must divide it.
    pub fine_steps: usize,
    /// Sampler at the highest truncation level of the study.
    pub sampler: ShotNoiseSampler,
}

impl CouplingPlan {
    pub fn new(seed: u64, paths: usize, fine_steps: usize, sampler: ShotNoiseSampler) -> Result<Self> {
        if paths == 0 || fine_steps == 0 {
            return Err(Error::domain("coupling plan needs paths and fine steps"));
        }
        Ok(Self {
            seed,
            paths,
            fine_steps,
            sampler,
        })
    }

    /// Skeleton and Brownian path of path `m` at the plan's top level.
    pub fn path_noise(&self, m: usize, horizon: f64) -> Result<(JumpSkeleton, BrownianPath)> {
        let sk = self
            .sampler
            .sample(&mut RngStream::new(self.seed, m as u64, Purpose::Jumps))?;
        let times: Vec<f64> = sk.jumps().iter().map(|j| j.time).collect();
        let bm = BrownianPath::sample(self.seed, m as u64, self.fine_steps, horizon, &times)?;
        Ok((sk, bm))
    }

    fn check(&self, problem: &FbsdeProblem, level: f64, steps: usize) -> Result<()> {
        if steps == 0 || self.fine_steps % steps != 0 {
            return Err(Error::RefinementRequired(format!(
                "{steps} steps do not divide the Brownian grid of {} steps",
                self.fine_steps
            )));
        }
        if level > self.sampler.level() {
            return Err(Error::config(format!(
                "level {level} exceeds the plan's top level {}",
                self.sampler.level()
            )));
        }
        if (self.sampler.horizon() - problem.horizon).abs() > 1e-14 * problem.horizon {
            return Err(Error::config("sampler and problem horizons differ"));
        }
        Ok(())
    }
}

fn restricted(sk: &JumpSkeleton, level: &LevelMoments) -> Result<JumpSkeleton> {
    if level.level == sk.level() {
        let mut s = sk.clone();
        if s.zeta1() != level.zeta1 {
            s = s.restrict(level.level, level.zeta1)?;
        }
        Ok(s)
    } else {
        sk.restrict(level.level, level.zeta1)
    }
}

fn path_rows(
    problem: &FbsdeProblem,
    plan: &CouplingPlan,
    level: &LevelMoments,
    steps: usize,
    m: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (top, bm) = plan.path_noise(m, problem.horizon)?;
    let sk = restricted(&top, level)?;
    let x = simulate_regular_states(problem, &sk, &bm, steps)?;
    let mut db = Vec::with_capacity(steps);
    let mut w = Vec::with_capacity(steps);
    for k in 0..steps {
        db.push(bm.at_regular(steps, k + 1)? - bm.at_regular(steps, k)?);
        let (s, t) = (
            regular_time(problem.horizon, steps, k),
            regular_time(problem.horizon, steps, k + 1),
        );
        w.push(gamma_weight(&sk, s, t, problem.rho.as_ref(), level.zeta_rho));
    }
    Ok((x, db, w))
}

/// Regression input at `(level, steps)` built from the plan's paths.
pub fn coupled_input(
    problem: &FbsdeProblem,
    plan: &CouplingPlan,
    level: &LevelMoments,
    steps: usize,
) -> Result<RegressionInput> {
    plan.check(problem, level.level, steps)?;
    let mut input = RegressionInput::zeros(steps, problem.horizon, plan.paths);
    for start in (0..plan.paths).step_by(CHUNK) {
        let end = (start + CHUNK).min(plan.paths);
        let rows: Result<Vec<_>> = (start..end)
            .into_par_iter()
            .map(|m| path_rows(problem, plan, level, steps, m))
            .collect();
        for (i, (x, db, w)) in rows?.into_iter().enumerate() {
            input.set_path(start + i, &x, &db, &w);
        }
    }
    Ok(input)
}

/// The first `count` forward paths of the plan at `(level, steps)`, for dumping.
pub fn coupled_paths(
    problem: &FbsdeProblem,
    plan: &CouplingPlan,
    level: &LevelMoments,
    steps: usize,
    count: usize,
) -> Result<PathEnsemble> {
    plan.check(problem, level.level, steps)?;
    let paths: Result<Vec<_>> = (0..count.min(plan.paths))
        .into_par_iter()
        .map(|m| {
            let (top, bm) = plan.path_noise(m, problem.horizon)?;
            simulate_path(problem, restricted(&top, level)?, &bm, steps)
        })
        .collect();
    Ok(PathEnsemble {
        seed: plan.seed,
        steps,
        level: level.level,
        zeta1: level.zeta1,
        paths: paths?,
    })
}

/// Closed-form `(Y, Z, Γ)` evaluated along the paths of `input`.
pub fn closed_form_reference(
    benchmark: &BenchmarkProblem,
    input: &RegressionInput,
    kappa_rho: f64,
) -> BackwardSolution {
    let (n, m) = (input.steps, input.paths);
    let mut y = vec![0.0; (n + 1) * m];
    let mut z = vec![0.0; n * m];
    let mut gamma = vec![0.0; n * m];
    for k in 0..=n {
        let t = input.time(k);
        for (i, &x) in input.node_x(k).iter().enumerate() {
            y[k * m + i] = benchmark.y_exact(t, x);
            if k < n {
                z[k * m + i] = benchmark.z_exact(t, x);
                gamma[k * m + i] = benchmark.gamma_exact(t, x, kappa_rho);
            }
        }
    }
    BackwardSolution {
        steps: n,
        horizon: input.horizon,
        paths: m,
        y,
        z,
        gamma,
        diagnostics: vec![NodeDiagnostics::default(); n + 1],
        clip_level: None,
    }
}

/// Where reference solutions come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceMode {
    ClosedForm,
    /// Same paths at finer `steps` and higher `level`.
    Fine {
        steps: usize,
        level: f64,
    },
}

/// Strong forward errors at one step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongError {
    pub steps: usize,
    /// `(E|X_T^N - X_T^{ref}|^p)^{1/p}`.
    pub terminal: Estimate,
    /// `(E sup_k |X^N_{t_k} - X^{ref}_{t_k}|^p)^{1/p}`.
    pub sup: Estimate,
}

/// Forward strong errors against a run on `ref_steps` (the plan's fine grid)
/// using the same skeletons and Brownian paths. Only per-path errors are kept.
pub fn forward_strong_errors(
    problem: &FbsdeProblem,
    plan: &CouplingPlan,
    level: &LevelMoments,
    steps: &[usize],
    ref_steps: usize,
    p: f64,
) -> Result<Vec<StrongError>> {
    plan.check(problem, level.level, ref_steps)?;
    for &s in steps {
        if s == 0 || ref_steps % s != 0 {
            return Err(Error::RefinementRequired(format!(
                "{s} steps are not refined by {ref_steps}"
            )));
        }
    }
    let k = steps.len();
    let per_path: Result<Vec<Vec<f64>>> = (0..plan.paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|m| {
            let (top, bm) = plan.path_noise(m, problem.horizon)?;
            let sk = restricted(&top, level)?;
            let fine = simulate_regular_states(problem, &sk, &bm, ref_steps)?;
            let mut out = Vec::with_capacity(2 * k);
            for &s in steps {
                let coarse = simulate_regular_states(problem, &sk, &bm, s)?;
                let r = ref_steps / s;
                let term = (coarse[s] - fine[ref_steps]).abs().powf(p);
                let sup = (0..=s)
                    .map(|j| (coarse[j] - fine[j * r]).abs().powf(p))
                    .fold(0.0, f64::max);
                out.push(term);
                out.push(sup);
            }
            Ok(out)
        })
        .collect();
    let per_path = per_path?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let term: Vec<f64> = per_path.iter().map(|v| v[2 * i]).collect();
            let sup: Vec<f64> = per_path.iter().map(|v| v[2 * i + 1]).collect();
            StrongError {
                steps: s,
                terminal: power_mean(&term, p),
                sup: power_mean(&sup, p),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::{solve_backward, RegressionSpec};
    use crate::levy::LevyModel;
    use crate::shotnoise::Method;
    use approx::assert_relative_eq;

    fn sol(steps: usize, paths: usize, y: f64, z: impl Fn(usize) -> f64) -> BackwardSolution {
        BackwardSolution {
            steps,
            horizon: 1.0,
            paths,
            y: vec![y; (steps + 1) * paths],
            z: (0..steps * paths).map(|i| z(i / paths)).collect(),
            gamma: vec![0.0; steps * paths],
            diagnostics: vec![NodeDiagnostics::default(); steps + 1],
            clip_level: None,
        }
    }

    fn meta() -> ReportMeta {
        ReportMeta {
            n: 1.0,
            seed: 0,
            model: "m".into(),
            problem: "p".into(),
        }
    }

    #[test]
    fn norms_of_simple_differences() {
        let a = sol(4, 50, 1.0, |_| 0.0);
        let r = empirical_norms(&a, &a, 2.0, &meta()).unwrap();
        assert_eq!(r.sup_y_error.mean, 0.0);
        assert_eq!(r.z_error.mean, 0.0);
        let b = sol(8, 50, 1.25, |k| if k < 4 { 1.0 } else { 0.0 });
        let r = empirical_norms(&a, &b, 2.0, &meta()).unwrap();
        assert_relative_eq!(r.sup_y_error.mean, 0.25, epsilon = 1e-14);
        assert_relative_eq!(r.esup_y_error.mean, 0.25, epsilon = 1e-14);
        assert_relative_eq!(r.y0_error.mean, 0.25, epsilon = 1e-14);
        assert_relative_eq!(r.z_error.mean, 0.5f64.sqrt(), epsilon = 1e-14);
        let c = sol(6, 50, 0.0, |_| 0.0);
        assert!(matches!(
            empirical_norms(&a, &c, 2.0, &meta()),
            Err(Error::RefinementRequired(_))
        ));
        assert!(matches!(
            empirical_norms(&a, &sol(8, 40, 0.0, |_| 0.0), 2.0, &meta()),
            Err(Error::RefinementRequired(_))
        ));
    }

    #[test]
    fn synthetic_rates() {
        let pts: Vec<(f64, f64)> = [16.0, 32.0, 64.0, 128.0]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.powf(-0.5)))
            .collect();
        let f = rate_fit(&pts, Scale::LogLog).unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        let pts: Vec<(f64, f64)> = (1..=5).map(|n| (n as f64, 0.7 * (-(n as f64)).exp())).collect();
        let f = rate_fit(&pts, Scale::SemiLog).unwrap();
        assert_relative_eq!(f.slope, -1.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 0.7f64.ln(), epsilon = 1e-12);
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)], Scale::LogLog).is_err());
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 1.0)], Scale::LogLog).is_err());
    }

    fn plan(level: f64, fine: usize, paths: usize) -> (FbsdeProblem, SeriesRepresentation, CouplingPlan) {
        let p = FbsdeProblem::new("s", 0.5, 1.0)
            .unwrap()
            .with_drift(|_, x| x.sin())
            .with_diffusion(|_, x| 0.3 + 0.1 * x.cos())
            .with_constant_jump(0.2);
        let rep = SeriesRepresentation::new(&LevyModel::gamma(1.0, 1.0).unwrap(), Method::Bondesson).unwrap();
        let sampler = ShotNoiseSampler::new(&rep, level, 1.0).unwrap();
        (p, rep, CouplingPlan::new(3, paths, fine, sampler).unwrap())
    }

    #[test]
    fn fine_reference_at_same_resolution_is_the_run_itself() {
        let (p, rep, plan) = plan(6.0, 16, 200);
        let lm = LevelMoments::compute(&p, &rep, 6.0).unwrap();
        let a = coupled_input(&p, &plan, &lm, 16).unwrap();
        let b = coupled_input(&p, &plan, &lm, 16).unwrap();
        assert_eq!(a, b);
        let spec = RegressionSpec::default();
        let sa = solve_backward(&a, &p, &spec).unwrap();
        let r = empirical_norms(&sa, &solve_backward(&b, &p, &spec).unwrap(), 2.0, &meta()).unwrap();
        assert_eq!(r.sup_y_error.mean, 0.0);
        assert_eq!(forward_sup_error(&a, &b, 2.0).unwrap().mean, 0.0);
    }

    #[test]
    fn coupled_inputs_share_noise_across_resolutions() {
        let (p, rep, plan) = plan(6.0, 16, 50);
        let lm = LevelMoments::compute(&p, &rep, 6.0).unwrap();
        let c = coupled_input(&p, &plan, &lm, 4).unwrap();
        let f = coupled_input(&p, &plan, &lm, 16).unwrap();
        for m in 0..50 {
            let sum: f64 = (0..4).map(|j| f.node_db(j)[m]).sum();
            assert_relative_eq!(c.node_db(0)[m], sum, epsilon = 1e-12);
            let wsum: f64 = (0..4).map(|j| f.node_w(j)[m]).sum();
            assert_relative_eq!(c.node_w(0)[m], wsum, epsilon = 1e-12);
        }
        let low = LevelMoments::compute(&p, &rep, 2.0).unwrap();
        assert!(coupled_input(&p, &plan, &low, 16).is_ok());
        let high = LevelMoments::compute(&p, &rep, 9.0).unwrap();
        assert!(matches!(coupled_input(&p, &plan, &high, 16), Err(Error::Config(_))));
        assert!(matches!(
            coupled_input(&p, &plan, &lm, 5),
            Err(Error::RefinementRequired(_))
        ));
    }

    #[test]
    fn strong_errors_shrink_with_refinement() {
        let (p, rep, plan) = plan(5.0, 256, 400);
        let lm = LevelMoments::compute(&p, &rep, 5.0).unwrap();
        let e = forward_strong_errors(&p, &plan, &lm, &[4, 16, 64], 256, 2.0).unwrap();
        assert!(
            e[0].terminal.mean > e[1].terminal.mean && e[1].terminal.mean > e[2].terminal.mean,
            "{e:?}"
        );
        assert!(e.iter().all(|s| s.sup.mean >= s.terminal.mean));
    }

    #[test]
    fn closed_form_reference_matches_benchmark() {
        let b = fbsde::builtin_benchmarks().remove(0);
        let mut input = RegressionInput::zeros(2, 1.0, 1);
        input.set_path(0, &[1.0, 1.5, 2.0], &[0.0, 0.0], &[0.0, 0.0]);
        let r = closed_form_reference(&b, &input, 0.8);
        assert_relative_eq!(r.node_y(1)[0], 1.5 + 0.1 * 0.5, epsilon = 1e-15);
        assert_eq!(r.node_z(0)[0], 0.3);
        assert_relative_eq!(r.node_gamma(1)[0], 0.5 * 0.8, epsilon = 1e-15);
    }
}
