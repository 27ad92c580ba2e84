//! Decoupled FBSDE problems
//!
//! ```text
//! X_t = X_0 + ∫ b(s, X_s) ds + ∫ a(s, X_s) dB_s + ∫∫ h(s, X_{s-}) e μ̃(de, ds)
//! Y_t = g(X_T) + ∫ f(s, X_s, Y_s, Z_s, Γ_s) ds - ∫ Z_s dB_s - ∫∫ U_s(e) e μ̃(de, ds)
//! ```
//!
//! and the closed-form benchmark instances.

pub mod expr;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::levy::{self, Functional, LevyKind};
use crate::shotnoise::{Mark, MarkDistribution, SeriesRepresentation};
use expr::{Expr, Var};

pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type Generator = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct FbsdeProblem {
    pub name: String,
    pub b: Coefficient,
    pub a: Coefficient,
    pub h: Coefficient,
    /// `f(t, x, y, z, γ)`.
    pub f: Generator,
    pub g: ScalarFn,
    pub rho: ScalarFn,
    /// `∂h/∂x`, needed to check invertibility of `x ↦ x + h(t, x) e`.
    pub hx: Option<Coefficient>,
    pub x0: f64,
    pub horizon: f64,
    pub lipschitz_k: f64,
    /// `h` does not depend on `(t, x)`.
    pub h_constant: bool,
}

impl fmt::Debug for FbsdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FbsdeProblem")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("h_constant", &self.h_constant)
            .field("has_hx", &self.hx.is_some())
            .finish_non_exhaustive()
    }
}

fn constant_coef(c: f64) -> Coefficient {
    Arc::new(move |_, _| c)
}

impl FbsdeProblem {
    /// Zero forward coefficients, `f ≡ 0`, `g(x) = x`, `ρ(e) = 1 ∧ |e|`, `K = 1`.
    pub fn new(name: impl Into<String>, x0: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        if !x0.is_finite() {
            return Err(Error::domain("initial state must be finite"));
        }
        Ok(Self {
            name: name.into(),
            b: constant_coef(0.0),
            a: constant_coef(0.0),
            h: constant_coef(0.0),
            f: Arc::new(|_, _, _, _, _| 0.0),
            g: Arc::new(|x| x),
            rho: Arc::new(|e: f64| e.abs().min(1.0)),
            hx: Some(constant_coef(0.0)),
            x0,
            horizon,
            lipschitz_k: 1.0,
            h_constant: true,
        })
    }

    pub fn with_drift(mut self, b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.b = Arc::new(b);
        self
    }

    pub fn with_diffusion(mut self, a: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.a = Arc::new(a);
        self
    }

    /// State-dependent jump coefficient with unknown derivative.
    pub fn with_jump(mut self, h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.h = Arc::new(h);
        self.hx = None;
        self.h_constant = false;
        self
    }

    pub fn with_jump_and_derivative(
        mut self,
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        hx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.h = Arc::new(h);
        self.hx = Some(Arc::new(hx));
        self.h_constant = false;
        self
    }

    pub fn with_constant_jump(mut self, h0: f64) -> Self {
        self.h = constant_coef(h0);
        self.hx = Some(constant_coef(0.0));
        self.h_constant = true;
        self
    }

    pub fn with_generator(mut self, f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn with_terminal(mut self, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g = Arc::new(g);
        self
    }

    pub fn with_rho(mut self, rho: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.rho = Arc::new(rho);
        self
    }

    pub fn with_lipschitz(mut self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::domain(format!("Lipschitz constant must be positive, got {k}")));
        }
        self.lipschitz_k = k;
        Ok(self)
    }

    /// Builds a problem from expression sources; `hx` is derived symbolically.
    pub fn from_expressions(name: impl Into<String>, x0: f64, horizon: f64, src: &ExpressionSet) -> Result<Self> {
        let parse = |s: &Option<String>, default: &str, allowed: &[Var], role: &str| -> Result<Expr> {
            let e = Expr::parse(s.as_deref().unwrap_or(default)).map_err(|e| match e {
                Error::Parse { column, message } => Error::Parse {
                    column,
                    message: format!("in {role}: {message}"),
                },
                other => other,
            })?;
            e.check_variables(allowed, role)?;
            Ok(e)
        };
        let tx = [Var::T, Var::X];
        let b = parse(&src.b, "0", &tx, "drift b")?;
        let a = parse(&src.a, "0", &tx, "diffusion a")?;
        let h = parse(&src.h, "0", &tx, "jump coefficient h")?;
        let f = parse(
            &src.f,
            "0",
            &[Var::T, Var::X, Var::Y, Var::Z, Var::Gamma],
            "generator f",
        )?;
        let g = parse(&src.g, "x", &[Var::X], "terminal g")?;
        let rho = parse(&src.rho, "min(1, abs(e))", &[Var::E], "weight rho")?;
        let hx = h.derivative(Var::X);
        let h_constant = h.is_constant();

        let coef = |e: Expr| -> Coefficient { Arc::new(move |t, x| e.eval(&expr::env(t, x, 0.0, 0.0, 0.0, 0.0))) };
        let mut p = Self::new(name, x0, horizon)?;
        p.b = coef(b);
        p.a = coef(a);
        p.h = coef(h);
        p.hx = Some(coef(hx));
        p.h_constant = h_constant;
        p.f = Arc::new(move |t, x, y, z, q| f.eval(&expr::env(t, x, y, z, q, 0.0)));
        p.g = Arc::new(move |x| g.eval(&expr::env(0.0, x, 0.0, 0.0, 0.0, 0.0)));
        p.rho = Arc::new(move |e| rho.eval(&expr::env(0.0, 0.0, 0.0, 0.0, 0.0, e)));
        p.lipschitz_k = src.lipschitz_k.unwrap_or(1.0);
        if !(p.lipschitz_k > 0.0) {
            return Err(Error::config("Lipschitz constant must be positive"));
        }
        Ok(p)
    }
}

/// Coefficient sources for [`FbsdeProblem::from_expressions`]; `None` selects the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpressionSet {
    pub b: Option<String>,
    pub a: Option<String>,
    pub h: Option<String>,
    pub f: Option<String>,
    pub g: Option<String>,
    pub rho: Option<String>,
    pub lipschitz_k: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchmarkKind {
    /// `f ≡ 0`, `g(x) = x`, constant `b0, a0, h0`.
    ZeroGenerator { b0: f64, a0: f64, h0: f64 },
    /// `f = -r y`, `g(x) = x`, constant `b0, a0, h0`.
    Discounting { r: f64, b0: f64, a0: f64, h0: f64 },
    /// `b ≡ 0`, `a ≡ 1`, `h ≡ 0`, `f ≡ 0`, `g(x) = x`.
    PureDiffusion,
}

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub problem: FbsdeProblem,
    pub kind: BenchmarkKind,
    pub notes: &'static str,
}

impl BenchmarkProblem {
    pub fn zero_generator(b0: f64, a0: f64, h0: f64, x0: f64, horizon: f64) -> Result<Self> {
        let problem = FbsdeProblem::new("B1", x0, horizon)?
            .with_drift(move |_, _| b0)
            .with_diffusion(move |_, _| a0)
            .with_constant_jump(h0);
        Ok(Self {
            problem,
            kind: BenchmarkKind::ZeroGenerator { b0, a0, h0 },
            notes: "Y = X + b0 (T - t), Z = a0, U = h0",
        })
    }

    pub fn discounting(r: f64, b0: f64, a0: f64, h0: f64, x0: f64, horizon: f64) -> Result<Self> {
        let problem = FbsdeProblem::new("B2", x0, horizon)?
            .with_drift(move |_, _| b0)
            .with_diffusion(move |_, _| a0)
            .with_constant_jump(h0)
            .with_generator(move |_, _, y, _, _| -r * y)
            .with_lipschitz(r.abs().max(1.0))?;
        Ok(Self {
            problem,
            kind: BenchmarkKind::Discounting { r, b0, a0, h0 },
            notes: "Y = e^{-r(T-t)} (X + b0 (T - t)), Z = e^{-r(T-t)} a0, U = e^{-r(T-t)} h0",
        })
    }

    pub fn pure_diffusion(horizon: f64) -> Result<Self> {
        let problem = FbsdeProblem::new("B3", 0.0, horizon)?.with_diffusion(|_, _| 1.0);
        Ok(Self {
            problem,
            kind: BenchmarkKind::PureDiffusion,
            notes: "Y = X = B, Z = 1, Gamma = 0",
        })
    }

    fn discount(&self, t: f64) -> f64 {
        match self.kind {
            BenchmarkKind::Discounting { r, .. } => (-r * (self.problem.horizon - t)).exp(),
            _ => 1.0,
        }
    }

    pub fn y_exact(&self, t: f64, x: f64) -> f64 {
        let tau = self.problem.horizon - t;
        match self.kind {
            BenchmarkKind::ZeroGenerator { b0, .. } => x + b0 * tau,
            BenchmarkKind::Discounting { b0, .. } => self.discount(t) * (x + b0 * tau),
            BenchmarkKind::PureDiffusion => x,
        }
    }

    pub fn z_exact(&self, t: f64, _x: f64) -> f64 {
        match self.kind {
            BenchmarkKind::ZeroGenerator { a0, .. } => a0,
            BenchmarkKind::Discounting { a0, .. } => self.discount(t) * a0,
            BenchmarkKind::PureDiffusion => 1.0,
        }
    }

    /// Jump integrand `U_t(e)` (constant in `e`).
    pub fn u_exact(&self, t: f64, _x: f64) -> f64 {
        match self.kind {
            BenchmarkKind::ZeroGenerator { h0, .. } => h0,
            BenchmarkKind::Discounting { h0, .. } => self.discount(t) * h0,
            BenchmarkKind::PureDiffusion => 0.0,
        }
    }

    /// Limit of the scheme's `Γ̄` estimator: `U_t · κ_ρ(n)` with
    /// `κ_ρ(n) = ∫ ρ(e) e² ν^n(de)` (see [`rho_weighted_moments`]).
    pub fn gamma_exact(&self, t: f64, x: f64, kappa_rho: f64) -> f64 {
        self.u_exact(t, x) * kappa_rho
    }

    /// `Y_0` of the discrete implicit scheme on a uniform grid of `steps`
    /// intervals with exact conditional expectations.
    pub fn discrete_y0(&self, steps: usize) -> f64 {
        let big_t = self.problem.horizon;
        let x0 = self.problem.x0;
        match self.kind {
            BenchmarkKind::ZeroGenerator { b0, .. } => x0 + b0 * big_t,
            BenchmarkKind::Discounting { r, b0, .. } => {
                let dt = big_t / steps as f64;
                (1.0 + r * dt).powi(-(steps as i32)) * (x0 + b0 * big_t)
            }
            BenchmarkKind::PureDiffusion => x0,
        }
    }
}

/// B1, B2 (`r = 0.5`) and B3 with `b0 = 0.1`, `a0 = 0.3`, `h0 = 0.5`, `X_0 = 1`, `T = 1`.
pub fn builtin_benchmarks() -> Vec<BenchmarkProblem> {
    vec![
        BenchmarkProblem::zero_generator(0.1, 0.3, 0.5, 1.0, 1.0).expect("valid constants"),
        BenchmarkProblem::discounting(0.5, 0.1, 0.3, 0.5, 1.0, 1.0).expect("valid constants"),
        BenchmarkProblem::pure_diffusion(1.0).expect("valid constants"),
    ]
}

/// `(ζ_ρ(n), κ_ρ(n)) = (∫ ρ(e) e ν^n(de), ∫ ρ(e) e² ν^n(de))`.
pub fn rho_weighted_moments(
    problem: &FbsdeProblem,
    representation: &SeriesRepresentation,
    n: f64,
) -> Result<(f64, f64)> {
    let rho = problem.rho.clone();
    let r1 = rho.clone();
    let first = move |e: f64| r1(e) * e;
    let second = move |e: f64| rho(e) * e * e;
    Ok((
        levy::retained_functional(representation, n, &Functional::Custom(&first))?,
        levy::retained_functional(representation, n, &Functional::Custom(&second))?,
    ))
}

/// Grid for the sampling-based checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub t_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_points: usize,
    /// Quantile levels per axis used to pick jump sizes from `ν^n`.
    pub e_points: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            t_points: 5,
            x_min: -5.0,
            x_max: 5.0,
            x_points: 41,
            e_points: 16,
        }
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k <= 1 {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

fn quantile_mark(dist: MarkDistribution, u: f64, w: f64) -> Mark {
    let exp_q = |u: f64| -(1.0 - u).ln();
    match dist {
        MarkDistribution::Degenerate => Mark::None,
        MarkDistribution::Uniform => Mark::Uniform(u),
        MarkDistribution::Exponential => Mark::Exponential(exp_q(u)),
        MarkDistribution::ExponentialUniform => Mark::ExponentialUniform { v: exp_q(u), u: w },
    }
}

/// Deterministic jump sizes in the support of `ν^n`: atoms for a finite
/// measure, otherwise `H(r, v)` on a grid of epochs and mark quantiles.
pub fn jump_size_proxies(representation: &SeriesRepresentation, n: f64, points: usize) -> Result<Vec<f64>> {
    if !(n > 0.0) {
        return Err(Error::domain("truncation level must be positive"));
    }
    let mut out = Vec::new();
    if let LevyKind::CompoundPoisson { atoms } = representation.model().kind() {
        let mut start = 0.0;
        for a in atoms {
            if start < n {
                out.push(a.size);
            }
            start += a.weight;
        }
        return Ok(out);
    }
    let k = points.max(1);
    let levels: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
    let dist = representation.mark_distribution();
    let second: &[f64] = if dist == MarkDistribution::ExponentialUniform {
        &levels
    } else {
        &[0.5]
    };
    let first: &[f64] = if dist == MarkDistribution::Degenerate {
        &[0.5]
    } else {
        &levels
    };
    for &rq in &levels {
        let r = n * rq;
        for &u in first {
            for &w in second {
                let e = representation.jump(r, &quantile_mark(dist, u, w))?;
                if e != 0.0 {
                    out.push(e);
                }
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotCheckable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption2Report {
    pub status: CheckStatus,
    /// `K^{-1}`, the required distance of `ℓ` from zero.
    pub bound: f64,
    pub min_abs_ell: f64,
    /// Worst offending `(t, x, e, ℓ)` when the check fails.
    pub violation: Option<(f64, f64, f64, f64)>,
    pub points_checked: usize,
    pub message: String,
}

/// Checks `ℓ(t, x; e) = h_x(t, x) e + 1` stays on one side of `±K^{-1}` for
/// each sampled `e`, uniformly over the `(t, x)` grid.
pub fn validate_assumption2(
    problem: &FbsdeProblem,
    representation: &SeriesRepresentation,
    n: f64,
    spec: &SampleSpec,
) -> Result<Assumption2Report> {
    let bound = 1.0 / problem.lipschitz_k;
    let Some(hx) = problem.hx.as_ref() else {
        return Ok(Assumption2Report {
            status: CheckStatus::NotCheckable,
            bound,
            min_abs_ell: f64::NAN,
            violation: None,
            points_checked: 0,
            message: "no derivative of h supplied".into(),
        });
    };
    let es = jump_size_proxies(representation, n, spec.e_points)?;
    let ts = linspace(0.0, problem.horizon, spec.t_points);
    let xs = linspace(spec.x_min, spec.x_max, spec.x_points);
    let mut slopes = Vec::with_capacity(ts.len() * xs.len());
    for &t in &ts {
        for &x in &xs {
            let d = hx(t, x);
            if !d.is_finite() {
                return Err(Error::Numeric {
                    t,
                    x,
                    what: "h_x is not finite".into(),
                });
            }
            slopes.push((t, x, d));
        }
    }
    let mut min_abs = f64::INFINITY;
    let mut worst: Option<(f64, f64, f64, f64)> = None;
    let mut checked = 0;
    for &e in &es {
        let (mut lo, mut hi) = ((0.0, 0.0, f64::INFINITY), (0.0, 0.0, f64::NEG_INFINITY));
        for &(t, x, d) in &slopes {
            let ell = d * e + 1.0;
            checked += 1;
            min_abs = min_abs.min(ell.abs());
            if ell < lo.2 {
                lo = (t, x, ell);
            }
            if ell > hi.2 {
                hi = (t, x, ell);
            }
        }
        let ok = lo.2 >= bound || hi.2 <= -bound;
        if !ok {
            // the point closest to the forbidden band's centre
            let cand = if lo.2.abs() <= hi.2.abs() { lo } else { hi };
            let cand = slopes
                .iter()
                .map(|&(t, x, d)| (t, x, d * e + 1.0))
                .fold(cand, |acc, p| if p.2.abs() < acc.2.abs() { p } else { acc });
            if worst.is_none_or(|w| cand.2.abs() < w.3.abs()) {
                worst = Some((cand.0, cand.1, e, cand.2));
            }
        }
    }
    let status = if worst.is_some() {
        CheckStatus::Fail
    } else {
        CheckStatus::Pass
    };
    let message = match worst {
        Some((t, x, e, ell)) => format!("l(t={t}, x={x}; e={e}) = {ell} lies inside (-{bound}, {bound})"),
        None => format!("|l| >= {bound} with a constant sign per e on {checked} points"),
    };
    Ok(Assumption2Report {
        status,
        bound,
        min_abs_ell: min_abs,
        violation: worst,
        points_checked: checked,
        message,
    })
}

/// Largest `|ρ(e)| / (1 ∧ |e|)` on a log-spaced grid of both signs, and
/// whether it stays below `K`.
pub fn check_rho_bound(problem: &FbsdeProblem) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    for i in 0..=120 {
        let m = 10f64.powf(-6.0 + 9.0 * i as f64 / 120.0);
        for e in [m, -m] {
            worst = worst.max((problem.rho)(e).abs() / m.min(1.0));
        }
    }
    (worst, worst <= problem.lipschitz_k * (1.0 + 1e-9))
}

/// Finite-difference Lipschitz estimates in the state arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzReport {
    pub b: f64,
    pub a: f64,
    pub h: f64,
    pub g: f64,
    /// Largest of the slopes of `f` in `x`, `y`, `z` and `γ`.
    pub f: f64,
    pub consistent: bool,
}

pub fn estimate_lipschitz(problem: &FbsdeProblem, spec: &SampleSpec) -> LipschitzReport {
    let ts = linspace(0.0, problem.horizon, spec.t_points);
    let xs = linspace(spec.x_min, spec.x_max, spec.x_points);
    let step = 1e-5 * (1.0 + (spec.x_max - spec.x_min).abs());
    let slope = |u: f64, v: f64| ((u - v) / step).abs();
    let (mut lb, mut la, mut lh, mut lg, mut lf) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let aux = [-2.0, 0.0, 2.0];
    for &t in &ts {
        for &x in &xs {
            lb = lb.max(slope((problem.b)(t, x + step), (problem.b)(t, x)));
            la = la.max(slope((problem.a)(t, x + step), (problem.a)(t, x)));
            lh = lh.max(slope((problem.h)(t, x + step), (problem.h)(t, x)));
            for &y in &aux {
                for &z in &aux {
                    for &q in &aux {
                        let base = (problem.f)(t, x, y, z, q);
                        lf = lf
                            .max(slope((problem.f)(t, x + step, y, z, q), base))
                            .max(slope((problem.f)(t, x, y + step, z, q), base))
                            .max(slope((problem.f)(t, x, y, z + step, q), base))
                            .max(slope((problem.f)(t, x, y, z, q + step), base));
                    }
                }
            }
        }
    }
    for &x in &xs {
        lg = lg.max(slope((problem.g)(x + step), (problem.g)(x)));
    }
    let k = problem.lipschitz_k * (1.0 + 1e-4);
    LipschitzReport {
        b: lb,
        a: la,
        h: lh,
        g: lg,
        f: lf,
        consistent: lb + la + lh + lg <= k && lf <= k,
    }
}
