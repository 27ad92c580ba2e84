//! Implicit backward scheme with regression-estimated conditional expectations.
//!
//! On each interval `(t_k, t_{k+1}]` of the regular grid:
//!
//! ```text
//! Z̄_k = E[Ȳ_{k+1} ΔB_k | X_k] / Δ
//! Γ̄_k = E[Ȳ_{k+1} W_k | X_k] / Δ,   W_k = Σ ρ(J_i) J_i - Δ ζ_ρ(n)
//! Ȳ_k = E[Ȳ_{k+1} | X_k] + Δ f(t_k, X_k, Ȳ_k, Z̄_k, Γ̄_k)
//! ```
//!
//! Regressions run on the regular nodes, which every path shares; jump nodes
//! only refine the forward Euler scheme.

pub mod regression;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbsde::FbsdeProblem;
use crate::forward::{regular_time, PathEnsemble};
use crate::shotnoise::JumpSkeleton;
use crate::stats::{self, Estimate};
pub use regression::{Basis, ClipBound, FitDiagnostics, Projector, RegressionSpec};

const PICARD_TOL: f64 = 1e-12;
const PICARD_MAX: usize = 50;

/// `Σ ρ(J_i) J_i 1{s < T_i <= t} - (t - s) ζ_ρ`.
pub fn gamma_weight(skeleton: &JumpSkeleton, s: f64, t: f64, rho: &dyn Fn(f64) -> f64, zeta_rho: f64) -> f64 {
    skeleton.weighted_sum(s, t, |e| rho(e) * e) - (t - s) * zeta_rho
}

/// Regression data on the regular grid, stored node-major (`[k * paths + m]`).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionInput {
    pub steps: usize,
    pub horizon: f64,
    pub paths: usize,
    /// `X` at `t_0..=t_N`.
    pub x: Vec<f64>,
    /// `ΔB_k`, `k = 0..N`.
    pub db: Vec<f64>,
    /// Compensated weights `W_k`.
    pub w: Vec<f64>,
}

impl RegressionInput {
    pub fn zeros(steps: usize, horizon: f64, paths: usize) -> Self {
        Self {
            steps,
            horizon,
            paths,
            x: vec![0.0; (steps + 1) * paths],
            db: vec![0.0; steps * paths],
            w: vec![0.0; steps * paths],
        }
    }

    /// Stores path `m`: `x` has `N + 1` entries, `db` and `w` have `N`.
    pub fn set_path(&mut self, m: usize, x: &[f64], db: &[f64], w: &[f64]) {
        for k in 0..=self.steps {
            self.x[k * self.paths + m] = x[k];
        }
        for k in 0..self.steps {
            self.db[k * self.paths + m] = db[k];
            self.w[k * self.paths + m] = w[k];
        }
    }

    pub fn from_ensemble(ensemble: &PathEnsemble, problem: &FbsdeProblem, zeta_rho: f64) -> Result<Self> {
        let steps = ensemble.steps;
        let mut out = Self::zeros(steps, problem.horizon, ensemble.len());
        let mut x = vec![0.0; steps + 1];
        let mut db = vec![0.0; steps];
        let mut w = vec![0.0; steps];
        for (m, p) in ensemble.paths.iter().enumerate() {
            if p.grid.steps() != steps {
                return Err(Error::RefinementRequired(format!(
                    "path {m} uses {} regular steps, ensemble declares {steps}",
                    p.grid.steps()
                )));
            }
            for k in 0..=steps {
                x[k] = p.regular_state(k);
            }
            for k in 0..steps {
                let (i0, i1) = (p.grid.regular_index(k), p.grid.regular_index(k + 1));
                db[k] = p.brownian[i1] - p.brownian[i0];
                let (s, t) = (
                    regular_time(problem.horizon, steps, k),
                    regular_time(problem.horizon, steps, k + 1),
                );
                w[k] = gamma_weight(&p.skeleton, s, t, problem.rho.as_ref(), zeta_rho);
            }
            out.set_path(m, &x, &db, &w);
        }
        Ok(out)
    }

    pub fn node_x(&self, k: usize) -> &[f64] {
        &self.x[k * self.paths..(k + 1) * self.paths]
    }

    pub fn node_db(&self, k: usize) -> &[f64] {
        &self.db[k * self.paths..(k + 1) * self.paths]
    }

    pub fn node_w(&self, k: usize) -> &[f64] {
        &self.w[k * self.paths..(k + 1) * self.paths]
    }

    pub fn time(&self, k: usize) -> f64 {
        regular_time(self.horizon, self.steps, k)
    }

    /// Paths `range` as a standalone input.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        let len = range.len();
        let mut out = Self::zeros(self.steps, self.horizon, len);
        for k in 0..=self.steps {
            out.x[k * len..(k + 1) * len].copy_from_slice(&self.node_x(k)[range.clone()]);
        }
        for k in 0..self.steps {
            out.db[k * len..(k + 1) * len].copy_from_slice(&self.node_db(k)[range.clone()]);
            out.w[k * len..(k + 1) * len].copy_from_slice(&self.node_w(k)[range.clone()]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeDiagnostics {
    pub fit: FitDiagnostics,
    pub max_iterations: usize,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub gamma: Vec<f64>,
    pub diagnostics: NodeDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub steps: usize,
    pub horizon: f64,
    pub paths: usize,
    /// `Ȳ` node-major over `t_0..=t_N`.
    pub y: Vec<f64>,
    /// `Z̄`, `Γ̄` node-major over `t_0..t_N`.
    pub z: Vec<f64>,
    pub gamma: Vec<f64>,
    pub diagnostics: Vec<NodeDiagnostics>,
    pub clip_level: Option<f64>,
}

impl BackwardSolution {
    pub fn node_y(&self, k: usize) -> &[f64] {
        &self.y[k * self.paths..(k + 1) * self.paths]
    }

    pub fn node_z(&self, k: usize) -> &[f64] {
        &self.z[k * self.paths..(k + 1) * self.paths]
    }

    pub fn node_gamma(&self, k: usize) -> &[f64] {
        &self.gamma[k * self.paths..(k + 1) * self.paths]
    }

    pub fn y0(&self) -> f64 {
        stats::mean(self.node_y(0))
    }

    pub fn fixed_point_iters(&self) -> Vec<usize> {
        self.diagnostics.iter().map(|d| d.max_iterations).collect()
    }

    pub fn clipped(&self) -> usize {
        self.diagnostics.iter().map(|d| d.clipped).sum()
    }

    /// CSV summary: one row per node with path means and standard deviations.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "node,time,y_mean,y_sd,z_mean,z_sd,gamma_mean,gamma_sd,rank,iterations,clipped"
        )?;
        for k in 0..=self.steps {
            let y = self.node_y(k);
            let (zm, zs, gm, gs) = if k < self.steps {
                let (z, g) = (self.node_z(k), self.node_gamma(k));
                (
                    stats::mean(z),
                    stats::variance(z).sqrt(),
                    stats::mean(g),
                    stats::variance(g).sqrt(),
                )
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            let d = self.diagnostics.get(k).copied().unwrap_or_default();
            writeln!(
                w,
                "{k},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
                regular_time(self.horizon, self.steps, k),
                stats::mean(y),
                stats::variance(y).sqrt(),
                zm,
                zs,
                gm,
                gs,
                d.fit.rank,
                d.max_iterations,
                d.clipped
            )?;
        }
        Ok(())
    }
}

fn clip_level(input: &RegressionInput, problem: &FbsdeProblem, spec: &RegressionSpec) -> Option<f64> {
    match spec.truncation_bound {
        ClipBound::Off => None,
        ClipBound::Fixed(c) => Some(c),
        ClipBound::Auto => {
            let g_max = input
                .node_x(input.steps)
                .iter()
                .map(|&x| (problem.g)(x).abs())
                .fold(0.0, f64::max);
            Some(10.0 * g_max.max(1.0))
        }
    }
}

/// Solves `y = e + Δ f(t, x, y, z, γ)` by Picard iteration.
pub fn solve_implicit(
    problem: &FbsdeProblem,
    node: usize,
    t: f64,
    dt: f64,
    x: f64,
    e: f64,
    z: f64,
    g: f64,
) -> Result<(f64, usize)> {
    let mut y = e;
    for it in 1..=PICARD_MAX {
        let fy = (problem.f)(t, x, y, z, g);
        let next = e + dt * fy;
        if !next.is_finite() {
            return Err(Error::Numeric {
                t,
                x,
                what: format!("generator value {fy} at node {node}"),
            });
        }
        let residual = (next - y).abs();
        y = next;
        if residual <= PICARD_TOL * y.abs().max(1.0) {
            return Ok((y, it));
        }
        if it == PICARD_MAX {
            return Err(Error::FixedPoint {
                node,
                t,
                iterations: it,
                residual,
            });
        }
    }
    unreachable!("loop returns")
}

/// One backward step from `y_{k+1}` to node `k`.
pub fn backward_step(
    input: &RegressionInput,
    k: usize,
    y_next: &[f64],
    problem: &FbsdeProblem,
    spec: &RegressionSpec,
    clip: Option<f64>,
) -> Result<StepOutput> {
    let m = input.paths;
    if y_next.len() != m {
        return Err(Error::domain(format!("y has {} entries, expected {m}", y_next.len())));
    }
    if let Some(i) = y_next.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            t: input.time(k + 1),
            x: input.node_x(k + 1)[i],
            what: format!("non-finite y on path {i}"),
        });
    }
    let (t, t1) = (input.time(k), input.time(k + 1));
    let dt = t1 - t;
    let x = input.node_x(k);
    let projector = Projector::fit(x, spec)?;
    let e = projector.project(y_next)?;
    let base: Vec<f64> = if spec.centered_targets {
        y_next.iter().zip(&e).map(|(y, c)| y - c).collect()
    } else {
        y_next.to_vec()
    };
    let tz: Vec<f64> = base.iter().zip(input.node_db(k)).map(|(y, b)| y * b / dt).collect();
    let tg: Vec<f64> = base.iter().zip(input.node_w(k)).map(|(y, w)| y * w / dt).collect();
    let z = projector.project(&tz)?;
    let gamma = projector.project(&tg)?;

    let solved: Result<Vec<(f64, usize, bool)>> = (0..m)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let (y, it) = solve_implicit(problem, k, t, dt, x[i], e[i], z[i], gamma[i])?;
            Ok(match clip {
                Some(c) if y.abs() > c => (y.clamp(-c, c), it, true),
                _ => (y, it, false),
            })
        })
        .collect();
    let solved = solved?;
    let diagnostics = NodeDiagnostics {
        fit: projector.diagnostics(),
        max_iterations: solved.iter().map(|s| s.1).max().unwrap_or(0),
        clipped: solved.iter().filter(|s| s.2).count(),
    };
    Ok(StepOutput {
        y: solved.into_iter().map(|s| s.0).collect(),
        z,
        gamma,
        diagnostics,
    })
}

pub fn solve_backward(
    input: &RegressionInput,
    problem: &FbsdeProblem,
    spec: &RegressionSpec,
) -> Result<BackwardSolution> {
    spec.validate()?;
    if input.paths < spec.min_paths() {
        return Err(Error::InsufficientSamples {
            required: spec.min_paths(),
            available: input.paths,
        });
    }
    let (n, m) = (input.steps, input.paths);
    let clip = clip_level(input, problem, spec);
    let mut y = vec![0.0; (n + 1) * m];
    let mut z = vec![0.0; n * m];
    let mut gamma = vec![0.0; n * m];
    let mut diagnostics = vec![NodeDiagnostics::default(); n + 1];
    for (slot, &x) in y[n * m..].iter_mut().zip(input.node_x(n)) {
        *slot = (problem.g)(x);
        if !slot.is_finite() {
            return Err(Error::Numeric {
                t: input.horizon,
                x,
                what: "terminal value".into(),
            });
        }
    }
    for k in (0..n).rev() {
        let (head, tail) = y.split_at_mut((k + 1) * m);
        let out = backward_step(input, k, &tail[..m], problem, spec, clip)?;
        head[k * m..].copy_from_slice(&out.y);
        z[k * m..(k + 1) * m].copy_from_slice(&out.z);
        gamma[k * m..(k + 1) * m].copy_from_slice(&out.gamma);
        diagnostics[k] = out.diagnostics;
    }
    Ok(BackwardSolution {
        steps: n,
        horizon: input.horizon,
        paths: m,
        y,
        z,
        gamma,
        diagnostics,
        clip_level: clip,
    })
}

pub fn solve_ensemble(
    ensemble: &PathEnsemble,
    problem: &FbsdeProblem,
    zeta_rho: f64,
    spec: &RegressionSpec,
) -> Result<BackwardSolution> {
    solve_backward(
        &RegressionInput::from_ensemble(ensemble, problem, zeta_rho)?,
        problem,
        spec,
    )
}

/// `Y_0` with a batch-means standard error from independent re-solves on
/// `batches` disjoint path groups.
/// Standard error of `Y_0` from independent re-solves on disjoint path subsets.
/// Uses at most `batches` subsets, fewer if a subset would drop below the
/// basis' minimum path count.
pub fn y0_batch_std_error(
    input: &RegressionInput,
    problem: &FbsdeProblem,
    spec: &RegressionSpec,
    batches: usize,
) -> Result<f64> {
    let batches = batches.min(input.paths / spec.min_paths().max(1));
    if batches < 2 {
        return Err(Error::InsufficientSamples {
            required: 2 * spec.min_paths(),
            available: input.paths,
        });
    }
    let size = input.paths / batches;
    let values: Result<Vec<f64>> = (0..batches)
        .map(|b| {
            let sub = input.subset(b * size..(b + 1) * size);
            Ok(solve_backward(&sub, problem, spec)?.y0())
        })
        .collect();
    Ok(stats::mean_estimate(&values?).std_error)
}

pub fn y0_estimate(
    input: &RegressionInput,
    problem: &FbsdeProblem,
    spec: &RegressionSpec,
    batches: usize,
) -> Result<(f64, Estimate)> {
    let full = solve_backward(input, problem, spec)?.y0();
    Ok((
        full,
        Estimate {
            mean: full,
            std_error: y0_batch_std_error(input, problem, spec, batches)?,
        },
    ))
}
