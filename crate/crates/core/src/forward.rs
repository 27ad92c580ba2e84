//! Jump-adapted Euler scheme for the truncated forward SDE.
//!
//! The grid is the union of `{kT/N}` and the skeleton's jump times. The
//! Brownian path is sampled on a regular grid of `fine_steps` intervals (a
//! multiple of every `N` in a study) and bridged to the jump times, so runs
//! with different `N` or truncation levels share the same noise.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbsde::FbsdeProblem;
use crate::rng::{Purpose, RngStream};
use crate::shotnoise::{JumpSkeleton, ShotNoiseSampler};

/// Relative width below which two grid times are merged.
pub const MERGE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeTag {
    Regular,
    Jump,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpAdaptedGrid {
    horizon: f64,
    steps: usize,
    nodes: Vec<f64>,
    tags: Vec<NodeTag>,
    /// Sum of the jumps landing at each node (zero at regular nodes).
    jump_sums: Vec<f64>,
    /// Node index of the regular time `kT/N`.
    regular: Vec<usize>,
}

pub fn regular_time(horizon: f64, steps: usize, k: usize) -> f64 {
    if k == steps {
        horizon
    } else {
        horizon * k as f64 / steps as f64
    }
}

impl JumpAdaptedGrid {
    pub fn build(steps: usize, horizon: f64, skeleton: &JumpSkeleton) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("grid needs at least one regular step"));
        }
        if (skeleton.horizon() - horizon).abs() > MERGE_TOL * horizon {
            return Err(Error::config(format!(
                "skeleton horizon {} does not match the grid horizon {horizon}",
                skeleton.horizon()
            )));
        }
        let tol = MERGE_TOL * horizon;
        let jumps = skeleton.jumps();
        let mut nodes = Vec::with_capacity(steps + 1 + jumps.len());
        let mut tags = Vec::with_capacity(nodes.capacity());
        let mut sums = Vec::with_capacity(nodes.capacity());
        let mut regular = Vec::with_capacity(steps + 1);
        nodes.push(0.0);
        tags.push(NodeTag::Regular);
        sums.push(0.0);
        regular.push(0);

        let mut pending = 0.0;
        let mut has_pending = false;
        let mut j = 0;
        for k in 1..=steps {
            let r = regular_time(horizon, steps, k);
            while j < jumps.len() && jumps[j].time < r - tol {
                let last = *nodes.last().expect("nonempty");
                let jump = jumps[j];
                j += 1;
                if jump.time - last <= tol {
                    if nodes.len() == 1 {
                        // no jump can land on t = 0; carry it to the next node
                        pending += jump.size;
                        has_pending = true;
                    } else {
                        *sums.last_mut().expect("nonempty") += jump.size;
                        let tag = tags.last_mut().expect("nonempty");
                        if *tag == NodeTag::Regular {
                            *tag = NodeTag::Both;
                        }
                    }
                    continue;
                }
                nodes.push(jump.time);
                tags.push(NodeTag::Jump);
                sums.push(jump.size + std::mem::take(&mut pending));
                has_pending = false;
            }
            let mut at = std::mem::take(&mut pending);
            let mut tag = if has_pending { NodeTag::Both } else { NodeTag::Regular };
            has_pending = false;
            while j < jumps.len() && jumps[j].time <= r + tol {
                at += jumps[j].size;
                tag = NodeTag::Both;
                j += 1;
            }
            regular.push(nodes.len());
            nodes.push(r);
            tags.push(tag);
            sums.push(at);
        }
        debug_assert!(j == jumps.len(), "jump beyond horizon");
        Ok(Self {
            horizon,
            steps,
            nodes,
            tags,
            jump_sums: sums,
            regular,
        })
    }

    pub fn regular_only(steps: usize, horizon: f64) -> Result<Self> {
        Self::build(steps, horizon, &JumpSkeleton::empty(horizon, 0.0, 0.0)?)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn jump_sums(&self) -> &[f64] {
        &self.jump_sums
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node index of `kT/N`.
    pub fn regular_index(&self, k: usize) -> usize {
        self.regular[k]
    }

    pub fn regular_indices(&self) -> &[usize] {
        &self.regular
    }

    /// Index of `τ_t = max{t_k <= t}`.
    pub fn last_index_at(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::domain(format!("t = {t} is outside [0, {}]", self.horizon)));
        }
        Ok(self.nodes.partition_point(|&s| s <= t) - 1)
    }

    /// `τ_t`.
    pub fn last_node_at(&self, t: f64) -> Result<f64> {
        Ok(self.nodes[self.last_index_at(t)?])
    }
}

/// Brownian path on a fine regular grid plus bridge values at jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    horizon: f64,
    fine_steps: usize,
    values: Vec<f64>,
    /// `(time, B(time))` sorted by time.
    bridge: Vec<(f64, f64)>,
}

impl BrownianPath {
    pub fn sample(seed: u64, path: u64, fine_steps: usize, horizon: f64, jump_times: &[f64]) -> Result<Self> {
        if fine_steps == 0 {
            return Err(Error::domain("Brownian grid needs at least one step"));
        }
        let mut rng = RngStream::new(seed, path, Purpose::Brownian);
        let sd = (horizon / fine_steps as f64).sqrt();
        let mut values = Vec::with_capacity(fine_steps + 1);
        let mut b = 0.0;
        values.push(b);
        for _ in 0..fine_steps {
            b += sd * rng.normal();
            values.push(b);
        }
        let mut times: Vec<f64> = jump_times.to_vec();
        times.sort_by(f64::total_cmp);
        let mut bridge = Vec::with_capacity(times.len());
        let mut brng = RngStream::new(seed, path, Purpose::Bridge);
        let dt = horizon / fine_steps as f64;
        let mut anchor: Option<(usize, f64, f64)> = None;
        for &u in &times {
            let cell = ((u / dt).floor() as usize).min(fine_steps - 1);
            let right_t = regular_time(horizon, fine_steps, cell + 1);
            let right_b = values[cell + 1];
            let (left_t, left_b) = match anchor {
                Some((c, t, v)) if c == cell => (t, v),
                _ => (regular_time(horizon, fine_steps, cell), values[cell]),
            };
            let span = right_t - left_t;
            let w = if span > 0.0 {
                ((u - left_t) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let var = (u - left_t).max(0.0) * (right_t - u).max(0.0) / span.max(f64::MIN_POSITIVE);
            let v = left_b + w * (right_b - left_b) + var.sqrt() * brng.normal();
            bridge.push((u, v));
            anchor = Some((cell, u, v));
        }
        Ok(Self {
            horizon,
            fine_steps,
            values,
            bridge,
        })
    }

    pub fn fine_steps(&self) -> usize {
        self.fine_steps
    }

    pub fn fine_values(&self) -> &[f64] {
        &self.values
    }

    /// `B(kT/N)`; `N` must divide the fine step count.
    pub fn at_regular(&self, steps: usize, k: usize) -> Result<f64> {
        if steps == 0 || self.fine_steps % steps != 0 {
            return Err(Error::RefinementRequired(format!(
                "{steps} steps do not divide the Brownian grid of {} steps",
                self.fine_steps
            )));
        }
        Ok(self.values[k * (self.fine_steps / steps)])
    }

    pub fn at_jump(&self, t: f64) -> Result<f64> {
        let i = self.bridge.partition_point(|&(s, _)| s < t);
        match self.bridge.get(i) {
            Some(&(s, v)) if s == t => Ok(v),
            _ => Err(Error::domain(format!("no bridge value at jump time {t}"))),
        }
    }

    /// Values at every node of `grid`.
    pub fn on_grid(&self, grid: &JumpAdaptedGrid) -> Result<Vec<f64>> {
        let mut out = vec![0.0; grid.len()];
        let mut k = 0;
        for (i, (&t, &tag)) in grid.nodes().iter().zip(grid.tags()).enumerate() {
            out[i] = if tag == NodeTag::Jump {
                self.at_jump(t)?
            } else {
                let v = self.at_regular(grid.steps(), k)?;
                k += 1;
                v
            };
        }
        Ok(out)
    }
}

/// One Euler step over `(t_k, t_{k+1}]` with coefficients frozen at the left node:
/// `x' = x + b Δ + a ΔB + h (J - Δ ζ)`.
pub fn euler_step(problem: &FbsdeProblem, zeta1: f64, x: f64, t0: f64, t1: f64, db: f64, jump: f64) -> Result<f64> {
    let dt = t1 - t0;
    if !(dt > 0.0) {
        return Err(Error::domain(format!("Euler step needs t0 < t1, got ({t0}, {t1})")));
    }
    let b = (problem.b)(t0, x);
    let a = (problem.a)(t0, x);
    let h = (problem.h)(t0, x);
    if !(b.is_finite() && a.is_finite() && h.is_finite()) {
        return Err(Error::Numeric {
            t: t0,
            x,
            what: format!("coefficients b={b}, a={a}, h={h}"),
        });
    }
    let next = x + b * dt + a * db + h * (jump - dt * zeta1);
    if !next.is_finite() {
        return Err(Error::Numeric {
            t: t1,
            x,
            what: "state overflow".into(),
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPath {
    pub grid: JumpAdaptedGrid,
    /// `X^{n,π}` at every node.
    pub states: Vec<f64>,
    /// `B` at every node.
    pub brownian: Vec<f64>,
    pub skeleton: JumpSkeleton,
}

impl ForwardPath {
    /// Increment `B_{t_i} - B_{t_{i-1}}` of node interval `i >= 1`.
    pub fn brownian_increment(&self, i: usize) -> f64 {
        self.brownian[i] - self.brownian[i - 1]
    }

    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("grid has at least two nodes")
    }

    /// State at the regular time `kT/N`.
    pub fn regular_state(&self, k: usize) -> f64 {
        self.states[self.grid.regular_index(k)]
    }
}

/// Runs the scheme on the jump-adapted grid of `skeleton`.
pub fn simulate_path(
    problem: &FbsdeProblem,
    skeleton: JumpSkeleton,
    brownian: &BrownianPath,
    steps: usize,
) -> Result<ForwardPath> {
    let grid = JumpAdaptedGrid::build(steps, problem.horizon, &skeleton)?;
    let bvals = brownian.on_grid(&grid)?;
    let zeta = skeleton.zeta1();
    let mut states = Vec::with_capacity(grid.len());
    let mut x = problem.x0;
    states.push(x);
    let nodes = grid.nodes();
    for i in 1..grid.len() {
        x = euler_step(
            problem,
            zeta,
            x,
            nodes[i - 1],
            nodes[i],
            bvals[i] - bvals[i - 1],
            grid.jump_sums()[i],
        )?;
        states.push(x);
    }
    Ok(ForwardPath {
        grid,
        states,
        brownian: bvals,
        skeleton,
    })
}

/// Like [`simulate_path`] but keeps only the states at regular nodes.
pub fn simulate_regular_states(
    problem: &FbsdeProblem,
    skeleton: &JumpSkeleton,
    brownian: &BrownianPath,
    steps: usize,
) -> Result<Vec<f64>> {
    let grid = JumpAdaptedGrid::build(steps, problem.horizon, skeleton)?;
    let bvals = brownian.on_grid(&grid)?;
    let zeta = skeleton.zeta1();
    let nodes = grid.nodes();
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = problem.x0;
    out.push(x);
    for i in 1..grid.len() {
        x = euler_step(
            problem,
            zeta,
            x,
            nodes[i - 1],
            nodes[i],
            bvals[i] - bvals[i - 1],
            grid.jump_sums()[i],
        )?;
        if grid.tags()[i] != NodeTag::Jump {
            out.push(x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    /// Brownian grid resolution; `None` uses the scheme's own step count.
    pub fine_steps: Option<usize>,
    /// Upper bound on the estimated memory footprint in bytes.
    pub max_bytes: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            fine_steps: None,
            max_bytes: 3 << 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub seed: u64,
    pub steps: usize,
    pub level: f64,
    pub zeta1: f64,
    pub paths: Vec<ForwardPath>,
}

pub const PATH_DUMP_VERSION: u32 = 1;

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Long-format CSV: `path,node,time,tag,state,brownian,jump`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# path dump v{PATH_DUMP_VERSION} seed={} steps={} level={}",
            self.seed, self.steps, self.level
        )?;
        writeln!(w, "path,node,time,tag,state,brownian,jump")?;
        for (m, p) in self.paths.iter().enumerate() {
            for i in 0..p.grid.len() {
                let tag = match p.grid.tags()[i] {
                    NodeTag::Regular => "regular",
                    NodeTag::Jump => "jump",
                    NodeTag::Both => "both",
                };
                writeln!(
                    w,
                    "{m},{i},{:e},{tag},{:e},{:e},{:e}",
                    p.grid.nodes()[i],
                    p.states[i],
                    p.brownian[i],
                    p.grid.jump_sums()[i]
                )?;
            }
        }
        Ok(())
    }
}

fn check_capacity(paths: usize, steps: usize, fine: usize, expected_jumps: f64, max_bytes: usize) -> Result<()> {
    let per_path = 8.0 * (5.0 * (steps as f64 + 1.0 + expected_jumps) + fine as f64 + 2.0 * expected_jumps);
    let total = per_path * paths as f64;
    if total > max_bytes as f64 {
        return Err(Error::Capacity(format!(
            "{paths} paths with {steps} steps need about {:.1} MiB, limit is {:.1} MiB",
            total / (1u64 << 20) as f64,
            max_bytes as f64 / (1u64 << 20) as f64
        )));
    }
    Ok(())
}

pub fn simulate_ensemble(
    problem: &FbsdeProblem,
    sampler: &ShotNoiseSampler,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_ensemble_with(problem, sampler, steps, paths, seed, EnsembleOptions::default())
}

pub fn simulate_ensemble_with(
    problem: &FbsdeProblem,
    sampler: &ShotNoiseSampler,
    steps: usize,
    paths: usize,
    seed: u64,
    options: EnsembleOptions,
) -> Result<PathEnsemble> {
    if paths == 0 {
        return Err(Error::domain("ensemble needs at least one path"));
    }
    if steps == 0 {
        return Err(Error::domain("ensemble needs at least one step"));
    }
    if (sampler.horizon() - problem.horizon).abs() > MERGE_TOL * problem.horizon {
        return Err(Error::config(format!(
            "jump sampler horizon {} differs from the problem horizon {}",
            sampler.horizon(),
            problem.horizon
        )));
    }
    let fine = options.fine_steps.unwrap_or(steps);
    if fine % steps != 0 {
        return Err(Error::RefinementRequired(format!("{steps} steps do not divide {fine}")));
    }
    check_capacity(
        paths,
        steps,
        fine,
        sampler.level() * sampler.horizon(),
        options.max_bytes,
    )?;
    let out: Result<Vec<ForwardPath>> = (0..paths as u64)
        .into_par_iter()
        .map(|m| {
            let skeleton = sampler.sample(&mut RngStream::new(seed, m, Purpose::Jumps))?;
            let times: Vec<f64> = skeleton.jumps().iter().map(|j| j.time).collect();
            let bm = BrownianPath::sample(seed, m, fine, problem.horizon, &times)?;
            simulate_path(problem, skeleton, &bm, steps)
        })
        .collect();
    Ok(PathEnsemble {
        seed,
        steps,
        level: sampler.level(),
        zeta1: sampler.zeta1(),
        paths: out?,
    })
}
