//! Generalized shot noise series with random truncation.
//!
//! A representation `H(r, v)` with i.i.d. marks `V` writes a Lévy measure as
//! `ν(B) = ∫_0^∞ P[H(r, V) ∈ B] dr`. Keeping the terms whose Poisson epoch
//! satisfies `G_i <= nT` gives a compound Poisson process `L^n` with Lévy
//! measure `ν^n` of total mass `n`; jump `i` has size `H(G_i / T, V_i)` and
//! lands at an independent uniform time on `[0, T]`.

use crate::error::{Error, Result};
use crate::levy::{self, Functional, LevyKind, LevyModel};
use crate::quad::{self, QuadOptions};
use crate::rng::RngStream;
use crate::special::exp_integral_e1_inv;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// Cut-off for integrals against an Exp(1) density: e^{-80} is below f64 resolution
// relative to any moment we evaluate.
const EXP_TAIL_CUT: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    InverseLevy,
    Rejection,
    Thinning,
    Bondesson,
    RosinskiTemperedStable,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::InverseLevy => "inverse_levy",
            Method::Rejection => "rejection",
            Method::Thinning => "thinning",
            Method::Bondesson => "bondesson",
            Method::RosinskiTemperedStable => "rosinski",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "inverse_levy" | "inverse" => Ok(Method::InverseLevy),
            "rejection" => Ok(Method::Rejection),
            "thinning" => Ok(Method::Thinning),
            "bondesson" => Ok(Method::Bondesson),
            "rosinski" | "rosinski_tempered_stable" => Ok(Method::RosinskiTemperedStable),
            other => Err(Error::config(format!("unknown series representation '{other}'"))),
        }
    }
}

/// Law of the mark `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkDistribution {
    Degenerate,
    Uniform,
    Exponential,
    /// Independent `(V, U)` with `V ~ Exp(1)`, `U ~ U(0, 1)`.
    ExponentialUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mark {
    None,
    Uniform(f64),
    Exponential(f64),
    ExponentialUniform { v: f64, u: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRepresentation {
    method: Method,
    model: LevyModel,
}

impl SeriesRepresentation {
    pub fn new(model: &LevyModel, method: Method) -> Result<Self> {
        let ok = matches!(
            (model.kind(), method),
            (
                LevyKind::Gamma { .. },
                Method::InverseLevy | Method::Rejection | Method::Thinning | Method::Bondesson
            ) | (LevyKind::TemperedStable { .. }, Method::RosinskiTemperedStable)
                | (LevyKind::CompoundPoisson { .. }, Method::InverseLevy)
        );
        if !ok {
            return Err(Error::config(format!(
                "representation '{}' is not available for the {} model",
                method.name(),
                model.kind().name()
            )));
        }
        Ok(Self {
            method,
            model: model.clone(),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn mark_distribution(&self) -> MarkDistribution {
        match self.method {
            Method::InverseLevy => MarkDistribution::Degenerate,
            Method::Rejection => MarkDistribution::Uniform,
            Method::Thinning | Method::Bondesson => MarkDistribution::Exponential,
            Method::RosinskiTemperedStable => MarkDistribution::ExponentialUniform,
        }
    }

    /// Centering constants `c_i`; zero for every supported representation.
    pub fn centering_is_zero(&self) -> bool {
        true
    }

    pub fn sample_mark(&self, rng: &mut RngStream) -> Mark {
        match self.mark_distribution() {
            MarkDistribution::Degenerate => Mark::None,
            MarkDistribution::Uniform => Mark::Uniform(rng.uniform()),
            MarkDistribution::Exponential => Mark::Exponential(rng.exponential()),
            MarkDistribution::ExponentialUniform => {
                let v = rng.exponential();
                let u = rng.uniform();
                Mark::ExponentialUniform { v, u }
            }
        }
    }

    /// Jump size `H(r, mark)`. Zero means the term is rejected (or falls beyond
    /// the total mass of a finite measure).
    pub fn jump(&self, r: f64, mark: &Mark) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::domain(format!("epoch must be positive, got {r}")));
        }
        let expected = self.mark_distribution();
        let matches = matches!(
            (expected, mark),
            (MarkDistribution::Degenerate, Mark::None)
                | (MarkDistribution::Uniform, Mark::Uniform(_))
                | (MarkDistribution::Exponential, Mark::Exponential(_))
                | (MarkDistribution::ExponentialUniform, Mark::ExponentialUniform { .. })
        );
        if !matches {
            return Err(Error::config(format!(
                "mark {mark:?} does not match the {:?} mark law of the '{}' representation",
                expected,
                self.method.name()
            )));
        }
        Ok(match (self.model.kind(), mark) {
            (LevyKind::Gamma { alpha, beta }, _) => match (self.method, mark) {
                (Method::InverseLevy, _) => gamma_inverse_levy(r, *alpha, *beta)?,
                (Method::Bondesson, Mark::Exponential(v)) => (-r / alpha).exp() * v / beta,
                (Method::Thinning, Mark::Exponential(v)) => {
                    if v * r <= *alpha {
                        v / beta
                    } else {
                        0.0
                    }
                }
                (Method::Rejection, Mark::Uniform(u)) => {
                    let (size, accept) = gamma_rejection_candidate(r, *alpha, *beta);
                    if accept >= *u {
                        size
                    } else {
                        0.0
                    }
                }
                _ => unreachable!("validated above"),
            },
            (LevyKind::TemperedStable { alpha, delta, lambda }, Mark::ExponentialUniform { v, u }) => {
                let stable = (alpha * r / delta).powf(-1.0 / alpha);
                stable.min(v * u.powf(1.0 / alpha) / lambda)
            }
            (LevyKind::CompoundPoisson { atoms }, _) => atom_at(atoms, r),
            _ => unreachable!("validated above"),
        })
    }

    /// `E[φ(H(r, V))]`, restricted to nonzero outcomes.
    pub fn mark_expectation(&self, r: f64, functional: &Functional<'_>) -> Result<f64> {
        if !(r > 0.0) {
            return Ok(0.0);
        }
        let inner_opts = QuadOptions::with_rel_tol(1e-12);
        match self.model.kind() {
            LevyKind::Gamma { alpha, beta } => match self.method {
                Method::InverseLevy => Ok(functional.eval(gamma_inverse_levy(r, *alpha, *beta)?)),
                Method::Rejection => {
                    let (size, accept) = gamma_rejection_candidate(r, *alpha, *beta);
                    if accept == 0.0 {
                        return Ok(0.0);
                    }
                    Ok(accept.min(1.0) * functional.eval(size))
                }
                Method::Bondesson => {
                    let scale = (-r / alpha).exp() / beta;
                    match functional {
                        Functional::AbsPower(q) => Ok(gamma_fn(q + 1.0) * scale.powf(*q)),
                        Functional::Identity => Ok(scale),
                        Functional::Custom(_) => Ok(quad::integrate(
                            |v| functional.eval(scale * v) * (-v).exp(),
                            0.0,
                            EXP_TAIL_CUT,
                            inner_opts,
                        )?
                        .value),
                    }
                }
                Method::Thinning => {
                    let cut = alpha / r;
                    match functional {
                        Functional::AbsPower(q) => {
                            Ok(gamma_fn(q + 1.0) * lower_regularized_gamma(q + 1.0, cut) / beta.powf(*q))
                        }
                        Functional::Identity => Ok(lower_regularized_gamma(2.0, cut) / beta),
                        Functional::Custom(_) => Ok(quad::integrate(
                            |v| functional.eval(v / beta) * (-v).exp(),
                            0.0,
                            cut.min(EXP_TAIL_CUT),
                            inner_opts,
                        )?
                        .value),
                    }
                }
                Method::RosinskiTemperedStable => unreachable!("validated in constructor"),
            },
            LevyKind::TemperedStable { alpha, delta, lambda } => {
                let cap = (alpha * r / delta).powf(-1.0 / alpha);
                let inner = |u: f64| -> f64 {
                    let w = u.powf(1.0 / alpha) / lambda;
                    if w == 0.0 {
                        return 0.0;
                    }
                    let knee = cap / w;
                    let tail = if knee > 700.0 { 0.0 } else { (-knee).exp() };
                    match functional {
                        Functional::AbsPower(q) => {
                            w.powf(*q) * gamma_fn(q + 1.0) * lower_regularized_gamma(q + 1.0, knee)
                                + cap.powf(*q) * tail
                        }
                        Functional::Identity => w * lower_regularized_gamma(2.0, knee) + cap * tail,
                        Functional::Custom(_) => {
                            let body = quad::integrate(
                                |v| functional.eval(v * w) * (-v).exp(),
                                0.0,
                                knee.min(EXP_TAIL_CUT),
                                inner_opts,
                            )
                            .map(|q| q.value)
                            .unwrap_or(f64::NAN);
                            body + functional.eval(cap) * tail
                        }
                    }
                };
                Ok(quad::integrate(inner, 0.0, 1.0, QuadOptions::with_rel_tol(1e-11))?.value)
            }
            LevyKind::CompoundPoisson { atoms } => {
                let e = atom_at(atoms, r);
                Ok(if e == 0.0 { 0.0 } else { functional.eval(e) })
            }
        }
    }
}

fn gamma_fn(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

fn lower_regularized_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    statrs::function::gamma::gamma_lr(a, x)
}

fn gamma_inverse_levy(r: f64, alpha: f64, beta: f64) -> Result<f64> {
    let y = r / alpha;
    // E1(x) = -γ - ln x + O(x): beyond y = 600 the inverse is e^{-γ-y} to full precision.
    if y > 600.0 {
        return Ok((-EULER_GAMMA - y).exp() / beta);
    }
    Ok(exp_integral_e1_inv(y)? / beta)
}

/// Candidate `x(r) = 1 / (β (e^{r/α} - 1))` from the dominating measure
/// `α / (e (1 + βe)) de` and its acceptance probability `(1 + βx) e^{-βx}`.
fn gamma_rejection_candidate(r: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let bx = 1.0 / (r / alpha).exp_m1();
    if !bx.is_finite() || bx > 700.0 {
        return (bx / beta, 0.0);
    }
    (bx / beta, (1.0 + bx) * (-bx).exp())
}

fn atom_at(atoms: &[levy::Atom], r: f64) -> f64 {
    let mut cum = 0.0;
    for a in atoms {
        cum += a.weight;
        if r < cum {
            return a.size;
        }
    }
    0.0
}

/// One retained jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
    /// Poisson epoch `G_i` that produced the jump.
    pub epoch: f64,
}

/// Truncated shot noise path on `[0, T]`: the retained jumps sorted by time
/// plus the compensator rate `ζ(n) = ∫ e ν^n(de)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSkeleton {
    horizon: f64,
    level: f64,
    jumps: Vec<Jump>,
    /// Epochs whose term was a structural zero (rejected proposal).
    zero_epochs: Vec<f64>,
    zeta1: f64,
    centering: Vec<f64>,
}

impl JumpSkeleton {
    /// Builds a skeleton from explicit jumps; times must lie in `(0, T]`.
    pub fn from_jumps(horizon: f64, level: f64, mut jumps: Vec<Jump>, zeta1: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::domain("horizon must be positive"));
        }
        if let Some(bad) = jumps
            .iter()
            .find(|j| !(j.time > 0.0 && j.time <= horizon) || !j.size.is_finite())
        {
            return Err(Error::domain(format!("jump {bad:?} outside (0, {horizon}]")));
        }
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        separate_ties(&mut jumps, horizon);
        Ok(Self {
            horizon,
            level,
            jumps,
            zero_epochs: Vec::new(),
            zeta1,
            centering: Vec::new(),
        })
    }

    pub fn empty(horizon: f64, level: f64, zeta1: f64) -> Result<Self> {
        Self::from_jumps(horizon, level, Vec::new(), zeta1)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn zeta1(&self) -> f64 {
        self.zeta1
    }

    /// `J^n`: number of Poisson epochs `G_i <= nT`, rejected terms included.
    pub fn count(&self) -> usize {
        self.jumps.len() + self.zero_epochs.len()
    }

    /// Fraction of epochs producing a nonzero jump.
    pub fn acceptance_rate(&self) -> f64 {
        if self.count() == 0 {
            1.0
        } else {
            self.jumps.len() as f64 / self.count() as f64
        }
    }

    fn range(&self, s: f64, t: f64) -> &[Jump] {
        let lo = self.jumps.partition_point(|j| j.time <= s);
        let hi = self.jumps.partition_point(|j| j.time <= t);
        &self.jumps[lo..hi.max(lo)]
    }

    /// `Σ J_i 1{s < T_i <= t}`.
    pub fn jump_sum(&self, s: f64, t: f64) -> f64 {
        self.range(s, t).iter().map(|j| j.size).sum()
    }

    /// `Σ φ(J_i) 1{s < T_i <= t}`.
    pub fn weighted_sum(&self, s: f64, t: f64, phi: impl Fn(f64) -> f64) -> f64 {
        self.range(s, t).iter().map(|j| phi(j.size)).sum()
    }

    /// Compensated increment `Σ J_i 1{s < T_i <= t} - (t - s) ζ(n)`.
    pub fn increment(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::domain(format!("increment needs s <= t, got ({s}, {t})")));
        }
        if s < 0.0 || t > self.horizon {
            return Err(Error::domain(format!("({s}, {t}] is not inside [0, {}]", self.horizon)));
        }
        Ok(self.jump_sum(s, t) - (t - s) * self.zeta1)
    }

    /// Attaches per-term centering constants `c_i` (indexed by epoch order).
    pub fn with_centering(mut self, constants: Vec<f64>) -> Self {
        self.centering = constants;
        self
    }

    /// The uncompensated series value `Σ_i (J_i 1{T_i <= t} - t c_i)` over retained terms.
    pub fn series_value(&self, t: f64) -> f64 {
        let n = self.count().min(self.centering.len());
        let c: f64 = self.centering[..n].iter().sum();
        self.jump_sum(0.0, t) - t * c
    }

    /// The skeleton at a lower level `n' <= n` from the same epochs.
    pub fn restrict(&self, level: f64, zeta1: f64) -> Result<Self> {
        if level > self.level {
            return Err(Error::domain(format!(
                "cannot restrict level {} skeleton to higher level {level}",
                self.level
            )));
        }
        let cut = level * self.horizon;
        Ok(Self {
            horizon: self.horizon,
            level,
            jumps: self.jumps.iter().copied().filter(|j| j.epoch <= cut).collect(),
            zero_epochs: self.zero_epochs.iter().copied().filter(|&g| g <= cut).collect(),
            zeta1,
            centering: self.centering.clone(),
        })
    }
}

fn separate_ties(jumps: &mut [Jump], horizon: f64) {
    for i in 1..jumps.len() {
        if jumps[i].time <= jumps[i - 1].time {
            let bumped = jumps[i - 1].time.next_up();
            jumps[i].time = if bumped <= horizon { bumped } else { horizon };
        }
    }
    // Ties pushed against the horizon are resolved downwards.
    for i in (0..jumps.len().saturating_sub(1)).rev() {
        if jumps[i].time >= jumps[i + 1].time {
            jumps[i].time = jumps[i + 1].time.next_down();
        }
    }
}

/// Arrival times of a unit-rate Poisson process on `[0, mass]`.
pub fn sample_epochs(mass: f64, rng: &mut RngStream) -> Vec<f64> {
    let mut out = Vec::new();
    if !(mass > 0.0) {
        return out;
    }
    let mut g = 0.0;
    loop {
        g += rng.exponential();
        if g > mass {
            return out;
        }
        out.push(g);
    }
}

/// Samples skeletons for one `(representation, n, T)` with the compensator
/// computed once.
#[derive(Debug, Clone)]
pub struct ShotNoiseSampler {
    representation: SeriesRepresentation,
    level: f64,
    horizon: f64,
    zeta1: f64,
}

impl ShotNoiseSampler {
    pub fn new(representation: &SeriesRepresentation, level: f64, horizon: f64) -> Result<Self> {
        if !(level > 0.0) || !level.is_finite() {
            return Err(Error::domain(format!("truncation level must be positive, got {level}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        let zeta1 = levy::retained_signed_first_moment(representation, level)?;
        Ok(Self {
            representation: representation.clone(),
            level,
            horizon,
            zeta1,
        })
    }

    pub fn representation(&self) -> &SeriesRepresentation {
        &self.representation
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn zeta1(&self) -> f64 {
        self.zeta1
    }

    /// Epoch by epoch: gap, mark, time. A lower level consumes a prefix of
    /// the same stream, so skeletons are nested across levels.
    pub fn sample(&self, rng: &mut RngStream) -> Result<JumpSkeleton> {
        let cut = self.level * self.horizon;
        let mut jumps = Vec::new();
        let mut zero_epochs = Vec::new();
        let mut g = 0.0;
        loop {
            g += rng.exponential();
            if g > cut {
                break;
            }
            let mark = self.representation.sample_mark(rng);
            let time = self.horizon * rng.uniform_open0();
            let size = self.representation.jump(g / self.horizon, &mark)?;
            if size == 0.0 {
                zero_epochs.push(g);
            } else {
                jumps.push(Jump { time, size, epoch: g });
            }
        }
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        separate_ties(&mut jumps, self.horizon);
        Ok(JumpSkeleton {
            horizon: self.horizon,
            level: self.level,
            jumps,
            zero_epochs,
            zeta1: self.zeta1,
            centering: Vec::new(),
        })
    }
}

/// One-off skeleton draw. Recomputes `ζ(n)`; use [`ShotNoiseSampler`] for many paths.
pub fn sample_skeleton(
    representation: &SeriesRepresentation,
    level: f64,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<JumpSkeleton> {
    ShotNoiseSampler::new(representation, level, horizon)?.sample(rng)
}
