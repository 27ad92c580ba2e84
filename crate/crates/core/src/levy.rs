//! Lévy measures and the moment functionals of their truncations.
//!
//! With a series representation `ν(B) = ∫_0^∞ P[H(r, V) ∈ B] dr`, the retained
//! measure is `ν^n(B) = ∫_0^n P[H(r, V) ∈ B] dr` and the discarded one is
//! `ν̄^n = ν - ν^n`. All moments below are per unit time.

use crate::error::{Error, Result};
use crate::quad::{self, QuadOptions};
use crate::shotnoise::{Method, SeriesRepresentation};

/// Point mass `weight · δ_size` of a finite atomic measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub size: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevyKind {
    /// `ν(de) = α e^{-βe} / e de` on `(0, ∞)`.
    Gamma { alpha: f64, beta: f64 },
    /// `ν(de) = δ e^{-1-α} e^{-λe} de` on `(0, ∞)`.
    TemperedStable { alpha: f64, delta: f64, lambda: f64 },
    /// Finite atomic measure, atoms sorted by decreasing `|size|`.
    CompoundPoisson { atoms: Vec<Atom> },
}

impl LevyKind {
    pub fn name(&self) -> &'static str {
        match self {
            LevyKind::Gamma { .. } => "gamma",
            LevyKind::TemperedStable { .. } => "tempered_stable",
            LevyKind::CompoundPoisson { .. } => "compound_poisson",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    kind: LevyKind,
    moment_order: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be finite and positive, got {v}")))
    }
}

impl LevyModel {
    pub fn gamma(alpha: f64, beta: f64) -> Result<Self> {
        positive("gamma alpha", alpha)?;
        positive("gamma beta", beta)?;
        Ok(Self {
            kind: LevyKind::Gamma { alpha, beta },
            moment_order: 2.0,
        })
    }

    pub fn tempered_stable(alpha: f64, delta: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!(
                "stability index must lie in (0, 1), got {alpha}"
            )));
        }
        positive("tempered stable delta", delta)?;
        positive("tempered stable lambda", lambda)?;
        Ok(Self {
            kind: LevyKind::TemperedStable { alpha, delta, lambda },
            moment_order: 2.0,
        })
    }

    pub fn compound_poisson(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::domain("compound Poisson measure needs at least one atom"));
        }
        for a in &atoms {
            positive("atom weight", a.weight)?;
            if !a.size.is_finite() || a.size == 0.0 {
                return Err(Error::domain(format!(
                    "atom size must be finite and nonzero, got {}",
                    a.size
                )));
            }
        }
        atoms.sort_by(|a, b| b.size.abs().total_cmp(&a.size.abs()));
        Ok(Self {
            kind: LevyKind::CompoundPoisson { atoms },
            moment_order: 2.0,
        })
    }

    pub fn with_moment_order(mut self, p: f64) -> Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::domain(format!("moment order p must be at least 2, got {p}")));
        }
        self.moment_order = p;
        Ok(self)
    }

    pub fn kind(&self) -> &LevyKind {
        &self.kind
    }

    pub fn moment_order(&self) -> f64 {
        self.moment_order
    }

    /// `ν(ℝ)`; infinite for the two subordinators.
    pub fn total_mass(&self) -> f64 {
        match &self.kind {
            LevyKind::CompoundPoisson { atoms } => atoms.iter().map(|a| a.weight).sum(),
            _ => f64::INFINITY,
        }
    }

    pub fn is_subordinator(&self) -> bool {
        match &self.kind {
            LevyKind::CompoundPoisson { atoms } => atoms.iter().all(|a| a.size > 0.0),
            _ => true,
        }
    }

    pub fn default_method(&self) -> Method {
        match self.kind {
            LevyKind::Gamma { .. } => Method::InverseLevy,
            LevyKind::TemperedStable { .. } => Method::RosinskiTemperedStable,
            LevyKind::CompoundPoisson { .. } => Method::InverseLevy,
        }
    }

    /// Closed form `∫ |e|^q ν(de)`.
    pub fn full_moment(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::domain(format!("moment order must be at least 1, got {q}")));
        }
        Ok(match &self.kind {
            LevyKind::Gamma { alpha, beta } => alpha * gamma_fn(q) * beta.powf(-q),
            LevyKind::TemperedStable { alpha, delta, lambda } => delta * gamma_fn(q - alpha) * lambda.powf(alpha - q),
            LevyKind::CompoundPoisson { atoms } => atoms.iter().map(|a| a.weight * a.size.abs().powf(q)).sum(),
        })
    }

    /// Closed form `∫ e ν(de)`.
    pub fn full_signed_first_moment(&self) -> f64 {
        match &self.kind {
            LevyKind::CompoundPoisson { atoms } => atoms.iter().map(|a| a.weight * a.size).sum(),
            _ => self.full_moment(1.0).expect("order 1 is valid"),
        }
    }
}

fn gamma_fn(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// Integrand `φ` of a moment functional `∫ φ(e) ν(de)`; `φ(0)` must be 0.
pub enum Functional<'a> {
    AbsPower(f64),
    Identity,
    Custom(&'a (dyn Fn(f64) -> f64 + Sync)),
}

impl Functional<'_> {
    pub fn eval(&self, e: f64) -> f64 {
        match self {
            Functional::AbsPower(q) => e.abs().powf(*q),
            Functional::Identity => e,
            Functional::Custom(f) => f(e),
        }
    }
}

fn outer_opts() -> QuadOptions {
    QuadOptions::with_rel_tol(1e-10)
}

/// `ν^n(ℝ) = n` (for a finite measure, `min(n, ν(ℝ))`).
pub fn truncated_measure_mass(representation: &SeriesRepresentation, n: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::domain(format!("truncation level must be positive, got {n}")));
    }
    Ok(n.min(representation.model().total_mass()))
}

fn atomic_functional(atoms: &[crate::levy::Atom], lo: f64, hi: f64, functional: &Functional<'_>) -> f64 {
    // The atom with index j occupies the epoch interval [W_{j-1}, W_j).
    let mut start = 0.0;
    let mut acc = 0.0;
    for a in atoms {
        let end = start + a.weight;
        let overlap = (end.min(hi) - start.max(lo)).max(0.0);
        acc += overlap * functional.eval(a.size);
        start = end;
    }
    acc
}

/// `∫ φ dν^n = ∫_0^n E[φ(H(r, V))] dr`.
pub fn retained_functional(representation: &SeriesRepresentation, n: f64, functional: &Functional<'_>) -> Result<f64> {
    if !(n >= 0.0) {
        return Err(Error::domain(format!("truncation level must be nonnegative, got {n}")));
    }
    if n == 0.0 {
        return Ok(0.0);
    }
    if let crate::levy::LevyKind::CompoundPoisson { atoms } = representation.model().kind() {
        return Ok(atomic_functional(atoms, 0.0, n, functional));
    }
    let cell = std::cell::RefCell::new(None);
    let res = quad::integrate(
        |r| match representation.mark_expectation(r, functional) {
            Ok(v) => v,
            Err(e) => {
                cell.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        n,
        outer_opts(),
    );
    if let Some(e) = cell.into_inner() {
        return Err(e);
    }
    Ok(res?.value)
}

/// `∫ φ dν̄^n = ∫_n^∞ E[φ(H(r, V))] dr`.
pub fn discarded_functional(representation: &SeriesRepresentation, n: f64, functional: &Functional<'_>) -> Result<f64> {
    if !(n >= 0.0) {
        return Err(Error::domain(format!("truncation level must be nonnegative, got {n}")));
    }
    if let crate::levy::LevyKind::CompoundPoisson { atoms } = representation.model().kind() {
        return Ok(atomic_functional(atoms, n, f64::INFINITY, functional));
    }
    let cell = std::cell::RefCell::new(None);
    let res = quad::integrate_to_infinity(
        |r| match representation.mark_expectation(r, functional) {
            Ok(v) => v,
            Err(e) => {
                cell.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        n,
        outer_opts(),
    );
    if let Some(e) = cell.into_inner() {
        return Err(e);
    }
    res.map(|r| r.value).map_err(|e| match e {
        Error::Integration {
            message,
            estimate,
            abs_error,
        } => Error::Integration {
            message: format!(
                "tail of ∫|H|^q beyond epoch {n} under '{}': {message}",
                representation.method().name()
            ),
            estimate,
            abs_error,
        },
        other => other,
    })
}

fn check_order(q: f64) -> Result<()> {
    if q >= 1.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("moment order must be at least 1, got {q}")))
    }
}

/// `σ^q(n) = ∫ |e|^q ν̄^n(de)`.
pub fn discarded_moment(representation: &SeriesRepresentation, n: f64, q: f64) -> Result<f64> {
    check_order(q)?;
    discarded_functional(representation, n, &Functional::AbsPower(q))
}

/// `𝔪^q(n) = ∫ |e|^q ν^n(de)`.
pub fn retained_moment(representation: &SeriesRepresentation, n: f64, q: f64) -> Result<f64> {
    check_order(q)?;
    retained_functional(representation, n, &Functional::AbsPower(q))
}

/// `ζ(n) = ∫ e ν^n(de)`, the compensator rate of `L^n`.
pub fn retained_signed_first_moment(representation: &SeriesRepresentation, n: f64) -> Result<f64> {
    retained_functional(representation, n, &Functional::Identity)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationMoments {
    pub n: f64,
    pub sigma2: f64,
    pub sigma_p: f64,
    pub m1_abs: f64,
    pub m_p: f64,
    pub zeta1: f64,
}

impl TruncationMoments {
    pub fn compute(representation: &SeriesRepresentation, n: f64) -> Result<Self> {
        let p = representation.model().moment_order();
        let m1_abs = retained_moment(representation, n, 1.0)?;
        let zeta1 = if representation.model().is_subordinator() {
            m1_abs
        } else {
            retained_signed_first_moment(representation, n)?
        };
        Ok(Self {
            n,
            sigma2: discarded_moment(representation, n, 2.0)?,
            sigma_p: discarded_moment(representation, n, p)?,
            m1_abs,
            m_p: retained_moment(representation, n, p)?,
            zeta1,
        })
    }

    pub const CSV_HEADER: [&'static str; 6] = ["n", "sigma2", "sigma_p", "m1", "m_p", "zeta"];

    pub fn csv_row(&self) -> [f64; 6] {
        [self.n, self.sigma2, self.sigma_p, self.m1_abs, self.m_p, self.zeta1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rep(model: &LevyModel, m: Method) -> SeriesRepresentation {
        SeriesRepresentation::new(model, m).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(LevyModel::gamma(0.0, 1.0).is_err());
        assert!(LevyModel::gamma(1.0, -1.0).is_err());
        assert!(LevyModel::tempered_stable(1.0, 1.0, 1.0).is_err());
        assert!(LevyModel::tempered_stable(0.0, 1.0, 1.0).is_err());
        assert!(LevyModel::compound_poisson(vec![]).is_err());
        assert!(LevyModel::compound_poisson(vec![Atom { size: 1.0, weight: 0.0 }]).is_err());
        assert!(LevyModel::gamma(1.0, 1.0).unwrap().with_moment_order(1.5).is_err());
    }

    #[test]
    fn mass_is_level() {
        let g = LevyModel::gamma(1.0, 1.0).unwrap();
        assert_eq!(truncated_measure_mass(&rep(&g, Method::Bondesson), 5.0).unwrap(), 5.0);
        let ts = LevyModel::tempered_stable(0.5, 1.0, 1.0).unwrap();
        assert_eq!(
            truncated_measure_mass(&rep(&ts, Method::RosinskiTemperedStable), 3.0).unwrap(),
            3.0
        );
        assert!(truncated_measure_mass(&rep(&g, Method::Bondesson), 0.0).is_err());
        assert!(truncated_measure_mass(&rep(&g, Method::Bondesson), 1e-300).unwrap() < 1e-299);
    }

    #[test]
    fn bondesson_closed_forms() {
        let g = LevyModel::gamma(1.0, 1.0).unwrap();
        let r = rep(&g, Method::Bondesson);
        assert_relative_eq!(
            discarded_moment(&r, 2.0, 2.0).unwrap(),
            (-4.0f64).exp(),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            retained_moment(&r, 3.0, 1.0).unwrap(),
            1.0 - (-3.0f64).exp(),
            max_relative = 1e-9
        );
        assert_relative_eq!(retained_moment(&r, 200.0, 1.0).unwrap(), 1.0, max_relative = 1e-9);
        assert_eq!(retained_moment(&r, 0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn nothing_discarded_gives_full_moment() {
        let g = LevyModel::gamma(2.0, 3.0).unwrap();
        for m in [
            Method::InverseLevy,
            Method::Bondesson,
            Method::Thinning,
            Method::Rejection,
        ] {
            let r = rep(&g, m);
            let full = g.full_moment(2.0).unwrap();
            assert_relative_eq!(discarded_moment(&r, 0.0, 2.0).unwrap(), full, max_relative = 1e-8);
        }
        let ts = LevyModel::tempered_stable(0.5, 1.0, 1.0).unwrap();
        let r = rep(&ts, Method::RosinskiTemperedStable);
        assert_relative_eq!(
            discarded_moment(&r, 0.0, 2.0).unwrap(),
            ts.full_moment(2.0).unwrap(),
            max_relative = 1e-8
        );
    }

    #[test]
    fn compound_poisson_moments_are_exact_sums() {
        let cp = LevyModel::compound_poisson(vec![
            Atom { size: 0.5, weight: 1.0 },
            Atom {
                size: -1.0,
                weight: 2.0,
            },
        ])
        .unwrap();
        let r = rep(&cp, Method::InverseLevy);
        // atoms reordered by |size|: -1 on [0,2), 0.5 on [2,3)
        assert_relative_eq!(
            retained_moment(&r, 2.5, 2.0).unwrap(),
            2.0 + 0.5 * 0.25,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            retained_signed_first_moment(&r, 10.0).unwrap(),
            -2.0 + 0.5,
            epsilon = 1e-15
        );
        assert_relative_eq!(discarded_moment(&r, 2.5, 2.0).unwrap(), 0.5 * 0.25, epsilon = 1e-15);
        assert_eq!(discarded_moment(&r, 3.0, 2.0).unwrap(), 0.0);
        assert_eq!(truncated_measure_mass(&r, 10.0).unwrap(), 3.0);
        assert!(!cp.is_subordinator());
    }

    #[test]
    fn moments_csv_row_order() {
        let g = LevyModel::gamma(1.0, 1.0).unwrap();
        let m = TruncationMoments::compute(&rep(&g, Method::Bondesson), 1.0).unwrap();
        let row = m.csv_row();
        assert_eq!(row[0], 1.0);
        assert_eq!(row[1], m.sigma2);
        assert_eq!(row[5], m.zeta1);
        assert_eq!(m.zeta1, m.m1_abs);
    }
}
