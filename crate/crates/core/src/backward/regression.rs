//! Least-squares projections onto a function basis of the current state.
//!
//! The design matrix is orthogonalized once by modified Gram-Schmidt with one
//! reorthogonalization pass; numerically dependent columns are dropped, so a
//! rank-deficient design still yields the orthogonal projection onto the span
//! of the remaining columns (which always contains the constants).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    /// `1, u, ..., u^degree` with `u` the standardized state.
    GlobalPolynomial { degree: usize },
    /// Local `a + b (x - c)` on equal-width bins over `range` (data range when `None`).
    PartitionedLinear { bins: usize, range: Option<(f64, f64)> },
}

impl Basis {
    pub fn dimension(&self) -> usize {
        match self {
            Basis::GlobalPolynomial { degree } => degree + 1,
            Basis::PartitionedLinear { bins, .. } => 2 * bins,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipBound {
    /// `10 · max(max |g(X_T)|, 1)` over the ensemble.
    Auto,
    Fixed(f64),
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub basis: Basis,
    /// Penalty on the non-constant coefficients (standardized scale).
    pub ridge: f64,
    pub truncation_bound: ClipBound,
    /// Regress `(y - E[y | x]) ΔB` instead of `y ΔB` (same conditional mean, less noise).
    pub centered_targets: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            basis: Basis::GlobalPolynomial { degree: 3 },
            ridge: 0.0,
            truncation_bound: ClipBound::Auto,
            centered_targets: true,
        }
    }
}

impl RegressionSpec {
    pub fn validate(&self) -> Result<()> {
        if let Basis::PartitionedLinear { bins, range } = self.basis {
            if bins == 0 {
                return Err(Error::config("partitioned basis needs at least one bin"));
            }
            if let Some((lo, hi)) = range {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::config(format!("bin range ({lo}, {hi}) is empty")));
                }
            }
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::config(format!(
                "ridge weight must be finite and nonnegative, got {}",
                self.ridge
            )));
        }
        if let ClipBound::Fixed(c) = self.truncation_bound {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!(
                    "clip level must be finite and positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn min_paths(&self) -> usize {
        10 * self.basis.dimension()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitDiagnostics {
    pub columns: usize,
    pub rank: usize,
    /// Ratio of the largest to smallest residual column norm kept.
    pub norm_ratio: f64,
    pub ridge: f64,
}

const DROP_TOL: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if a.len() <= BLOCK {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        return s;
    }
    let mid = a.len() / 2;
    dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..])
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Orthonormal basis of the column span of a (possibly augmented) design.
#[derive(Debug, Clone)]
struct Orthonormal {
    /// Data rows; augmented penalty rows follow them.
    rows: usize,
    q: Vec<Vec<f64>>,
}

impl Orthonormal {
    fn new(columns: Vec<Vec<f64>>, rows: usize) -> (Self, usize, f64) {
        let ncols = columns.len();
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(ncols);
        let mut kept_norms = Vec::new();
        for mut v in columns {
            let original = dot(&v, &v).sqrt();
            if original == 0.0 {
                continue;
            }
            for _pass in 0..2 {
                for qj in &q {
                    let c = dot(qj, &v);
                    axpy(-c, qj, &mut v);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm <= DROP_TOL * original {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            kept_norms.push(norm / original);
            q.push(v);
        }
        let ratio = match (
            kept_norms.iter().cloned().reduce(f64::max),
            kept_norms.iter().cloned().reduce(f64::min),
        ) {
            (Some(a), Some(b)) => a / b,
            _ => f64::INFINITY,
        };
        let rank = q.len();
        (Self { rows, q }, ncols - rank, ratio)
    }

    /// Projection of `y` (padded with zeros over augmented rows) restricted to the data rows.
    fn project(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for qj in &self.q {
            let c = dot(&qj[..self.rows], y);
            axpy(c, &qj[..self.rows], &mut out);
        }
        out
    }
}

enum Factor {
    Global(Orthonormal),
    Partitioned {
        members: Vec<Vec<usize>>,
        factors: Vec<Option<Orthonormal>>,
    },
}

/// A factorized design for one set of regressors, reusable across targets.
pub struct Projector {
    samples: usize,
    factor: Factor,
    diagnostics: FitDiagnostics,
}

fn design_columns(u: &[f64], degree: usize, ridge: f64) -> Vec<Vec<f64>> {
    let m = u.len();
    let extra = if ridge > 0.0 { degree } else { 0 };
    let rows = m + extra;
    let mut cols = Vec::with_capacity(degree + 1);
    for j in 0..=degree {
        let mut c = vec![0.0; rows];
        for i in 0..m {
            c[i] = u[i].powi(j as i32);
        }
        if j > 0 && extra > 0 {
            // sqrt(λ M) keeps the penalty comparable across sample sizes
            c[m + j - 1] = (ridge * m as f64).sqrt();
        }
        cols.push(c);
    }
    cols
}

impl Projector {
    pub fn fit(x: &[f64], spec: &RegressionSpec) -> Result<Self> {
        spec.validate()?;
        let m = x.len();
        if m < spec.min_paths() {
            return Err(Error::InsufficientSamples {
                required: spec.min_paths(),
                available: m,
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                t: f64::NAN,
                x: x[i],
                what: format!("regressor of sample {i} is not finite"),
            });
        }
        match spec.basis {
            Basis::GlobalPolynomial { degree } => {
                let mean = crate::stats::mean(x);
                let var = crate::stats::variance(x);
                let sd = var.sqrt();
                let degree = if sd > 1e-12 * mean.abs().max(1.0) { degree } else { 0 };
                let u: Vec<f64> = x
                    .iter()
                    .map(|v| if degree > 0 { (v - mean) / sd } else { 0.0 })
                    .collect();
                let cols = design_columns(&u, degree, spec.ridge);
                let ncols = cols.len();
                let (q, dropped, ratio) = Orthonormal::new(cols, m);
                let rank = ncols - dropped;
                Ok(Self {
                    samples: m,
                    factor: Factor::Global(q),
                    diagnostics: FitDiagnostics {
                        columns: spec.basis.dimension(),
                        rank,
                        norm_ratio: ratio,
                        ridge: spec.ridge,
                    },
                })
            }
            Basis::PartitionedLinear { bins, range } => {
                let (lo, hi) = match range {
                    Some(r) => r,
                    None => {
                        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        (lo, hi)
                    }
                };
                let width = (hi - lo) / bins as f64;
                let mut members = vec![Vec::new(); bins];
                for (i, &v) in x.iter().enumerate() {
                    let b = if width > 0.0 {
                        (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
                    } else {
                        0
                    };
                    members[b].push(i);
                }
                let mut rank = 0;
                let mut worst: f64 = 1.0;
                let mut factors = Vec::with_capacity(bins);
                for idx in &members {
                    if idx.is_empty() {
                        factors.push(None);
                        continue;
                    }
                    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                    let c = crate::stats::mean(&xs);
                    let spread = xs.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
                    let mut cols = vec![vec![1.0; xs.len()]];
                    if spread > 1e-12 * c.abs().max(1.0) {
                        cols.push(xs.iter().map(|v| (v - c) / spread).collect());
                    }
                    let ncols = cols.len();
                    let (q, dropped, ratio) = Orthonormal::new(cols, xs.len());
                    rank += ncols - dropped;
                    worst = worst.max(ratio);
                    factors.push(Some(q));
                }
                Ok(Self {
                    samples: m,
                    factor: Factor::Partitioned { members, factors },
                    diagnostics: FitDiagnostics {
                        columns: spec.basis.dimension(),
                        rank,
                        norm_ratio: worst,
                        ridge: spec.ridge,
                    },
                })
            }
        }
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.diagnostics
    }

    /// Fitted values `P y` at the samples.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.samples {
            return Err(Error::domain(format!(
                "target has {} samples, design has {}",
                y.len(),
                self.samples
            )));
        }
        Ok(match &self.factor {
            Factor::Global(q) => q.project(y),
            Factor::Partitioned { members, factors } => {
                let mut out = vec![0.0; self.samples];
                for (idx, f) in members.iter().zip(factors) {
                    if let Some(q) = f {
                        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                        for (&i, v) in idx.iter().zip(q.project(&ys)) {
                            out[i] = v;
                        }
                    }
                }
                out
            }
        })
    }
}
