//! Study configuration: TOML on disk, resolved into core types before any work.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fbsde_core::backward::{Basis, ClipBound, RegressionSpec};
use fbsde_core::fbsde::{BenchmarkProblem, ExpressionSet, FbsdeProblem};
use fbsde_core::harness::ReferenceMode;
use fbsde_core::levy::{Atom, LevyModel};
use fbsde_core::shotnoise::{Method, SeriesRepresentation};

use crate::error::CliError;

/// Largest Brownian grid a study may request.
pub const MAX_FINE_STEPS: usize = 1 << 16;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub study_id: Option<String>,
    /// Relative paths are taken from the config file's directory.
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub problem: ProblemConfig,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `gamma`, `tempered_stable` or `compound_poisson`.
    pub kind: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    /// `[[size, weight], ...]` for `compound_poisson`.
    pub atoms: Option<Vec<[f64; 2]>>,
    pub representation: Option<String>,
    pub moment_order: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// A builtin (`zero_generator`, `discounting`, `pure_diffusion`) or a free
    /// label when coefficients are given as expressions.
    pub name: String,
    pub x0: Option<f64>,
    pub horizon: Option<f64>,
    pub b0: Option<f64>,
    pub a0: Option<f64>,
    pub h0: Option<f64>,
    pub r: Option<f64>,
    pub b: Option<String>,
    pub a: Option<String>,
    pub h: Option<String>,
    pub f: Option<String>,
    pub g: Option<String>,
    pub rho: Option<String>,
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub steps: Vec<usize>,
    pub levels: Vec<f64>,
    pub paths: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Brownian grid; defaults to the reference grid or the lcm of `steps`.
    pub fine_steps: Option<usize>,
    #[serde(default)]
    pub regression: RegressionConfig,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ClipSetting {
    Named(String),
    Level(f64),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    /// `polynomial` (default) or `partitioned`.
    pub basis: Option<String>,
    pub degree: Option<usize>,
    pub bins: Option<usize>,
    pub range: Option<[f64; 2]>,
    pub ridge: Option<f64>,
    pub clip: Option<ClipSetting>,
    pub centered: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// `closed_form` (default for builtins) or `fine`.
    pub mode: Option<String>,
    pub steps: Option<usize>,
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub levels: Option<Vec<f64>>,
    pub representations: Option<Vec<String>>,
}

/// A validated study, ready to run.
#[derive(Debug, Clone)]
pub struct Study {
    pub study_id: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: LevyModel,
    pub representation: SeriesRepresentation,
    pub problem: FbsdeProblem,
    pub benchmark: Option<BenchmarkProblem>,
    pub steps: Vec<usize>,
    pub levels: Vec<f64>,
    pub paths: usize,
    pub p: f64,
    pub fine_steps: usize,
    pub regression: RegressionSpec,
    pub reference: ReferenceMode,
    pub moment_levels: Vec<f64>,
    pub moment_methods: Vec<Method>,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
}

fn cfg(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn need(value: Option<f64>, what: &str, kind: &str) -> Result<f64, CliError> {
    value.ok_or_else(|| cfg(format!("model kind '{kind}' needs '{what}'")))
}

fn reject_extra(fields: &[(&str, bool)], kind: &str) -> Result<(), CliError> {
    match fields.iter().find(|(_, present)| *present) {
        Some((name, _)) => Err(cfg(format!("'{name}' does not apply to model kind '{kind}'"))),
        None => Ok(()),
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<LevyModel, CliError> {
        let k = self.kind.as_str();
        let model = match k {
            "gamma" => {
                reject_extra(
                    &[
                        ("delta", self.delta.is_some()),
                        ("lambda", self.lambda.is_some()),
                        ("atoms", self.atoms.is_some()),
                    ],
                    k,
                )?;
                LevyModel::gamma(need(self.alpha, "alpha", k)?, need(self.beta, "beta", k)?)?
            }
            "tempered_stable" => {
                reject_extra(&[("beta", self.beta.is_some()), ("atoms", self.atoms.is_some())], k)?;
                LevyModel::tempered_stable(
                    need(self.alpha, "alpha", k)?,
                    need(self.delta, "delta", k)?,
                    need(self.lambda, "lambda", k)?,
                )?
            }
            "compound_poisson" => {
                reject_extra(
                    &[
                        ("alpha", self.alpha.is_some()),
                        ("beta", self.beta.is_some()),
                        ("delta", self.delta.is_some()),
                        ("lambda", self.lambda.is_some()),
                    ],
                    k,
                )?;
                let atoms = self
                    .atoms
                    .as_ref()
                    .ok_or_else(|| cfg("model kind 'compound_poisson' needs 'atoms'"))?;
                LevyModel::compound_poisson(atoms.iter().map(|&[size, weight]| Atom { size, weight }).collect())?
            }
            other => return Err(cfg(format!("unknown model kind '{other}'"))),
        };
        Ok(match self.moment_order {
            Some(q) => model.with_moment_order(q)?,
            None => model,
        })
    }

    pub fn method(&self, model: &LevyModel) -> Result<Method, CliError> {
        match &self.representation {
            Some(name) => Ok(Method::parse(name)?),
            None => Ok(model.default_method()),
        }
    }
}

const BUILTINS: [&str; 3] = ["zero_generator", "discounting", "pure_diffusion"];

impl ProblemConfig {
    fn has_expressions(&self) -> bool {
        [&self.b, &self.a, &self.h, &self.f, &self.g, &self.rho]
            .iter()
            .any(|e| e.is_some())
    }

    pub fn build(&self) -> Result<(FbsdeProblem, Option<BenchmarkProblem>), CliError> {
        let horizon = self.horizon.unwrap_or(1.0);
        let builtin = BUILTINS.contains(&self.name.as_str());
        if builtin {
            if self.has_expressions() || self.lipschitz.is_some() {
                return Err(cfg(format!(
                    "builtin problem '{}' takes no coefficient expressions",
                    self.name
                )));
            }
            let (x0, b0, a0, h0) = (
                self.x0.unwrap_or(1.0),
                self.b0.unwrap_or(0.1),
                self.a0.unwrap_or(0.3),
                self.h0.unwrap_or(0.5),
            );
            let bench = match self.name.as_str() {
                "zero_generator" => {
                    if self.r.is_some() {
                        return Err(cfg("'r' only applies to the discounting problem"));
                    }
                    BenchmarkProblem::zero_generator(b0, a0, h0, x0, horizon)?
                }
                "discounting" => BenchmarkProblem::discounting(self.r.unwrap_or(0.5), b0, a0, h0, x0, horizon)?,
                _ => {
                    let extra = [
                        self.x0.is_some(),
                        self.b0.is_some(),
                        self.a0.is_some(),
                        self.h0.is_some(),
                        self.r.is_some(),
                    ];
                    if extra.iter().any(|&e| e) {
                        return Err(cfg("pure_diffusion takes only 'horizon'"));
                    }
                    BenchmarkProblem::pure_diffusion(horizon)?
                }
            };
            return Ok((bench.problem.clone(), Some(bench)));
        }
        if !self.has_expressions() {
            return Err(cfg(format!(
                "problem '{}' is not a builtin ({}) and defines no coefficients",
                self.name,
                BUILTINS.join(", ")
            )));
        }
        if [self.b0, self.a0, self.h0, self.r].iter().any(|v| v.is_some()) {
            return Err(cfg("'b0', 'a0', 'h0' and 'r' only apply to builtin problems"));
        }
        let x0 = self.x0.ok_or_else(|| cfg("expression problems need 'x0'"))?;
        let set = ExpressionSet {
            b: self.b.clone(),
            a: self.a.clone(),
            h: self.h.clone(),
            f: self.f.clone(),
            g: self.g.clone(),
            rho: self.rho.clone(),
            lipschitz_k: self.lipschitz,
        };
        Ok((
            FbsdeProblem::from_expressions(self.name.clone(), x0, horizon, &set)?,
            None,
        ))
    }
}

impl RegressionConfig {
    pub fn build(&self) -> Result<RegressionSpec, CliError> {
        let basis = match self.basis.as_deref().unwrap_or("polynomial") {
            "polynomial" => {
                if self.bins.is_some() || self.range.is_some() {
                    return Err(cfg("'bins' and 'range' apply to the partitioned basis"));
                }
                Basis::GlobalPolynomial {
                    degree: self.degree.unwrap_or(3),
                }
            }
            "partitioned" => {
                if self.degree.is_some() {
                    return Err(cfg("'degree' applies to the polynomial basis"));
                }
                Basis::PartitionedLinear {
                    bins: self.bins.unwrap_or(8),
                    range: self.range.map(|[lo, hi]| (lo, hi)),
                }
            }
            other => return Err(cfg(format!("unknown basis '{other}'"))),
        };
        let truncation_bound = match &self.clip {
            None => ClipBound::Auto,
            Some(ClipSetting::Named(s)) if s == "auto" => ClipBound::Auto,
            Some(ClipSetting::Named(s)) if s == "off" => ClipBound::Off,
            Some(ClipSetting::Named(s)) => {
                return Err(cfg(format!("clip must be 'auto', 'off' or a number, got '{s}'")))
            }
            Some(ClipSetting::Level(c)) => ClipBound::Fixed(*c),
        };
        let spec = RegressionSpec {
            basis,
            ridge: self.ridge.unwrap_or(0.0),
            truncation_bound,
            centered_targets: self.centered.unwrap_or(true),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm_all(values: &[usize]) -> Option<usize> {
    values
        .iter()
        .try_fold(1usize, |acc, &v| (acc / gcd(acc, v)).checked_mul(v))
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| cfg(e.to_string()))
    }

    /// Reads and validates `path`; nothing is simulated.
    pub fn load(path: &Path) -> Result<Study, CliError> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = std::str::from_utf8(&bytes).map_err(|_| cfg("config file is not UTF-8"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(text)?.resolve(base, crate::sha256_hex(&bytes))
    }

    pub fn resolve(&self, base_dir: &Path, config_hash: String) -> Result<Study, CliError> {
        let s = &self.scheme;
        if s.steps.is_empty() {
            return Err(cfg("scheme.steps is empty"));
        }
        if s.levels.is_empty() {
            return Err(cfg("scheme.levels is empty"));
        }
        if s.steps.contains(&0) {
            return Err(cfg("scheme.steps entries must be positive"));
        }
        if let Some(&n) = s.levels.iter().find(|&&n| !(n > 0.0) || !n.is_finite()) {
            return Err(cfg(format!("truncation level {n} must be positive and finite")));
        }
        if !(s.p >= 2.0) || !s.p.is_finite() {
            return Err(cfg(format!("scheme.p must be finite and >= 2, got {}", s.p)));
        }
        let model = self.model.build()?;
        let method = self.model.method(&model)?;
        let representation = SeriesRepresentation::new(&model, method)?;
        let (problem, benchmark) = self.problem.build()?;
        let regression = s.regression.build()?;
        if s.paths < regression.min_paths() {
            return Err(cfg(format!(
                "scheme.paths = {} is below the {} paths the basis needs",
                s.paths,
                regression.min_paths()
            )));
        }

        let r = &self.reference;
        let mode = r
            .mode
            .as_deref()
            .unwrap_or(if benchmark.is_some() { "closed_form" } else { "fine" });
        let reference = match mode {
            "closed_form" => {
                if benchmark.is_none() {
                    return Err(cfg(format!(
                        "problem '{}' has no closed form; use reference.mode = \"fine\"",
                        problem.name
                    )));
                }
                if r.steps.is_some() || r.level.is_some() {
                    return Err(cfg("reference.steps and reference.level apply to the fine reference"));
                }
                ReferenceMode::ClosedForm
            }
            "fine" => {
                let top_steps = s.steps.iter().copied().max().unwrap_or(1);
                let steps = r.steps.unwrap_or(top_steps * 8);
                let level = r
                    .level
                    .unwrap_or_else(|| s.levels.iter().copied().fold(f64::MIN, f64::max) * 2.0);
                if let Some(&bad) = s.steps.iter().find(|&&n| steps % n != 0) {
                    return Err(cfg(format!(
                        "reference.steps = {steps} is not a multiple of scheme step count {bad}"
                    )));
                }
                if let Some(&bad) = s.levels.iter().find(|&&n| n > level) {
                    return Err(cfg(format!("reference.level = {level} is below scheme level {bad}")));
                }
                ReferenceMode::Fine { steps, level }
            }
            other => return Err(cfg(format!("unknown reference mode '{other}'"))),
        };

        let mut grids = s.steps.clone();
        if let ReferenceMode::Fine { steps, .. } = reference {
            grids.push(steps);
        }
        let fine_steps = match s.fine_steps {
            Some(f) => f,
            None => lcm_all(&grids).filter(|&l| l <= MAX_FINE_STEPS).ok_or_else(|| {
                cfg("the step counts have no common refinement within the Brownian grid limit; set scheme.fine_steps")
            })?,
        };
        if fine_steps == 0 || fine_steps > MAX_FINE_STEPS {
            return Err(cfg(format!("scheme.fine_steps must be in 1..={MAX_FINE_STEPS}")));
        }
        if let Some(&bad) = grids.iter().find(|&&n| fine_steps % n != 0) {
            return Err(cfg(format!(
                "scheme.fine_steps = {fine_steps} is not a multiple of {bad}"
            )));
        }

        let moment_levels = self.moments.levels.clone().unwrap_or_else(|| s.levels.clone());
        if moment_levels.is_empty() {
            return Err(cfg("moments.levels is empty"));
        }
        if let Some(&n) = moment_levels.iter().find(|&&n| !(n >= 0.0) || !n.is_finite()) {
            return Err(cfg(format!("moment level {n} must be nonnegative and finite")));
        }
        let moment_methods = match &self.moments.representations {
            Some(names) if names.is_empty() => return Err(cfg("moments.representations is empty")),
            Some(names) => {
                let methods = names.iter().map(|n| Method::parse(n)).collect::<Result<Vec<_>, _>>()?;
                for &m in &methods {
                    SeriesRepresentation::new(&model, m)?;
                }
                methods
            }
            None => compatible_methods(&model),
        };

        let output_dir = match &self.output_dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => base_dir.join(d),
            None => base_dir.join("out"),
        };
        Ok(Study {
            study_id: self.study_id.clone().unwrap_or_else(|| problem.name.clone()),
            seed: self.seed,
            output_dir,
            model,
            representation,
            problem,
            benchmark,
            steps: s.steps.clone(),
            levels: s.levels.clone(),
            paths: s.paths,
            p: s.p,
            fine_steps,
            regression,
            reference,
            moment_levels,
            moment_methods,
            config_hash,
        })
    }
}

/// Every representation the model supports, in a fixed order.
pub fn compatible_methods(model: &LevyModel) -> Vec<Method> {
    [
        Method::InverseLevy,
        Method::Rejection,
        Method::Thinning,
        Method::Bondesson,
        Method::RosinskiTemperedStable,
    ]
    .into_iter()
    .filter(|&m| SeriesRepresentation::new(model, m).is_ok())
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
[model]
kind = "gamma"
alpha = 1.0
beta = 1.0
representation = "bondesson"
[problem]
name = "zero_generator"
[scheme]
steps = [8, 16]
levels = [2.0, 4.0]
paths = 200
"#;

    fn resolve(text: &str) -> Result<Study, CliError> {
        StudyConfig::parse(text)?.resolve(Path::new("/tmp"), String::new())
    }

    #[test]
    fn resolves_defaults() {
        let s = resolve(BASE).unwrap();
        assert_eq!(s.reference, ReferenceMode::ClosedForm);
        assert_eq!(s.fine_steps, 16);
        assert_eq!(s.output_dir, Path::new("/tmp/out"));
        assert_eq!(s.moment_levels, vec![2.0, 4.0]);
        assert_eq!(s.moment_methods.len(), 4);
        assert!(s.benchmark.is_some());
    }

    #[test]
    fn rejects_bad_configs() {
        for (from, to) in [
            ("steps = [8, 16]", "steps = []"),
            ("levels = [2.0, 4.0]", "levels = []"),
            ("seed = 7", ""),
            ("paths = 200", "paths = 20"),
            ("alpha = 1.0", "alpha = 1.0\ndelta = 2.0"),
            ("name = \"zero_generator\"", "name = \"mystery\""),
            ("representation = \"bondesson\"", "representation = \"rosinski\""),
            ("paths = 200", "paths = 200\nwidth = 3"),
        ] {
            let text = BASE.replace(from, to);
            let err = resolve(&text).unwrap_err();
            assert!(matches!(err, CliError::Config(_) | CliError::Core(_)), "{to}: {err}");
            assert_eq!(err.exit_code(), 2, "{to}: {err}");
        }
    }

    #[test]
    fn fine_reference_checks_nesting() {
        let text = format!("{BASE}[reference]\nmode = \"fine\"\nsteps = 40\nlevel = 8.0\n");
        assert!(resolve(&text).is_err());
        let text = format!("{BASE}[reference]\nmode = \"fine\"\nsteps = 64\nlevel = 8.0\n");
        let s = resolve(&text).unwrap();
        assert_eq!(s.reference, ReferenceMode::Fine { steps: 64, level: 8.0 });
        assert_eq!(s.fine_steps, 64);
        let text = format!("{BASE}[reference]\nmode = \"fine\"\nsteps = 64\nlevel = 3.0\n");
        assert!(resolve(&text).is_err());
    }

    #[test]
    fn expression_problems_need_fine_reference() {
        let text = BASE.replace(
            "name = \"zero_generator\"",
            "name = \"custom\"\nx0 = 0.5\nb = \"sin(x)\"\na = \"0.3\"\nh = \"0.2\"\nf = \"-y\"",
        );
        let s = resolve(&text).unwrap();
        assert!(matches!(s.reference, ReferenceMode::Fine { steps: 128, .. }));
        let closed = format!("{text}[reference]\nmode = \"closed_form\"\n");
        assert!(resolve(&closed).is_err());
    }

    #[test]
    fn regression_settings() {
        let text = format!("{BASE}[scheme.regression]\nbasis = \"partitioned\"\nbins = 4\nclip = \"off\"\n");
        let spec = resolve(&text).unwrap().regression;
        assert_eq!(spec.basis, Basis::PartitionedLinear { bins: 4, range: None });
        assert_eq!(spec.truncation_bound, ClipBound::Off);
        let fixed = RegressionConfig {
            clip: Some(ClipSetting::Level(5.0)),
            ..Default::default()
        };
        assert_eq!(fixed.build().unwrap().truncation_bound, ClipBound::Fixed(5.0));
    }
}
