//! The `run`, `moments` and `validate` verbs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use fbsde_core::backward::{solve_backward, y0_batch_std_error, BackwardSolution, RegressionInput};
use fbsde_core::fbsde::{check_rho_bound, estimate_lipschitz, validate_assumption2, CheckStatus, SampleSpec};
use fbsde_core::harness::{
    closed_form_reference, coupled_input, coupled_paths, empirical_norms, forward_sup_error, rate_fit, CouplingPlan,
    LevelMoments, ReferenceMode, ReportMeta, Scale, BATCHES,
};
use fbsde_core::levy::TruncationMoments;
use fbsde_core::shotnoise::{SeriesRepresentation, ShotNoiseSampler};
use fbsde_core::stats::Estimate;

use crate::config::Study;
use crate::error::CliError;

/// Half-width of reported confidence intervals, in standard errors.
pub const CI_WIDTH: f64 = 3.0;

pub const LEDGER_FILE: &str = "ledger.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Forward paths per cell written to `paths_n{n}_N{N}.csv`.
    pub dump_paths: usize,
}

/// One ledger line per `(n, N)` cell.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LedgerRow {
    pub study_id: String,
    pub n: f64,
    pub steps: usize,
    pub paths: usize,
    pub p: f64,
    pub seed: u64,
    pub model: String,
    pub representation: String,
    pub problem: String,
    pub reference: String,
    pub status: String,
    pub message: String,
    pub y0: Option<f64>,
    pub y0_se: Option<f64>,
    pub y0_ref: Option<f64>,
    pub y0_error: Option<f64>,
    pub sup_y_error: Option<f64>,
    pub sup_y_se: Option<f64>,
    pub esup_y_error: Option<f64>,
    pub esup_y_se: Option<f64>,
    pub z_error: Option<f64>,
    pub z_se: Option<f64>,
    pub gamma_error: Option<f64>,
    pub gamma_se: Option<f64>,
    pub forward_error: Option<f64>,
    pub forward_se: Option<f64>,
    pub clipped: Option<usize>,
    pub max_picard: Option<usize>,
    pub min_rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TableRow {
    pub study_id: String,
    pub axis: String,
    pub value: f64,
    pub error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RateRow {
    pub study_id: String,
    pub axis: String,
    pub scale: String,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Serialize)]
struct Manifest {
    study_id: String,
    config_sha256: String,
    seed: u64,
    fbsde_core_version: String,
    fbsde_cli_version: String,
    cells: usize,
    failed_cells: usize,
    outputs: Vec<OutputEntry>,
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub rows: Vec<LedgerRow>,
    pub outputs: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn reference_label(mode: &ReferenceMode) -> String {
    match mode {
        ReferenceMode::ClosedForm => "closed_form".into(),
        ReferenceMode::Fine { steps, level } => format!("fine:N={steps}:n={level}"),
    }
}

struct FineReference {
    input: RegressionInput,
    solution: BackwardSolution,
}

struct Runner<'a> {
    study: &'a Study,
    plan: CouplingPlan,
    fine: Option<FineReference>,
}

impl Runner<'_> {
    fn blank_row(&self, n: f64, steps: usize) -> LedgerRow {
        let s = self.study;
        LedgerRow {
            study_id: s.study_id.clone(),
            n,
            steps,
            paths: s.paths,
            p: s.p,
            seed: s.seed,
            model: s.model.kind().name().into(),
            representation: s.representation.method().name().into(),
            problem: s.problem.name.clone(),
            reference: reference_label(&s.reference),
            status: "ok".into(),
            message: String::new(),
            y0: None,
            y0_se: None,
            y0_ref: None,
            y0_error: None,
            sup_y_error: None,
            sup_y_se: None,
            esup_y_error: None,
            esup_y_se: None,
            z_error: None,
            z_se: None,
            gamma_error: None,
            gamma_se: None,
            forward_error: None,
            forward_se: None,
            clipped: None,
            max_picard: None,
            min_rank: None,
        }
    }

    fn cell(&self, level: &LevelMoments, steps: usize, row: &mut LedgerRow) -> Result<(), CliError> {
        let s = self.study;
        let input = coupled_input(&s.problem, &self.plan, level, steps)?;
        let sol = solve_backward(&input, &s.problem, &s.regression)?;
        let y0_se = match y0_batch_std_error(&input, &s.problem, &s.regression, BATCHES) {
            Ok(se) => Some(se),
            Err(fbsde_core::Error::InsufficientSamples { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let meta = ReportMeta {
            n: level.level,
            seed: s.seed,
            model: s.model.kind().name().into(),
            problem: s.problem.name.clone(),
        };
        let (report, forward, y0_ref) = match (&s.reference, &self.fine, &s.benchmark) {
            (ReferenceMode::ClosedForm, _, Some(bench)) => {
                let reference = closed_form_reference(bench, &input, level.kappa_rho);
                let r = empirical_norms(&sol, &reference, s.p, &meta)?;
                (r, None, bench.y_exact(0.0, s.problem.x0))
            }
            (ReferenceMode::Fine { .. }, Some(fine), _) => {
                let r = empirical_norms(&sol, &fine.solution, s.p, &meta)?;
                let fwd = forward_sup_error(&input, &fine.input, s.p)?;
                (r, Some(fwd), fine.solution.y0())
            }
            _ => unreachable!("reference mode is validated against the problem"),
        };
        let put = |e: &Estimate| (Some(e.mean), Some(e.std_error));
        row.y0 = Some(sol.y0());
        row.y0_se = y0_se;
        row.y0_ref = Some(y0_ref);
        row.y0_error = Some((sol.y0() - y0_ref).abs());
        (row.sup_y_error, row.sup_y_se) = put(&report.sup_y_error);
        (row.esup_y_error, row.esup_y_se) = put(&report.esup_y_error);
        (row.z_error, row.z_se) = put(&report.z_error);
        (row.gamma_error, row.gamma_se) = put(&report.gamma_error);
        if let Some(f) = forward {
            (row.forward_error, row.forward_se) = put(&f);
        }
        row.clipped = Some(sol.clipped());
        row.max_picard = sol.fixed_point_iters().into_iter().max();
        row.min_rank = sol.diagnostics[..steps].iter().map(|d| d.fit.rank).min();
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

const TABLE_HEADER: [&str; 6] = ["study_id", "axis", "value", "error", "ci_low", "ci_high"];
const RATE_HEADER: [&str; 7] = ["study_id", "axis", "scale", "points", "slope", "intercept", "r_squared"];

const METRICS: [&str; 5] = ["y0", "sup_y", "z", "gamma", "forward"];

fn metric(row: &LedgerRow, name: &str) -> Option<(f64, f64)> {
    let pair = match name {
        "y0" => (row.y0_error, row.y0_se),
        "sup_y" => (row.sup_y_error, row.sup_y_se),
        "z" => (row.z_error, row.z_se),
        "gamma" => (row.gamma_error, row.gamma_se),
        _ => (row.forward_error, row.forward_se),
    };
    match pair {
        (Some(v), Some(se)) if row.status == "ok" => Some((v, se)),
        _ => None,
    }
}

/// Long-format rows: for each metric, errors against `N` at fixed `n` and
/// against `n` at fixed `N`. `study_id` is `{id}/{metric}/n={n}` or `{id}/{metric}/N={N}`.
pub fn long_table(rows: &[LedgerRow]) -> (Vec<TableRow>, Vec<RateRow>) {
    let Some(first) = rows.first() else {
        return (Vec::new(), Vec::new());
    };
    let id = &first.study_id;
    let mut levels: Vec<f64> = Vec::new();
    let mut steps: Vec<usize> = Vec::new();
    for r in rows {
        if !levels.contains(&r.n) {
            levels.push(r.n);
        }
        if !steps.contains(&r.steps) {
            steps.push(r.steps);
        }
    }
    let mut table = Vec::new();
    let mut rates = Vec::new();
    let mut emit = |group: String, axis: &str, scale: Scale, pts: Vec<(f64, f64, f64)>| {
        for &(x, v, se) in &pts {
            table.push(TableRow {
                study_id: group.clone(),
                axis: axis.into(),
                value: x,
                error: v,
                ci_low: v - CI_WIDTH * se,
                ci_high: v + CI_WIDTH * se,
            });
        }
        let xy: Vec<(f64, f64)> = pts.iter().map(|&(x, v, _)| (x, v)).collect();
        if let Ok(fit) = rate_fit(&xy, scale) {
            rates.push(RateRow {
                study_id: group,
                axis: axis.into(),
                scale: if scale == Scale::LogLog { "loglog" } else { "semilog" }.into(),
                points: xy.len(),
                slope: fit.slope,
                intercept: fit.intercept,
                r_squared: fit.r_squared,
            });
        }
    };
    for name in METRICS {
        for &n in &levels {
            let pts: Vec<_> = rows
                .iter()
                .filter(|r| r.n == n)
                .filter_map(|r| metric(r, name).map(|(v, se)| (r.steps as f64, v, se)))
                .collect();
            if !pts.is_empty() && steps.len() > 1 {
                emit(format!("{id}/{name}/n={n}"), "N", Scale::LogLog, pts);
            }
        }
        for &k in &steps {
            let pts: Vec<_> = rows
                .iter()
                .filter(|r| r.steps == k)
                .filter_map(|r| metric(r, name).map(|(v, se)| (r.n, v, se)))
                .collect();
            if !pts.is_empty() && levels.len() > 1 {
                emit(format!("{id}/{name}/N={k}"), "n", Scale::SemiLog, pts);
            }
        }
    }
    (table, rates)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_manifest(study: &Study, outputs: &[PathBuf], cells: usize, failed: usize) -> Result<PathBuf, CliError> {
    let mut entries = Vec::new();
    for path in outputs {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        entries.push(OutputEntry {
            file: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: crate::sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        study_id: study.study_id.clone(),
        config_sha256: study.config_hash.clone(),
        seed: study.seed,
        fbsde_core_version: fbsde_core::VERSION.into(),
        fbsde_cli_version: env!("CARGO_PKG_VERSION").into(),
        cells,
        failed_cells: failed,
        outputs: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    let path = study.output_dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

/// Runs every `(n, N)` cell against the configured reference and writes the
/// ledger, the long-format table, rate fits and the manifest. A failing cell
/// is recorded with status `failed` and the study continues.
pub fn run_study(study: &Study, options: RunOptions) -> Result<RunOutcome, CliError> {
    create_dir(&study.output_dir)?;
    let ref_level = match study.reference {
        ReferenceMode::Fine { level, .. } => level,
        ReferenceMode::ClosedForm => f64::MIN,
    };
    let top = study.levels.iter().copied().fold(ref_level, f64::max);
    let sampler = ShotNoiseSampler::new(&study.representation, top, study.problem.horizon)?;
    let plan = CouplingPlan::new(study.seed, study.paths, study.fine_steps, sampler)?;
    let fine = match study.reference {
        ReferenceMode::Fine { steps, level } => {
            let lm = LevelMoments::compute(&study.problem, &study.representation, level)?;
            let input = coupled_input(&study.problem, &plan, &lm, steps)?;
            let solution = solve_backward(&input, &study.problem, &study.regression)?;
            Some(FineReference { input, solution })
        }
        ReferenceMode::ClosedForm => None,
    };
    let runner = Runner { study, plan, fine };
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &n in &study.levels {
        let level = LevelMoments::compute(&study.problem, &study.representation, n);
        for &steps in &study.steps {
            let mut row = runner.blank_row(n, steps);
            let result = level.clone().map_err(CliError::from).and_then(|lm| {
                runner.cell(&lm, steps, &mut row)?;
                if options.dump_paths > 0 {
                    let ens = coupled_paths(&study.problem, &runner.plan, &lm, steps, options.dump_paths)?;
                    let path = study.output_dir.join(format!("paths_n{n}_N{steps}.csv"));
                    let file = File::create(&path).map_err(io_err(&path))?;
                    let mut w = BufWriter::new(file);
                    ens.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
                    outputs.push(path);
                }
                Ok(())
            });
            if let Err(e) = result {
                row = LedgerRow {
                    status: "failed".into(),
                    message: e.to_string(),
                    ..runner.blank_row(n, steps)
                };
            }
            rows.push(row);
        }
    }
    let ledger = study.output_dir.join(LEDGER_FILE);
    write_csv(&ledger, &rows, &[])?;
    let (table, rates) = long_table(&rows);
    let table_path = study.output_dir.join(TABLE_FILE);
    write_csv(&table_path, &table, &TABLE_HEADER)?;
    let rates_path = study.output_dir.join(RATES_FILE);
    write_csv(&rates_path, &rates, &RATE_HEADER)?;
    let mut all = vec![ledger, table_path, rates_path];
    all.append(&mut outputs);
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let manifest = write_manifest(study, &all, rows.len(), failed)?;
    all.push(manifest);
    Ok(RunOutcome { rows, outputs: all })
}

/// `(representation, n, σ², σ^p, 𝔪¹, 𝔪^p, ζ)` for every configured representation and level.
pub fn moments_rows(study: &Study) -> Result<Vec<(String, TruncationMoments)>, CliError> {
    let mut rows = Vec::new();
    for &method in &study.moment_methods {
        let rep = SeriesRepresentation::new(&study.model, method)?;
        for &n in &study.moment_levels {
            rows.push((method.name().to_string(), TruncationMoments::compute(&rep, n)?));
        }
    }
    Ok(rows)
}

pub fn write_moments(study: &Study) -> Result<PathBuf, CliError> {
    let rows = moments_rows(study)?;
    create_dir(&study.output_dir)?;
    let path = study.output_dir.join(MOMENTS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["representation"];
    header.extend(TruncationMoments::CSV_HEADER);
    w.write_record(&header)?;
    for (name, m) in &rows {
        let mut record = vec![name.clone()];
        record.extend(m.csv_row().iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Human-readable structural checks; configuration errors surface before this runs.
pub fn validate_report(study: &Study) -> Result<String, CliError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let p = &study.problem;
    let spec = SampleSpec::default();
    let _ = writeln!(out, "study {} (config sha256 {})", study.study_id, study.config_hash);
    let _ = writeln!(
        out,
        "model {} with {} representation, moment order {}",
        study.model.kind().name(),
        study.representation.method().name(),
        study.model.moment_order()
    );
    let _ = writeln!(out, "problem {} on [0, {}], X0 = {}", p.name, p.horizon, p.x0);
    let _ = writeln!(
        out,
        "grid: steps {:?}, levels {:?}, paths {}, Brownian grid {}, reference {}",
        study.steps,
        study.levels,
        study.paths,
        study.fine_steps,
        reference_label(&study.reference)
    );
    let lip = estimate_lipschitz(p, &spec);
    let _ = writeln!(
        out,
        "sampled Lipschitz slopes: b {:.4}, a {:.4}, h {:.4}, g {:.4} (sum {:.4}), f {:.4}; within K = {}: {}",
        lip.b,
        lip.a,
        lip.h,
        lip.g,
        lip.b + lip.a + lip.h + lip.g,
        lip.f,
        p.lipschitz_k,
        lip.consistent
    );
    let (rho_ratio, rho_ok) = check_rho_bound(p);
    let _ = writeln!(
        out,
        "rho bound: max |rho(e)| / (1 ^ |e|) = {rho_ratio:.4}, within K: {rho_ok}"
    );
    for &n in &study.levels {
        let r = validate_assumption2(p, &study.representation, n, &spec)?;
        let status = match r.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotCheckable => "not checkable",
        };
        let _ = write!(out, "assumption on h at n = {n}: {status}");
        match r.violation {
            Some((t, x, e, l)) => {
                let _ = writeln!(out, " at t = {t}, x = {x}, e = {e} (ell = {l}, bound {})", r.bound);
            }
            None if r.status == CheckStatus::Pass => {
                let _ = writeln!(
                    out,
                    " (min |ell| = {:.4} over {} points)",
                    r.min_abs_ell, r.points_checked
                );
            }
            None => {
                let _ = writeln!(out, " ({})", r.message);
            }
        }
    }
    Ok(out)
}
