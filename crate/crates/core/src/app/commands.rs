//! The solve, verify, benchmark and convergence commands.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{Format, LoadedConfig};
use super::export::{write_json, write_long_csv, write_summary_csv};
use crate::bsde::RegressionDiagnostics;
use crate::diagnostics::{
    applicability_notes, convergence_study, merton_target, merton_y0, verify, CheckResult, ConvergenceTable,
    DiagnosticsReport, Provenance, SolverId,
};
use crate::error::{Error, Result};
use crate::fbsde::{
    sample_for, Endowment, FbsdeSolution, IterationLog, Method, NumericsConfig, ProblemSpec, Status,
};
use crate::market::{build_market, Theta};
use crate::paths::STREAM_LAYOUT;
use crate::utility::UtilityModel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MAX_ITERATIONS: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Converged => EXIT_OK,
        Status::MaxIterations => EXIT_MAX_ITERATIONS,
        Status::Infeasible => EXIT_INFEASIBLE,
    }
}

pub fn exit_code_for_error(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_ERROR,
    }
}

/// Metadata written next to the solution files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub horizon: f64,
    pub stream_layout: String,
    pub method: Option<Method>,
    pub status: Status,
    pub message: Option<String>,
    pub m_star: Option<f64>,
    pub y0: Option<f64>,
    pub fixed_point_residual: Option<f64>,
    pub iterations: Option<IterationLog>,
    pub regression: Option<RegressionDiagnostics>,
    pub clipped: usize,
    pub experimental: bool,
    pub exported_paths: usize,
    pub files: Vec<String>,
}

/// Wall-clock data, kept apart from the reproducible artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

pub struct SolveOutcome {
    pub solution: Option<FbsdeSolution>,
    pub meta: Meta,
    pub exit_code: i32,
}

fn base_meta(cfg: &LoadedConfig) -> Meta {
    let n = &cfg.config.numerics;
    Meta {
        version: VERSION.to_string(),
        config: cfg.source.clone(),
        config_sha256: cfg.sha256(),
        seed: n.seed,
        n_steps: n.n_steps,
        n_paths: n.n_paths,
        horizon: cfg.config.market.horizon,
        stream_layout: STREAM_LAYOUT.to_string(),
        method: None,
        status: Status::Infeasible,
        message: None,
        m_star: None,
        y0: None,
        fixed_point_residual: None,
        iterations: None,
        regression: None,
        clipped: 0,
        experimental: false,
        exported_paths: 0,
        files: Vec::new(),
    }
}

fn run_solver(cfg: &LoadedConfig, spec: &ProblemSpec) -> Result<FbsdeSolution> {
    let bundle = sample_for(spec, &cfg.config.numerics)?;
    cfg.config.solver.run(&bundle, spec, &cfg.config.numerics)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_timing(dir: &Path, started: u64, clock: Instant) -> Result<()> {
    write_json(
        &dir.join("timing.json"),
        &Timing {
            started_unix_seconds: started,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
        },
    )
}

/// Solves the configured problem and writes the artifacts when an output
/// directory is set. An infeasible problem is reported through the outcome
/// (status `Infeasible`, exit code 3); other solver errors are returned.
pub fn cmd_solve(cfg: &LoadedConfig) -> Result<SolveOutcome> {
    let started = unix_now();
    let clock = Instant::now();
    let spec = cfg.config.spec()?;
    let mut meta = base_meta(cfg);
    let solution = match run_solver(cfg, &spec) {
        Ok(s) => Some(s),
        Err(Error::Infeasible(msg)) => {
            meta.message = Some(msg);
            None
        }
        Err(e) => return Err(e),
    };
    if let Some(sol) = &solution {
        meta.method = Some(sol.method);
        meta.status = sol.status;
        meta.m_star = sol.m_star;
        meta.y0 = Some(sol.y0());
        meta.fixed_point_residual = sol.fixed_point_residual();
        meta.iterations = Some(sol.log.clone());
        meta.regression = Some(sol.regression.clone());
        meta.clipped = sol.clipped;
        meta.experimental = sol.experimental;
    }
    let exit = match &solution {
        Some(s) => exit_code(s.status),
        None => EXIT_INFEASIBLE,
    };
    if let Some(dir) = &cfg.config.output.dir {
        std::fs::create_dir_all(dir)?;
        let formats = &cfg.config.output.formats;
        if let (Some(sol), true) = (&solution, formats.contains(&Format::Csv)) {
            let written = write_solution_csv(dir, sol, cfg.config.output.csv_paths)?;
            meta.exported_paths = sol.bundle.n_paths().min(cfg.config.output.csv_paths);
            meta.files = written;
        }
        if formats.contains(&Format::Json) {
            meta.files.push("meta.json".into());
            write_json(&dir.join("meta.json"), &meta)?;
        }
        write_timing(dir, started, clock)?;
    }
    Ok(SolveOutcome {
        solution,
        meta,
        exit_code: exit,
    })
}

fn write_solution_csv(dir: &Path, sol: &FbsdeSolution, max_paths: usize) -> Result<Vec<String>> {
    let grid = sol.bundle.grid();
    let mut files = Vec::new();
    let mut write = |name: String, s: &crate::paths::StatePaths| -> Result<()> {
        write_long_csv(&dir.join(&name), s, grid, max_paths)?;
        files.push(name);
        Ok(())
    };
    write("solution_X.csv".into(), &sol.x)?;
    write("solution_Y.csv".into(), &sol.y)?;
    let suffix = |n: usize, i: usize| if n == 1 { String::new() } else { i.to_string() };
    for (i, z) in sol.z.iter().enumerate() {
        write(format!("solution_Z{}.csv", suffix(sol.z.len(), i)), z)?;
    }
    for (i, p) in sol.pi_star.iter().enumerate() {
        write(format!("solution_pi{}.csv", suffix(sol.pi_star.len(), i)), p)?;
    }
    let mut series = vec![("X".to_string(), &sol.x), ("Y".to_string(), &sol.y)];
    for (i, z) in sol.z.iter().enumerate() {
        series.push((format!("Z{i}"), z));
    }
    for (i, p) in sol.pi_star.iter().enumerate() {
        series.push((format!("pi{i}"), p));
    }
    write_summary_csv(&dir.join("summary.csv"), grid, &series)?;
    files.push("summary.csv".into());
    Ok(files)
}

pub struct VerifyOutcome {
    pub report: DiagnosticsReport,
    pub solution: Option<FbsdeSolution>,
    pub exit_code: i32,
}

/// Solves, then runs every applicable diagnostic. Exit 0 iff all checks pass,
/// 4 otherwise; an infeasible problem gives 3.
pub fn cmd_verify(cfg: &LoadedConfig) -> Result<VerifyOutcome> {
    let spec = cfg.config.spec()?;
    let n = &cfg.config.numerics;
    let provenance = Provenance {
        version: VERSION.to_string(),
        config: Some(cfg.source.clone()),
        config_sha256: Some(cfg.sha256()),
        seed: n.seed,
        n_steps: n.n_steps,
        n_paths: n.n_paths,
    };
    let sol = match run_solver(cfg, &spec) {
        Ok(s) => s,
        Err(Error::Infeasible(msg)) => {
            let report =
                DiagnosticsReport::new(Vec::new(), provenance).with_notes(vec![format!("infeasible: {msg}")]);
            write_report(cfg, &report)?;
            return Ok(VerifyOutcome {
                report,
                solution: None,
                exit_code: EXIT_INFEASIBLE,
            });
        }
        Err(e) => return Err(e),
    };
    let mut checks = vec![CheckResult::deterministic(
        "solver_status",
        if sol.status == Status::Converged { 0.0 } else { 1.0 },
        0.0,
    )
    .with("status", format!("{:?}", sol.status))];
    checks.extend(verify(&sol, &spec, &cfg.config.verify_options())?);
    let report = DiagnosticsReport::new(checks, provenance).with_notes(applicability_notes(&sol, &spec));
    write_report(cfg, &report)?;
    let exit_code = if report.passed { EXIT_OK } else { EXIT_VERIFICATION };
    Ok(VerifyOutcome {
        report,
        solution: Some(sol),
        exit_code,
    })
}

fn write_report(cfg: &LoadedConfig, report: &DiagnosticsReport) -> Result<()> {
    if let Some(dir) = &cfg.config.output.dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub case: String,
    pub quantity: String,
    pub target: f64,
    pub computed: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub tolerance: f64,
    pub passed: bool,
}

impl BenchmarkTable {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_VERIFICATION
        }
    }

    /// The table as a diagnostics report: one deterministic check per row.
    pub fn to_report(&self, provenance: Provenance) -> DiagnosticsReport {
        let checks = self
            .rows
            .iter()
            .map(|r| {
                let mut c =
                    CheckResult::deterministic(format!("benchmark.{}", r.case), r.rel_error, self.tolerance)
                        .with("quantity", r.quantity.clone())
                        .with("target", r.target)
                        .with("computed", r.computed);
                c.passed = r.passed;
                c
            })
            .collect();
        DiagnosticsReport::new(checks, provenance)
    }
}

/// Options for [`cmd_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub tolerance: f64,
    pub numerics: NumericsConfig,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            numerics: NumericsConfig::default(),
        }
    }
}

/// The three Merton cases (strategy against its closed form, largest relative
/// deviation over nodes and paths) and the mixture-exponential fixed point
/// (`Y_0` against the budget-equation root computed by quadrature).
pub fn cmd_benchmark(options: &BenchmarkOptions) -> Result<BenchmarkTable> {
    let flat = || build_market(1, 0, Theta::constant([0.2]), 1.0);
    let ramp = build_market(1, 0, Theta::function(1, |t| vec![0.1 + 0.1 * t]), 1.0)?;
    let cases = vec![
        (
            "exponential",
            ProblemSpec::new(flat()?, UtilityModel::exponential(1.0)?, 0.0, Endowment::None)?,
        ),
        (
            "power",
            ProblemSpec::new(flat()?, UtilityModel::power(0.5)?, 1.0, Endowment::None)?,
        ),
        (
            "log",
            ProblemSpec::new(ramp, UtilityModel::log()?, 1.0, Endowment::None)?,
        ),
    ];
    let mut rows = Vec::new();
    for (name, spec) in &cases {
        let bundle = sample_for(spec, &options.numerics)?;
        let sol = SolverId::Auto.run(&bundle, spec, &options.numerics)?;
        let target = merton_target(spec, bundle.grid())
            .ok_or_else(|| Error::NotApplicable(format!("no closed form for the {name} case")))?;
        let pi = &sol.pi_star[0];
        let mut worst: f64 = 0.0;
        let mut sum = 0.0;
        for k in 0..bundle.grid().n_nodes() {
            for v in pi.node(k) {
                worst = worst.max((v - target[k]).abs() / target[k].abs());
                sum += v;
            }
        }
        let count = (bundle.grid().n_nodes() * bundle.n_paths()) as f64;
        let target_mean = target.iter().sum::<f64>() / target.len() as f64;
        rows.push(BenchmarkRow {
            case: format!("merton_{name}"),
            quantity: "pi_star".into(),
            target: target_mean,
            computed: sum / count,
            rel_error: worst,
            passed: worst <= options.tolerance,
        });
    }

    let mixture = ProblemSpec::new(
        flat()?,
        UtilityModel::mixture_exp(1.0, 2.0)?,
        0.0,
        Endowment::None,
    )?;
    let target = budget_root(&mixture, 0.2)?;
    let bundle = sample_for(&mixture, &options.numerics)?;
    let sol = SolverId::Auto.run(&bundle, &mixture, &options.numerics)?;
    let rel = (sol.y0() - target).abs() / target.abs();
    rows.push(BenchmarkRow {
        case: "mixture_fixed_point".into(),
        quantity: "y0".into(),
        target,
        computed: sol.y0(),
        rel_error: rel,
        passed: rel <= options.tolerance && sol.status == Status::Converged,
    });
    let passed = rows.iter().all(|r| r.passed);
    Ok(BenchmarkTable {
        rows,
        tolerance: options.tolerance,
        passed,
    })
}

/// `Y_0 = P_0 - x0` for a complete real-line market with constant `|theta| = a`
/// and `H = 0`, where `P_0` solves `E[E_T I(U'(P_0) E_T)] = x0`,
/// `E_T = exp(-a W_T - a^2 T / 2)`. The expectation is a trapezoidal rule in
/// the standard normal variable.
pub fn budget_root(spec: &ProblemSpec, theta_norm: f64) -> Result<f64> {
    let u = &spec.utility;
    let t = spec.market.horizon();
    let (lo_z, hi_z, n) = (-12.0, 12.0, 24_000);
    let h = (hi_z - lo_z) / n as f64;
    let nodes: Vec<(f64, f64)> = (0..=n)
        .map(|j| {
            let z = lo_z + j as f64 * h;
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let e = (-theta_norm * t.sqrt() * z - 0.5 * theta_norm * theta_norm * t).exp();
            (w * h * density, e)
        })
        .collect();
    let budget = |p0: f64| -> f64 {
        let c = u.u1(p0);
        nodes
            .iter()
            .map(|(w, e)| w * e * u.inverse_marginal(c * e))
            .sum::<f64>()
            - spec.x0
    };
    let (mut lo, mut hi) = (spec.x0 - 10.0, spec.x0 + 10.0);
    if !(budget(lo) < 0.0 && budget(hi) > 0.0) {
        return Err(Error::NotApplicable(
            "budget equation has no bracketed root".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if budget(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi) - spec.x0)
}

/// Runs the convergence study on every `(N, M)` of `steps x paths`. The target
/// is the closed-form `Y_0` when one exists. Exit 0 iff the fitted order is at
/// least 0.4 or every level is exact.
pub fn cmd_convergence(
    cfg: &LoadedConfig,
    steps: &[usize],
    paths: &[usize],
) -> Result<(ConvergenceTable, i32)> {
    let spec = cfg.config.spec()?;
    let mut ladder = Vec::new();
    for &n in steps {
        for &m in paths {
            ladder.push((n, m));
        }
    }
    let table = convergence_study(
        &spec,
        cfg.config.solver,
        &ladder,
        &cfg.config.numerics,
        merton_y0(&spec),
    )?;
    if let Some(dir) = &cfg.config.output.dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("convergence.json"), &table)?;
    }
    let code = if table.passes(0.4) {
        EXIT_OK
    } else {
        EXIT_VERIFICATION
    };
    Ok((table, code))
}
