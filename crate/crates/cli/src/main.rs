use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbsde_core::app::{
    cmd_benchmark, cmd_convergence, cmd_solve, cmd_verify, exit_code_for_error, BenchmarkOptions,
    BenchmarkTable, LoadedConfig, Overrides, EXIT_ERROR, EXIT_OK, VERSION,
};
use fbsde_core::diagnostics::{ConvergenceTable, DiagnosticsReport, Provenance};
use fbsde_core::fbsde::NumericsConfig;
use fbsde_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "fbsde",
    version,
    about = "FBSDE solver for expected-utility portfolio optimization"
)]
struct Cli {
    /// Worker threads; defaults to the hardware count.
    #[arg(long, global = true, env = "FBSDE_THREADS")]
    threads: Option<usize>,
    /// Print machine-readable JSON instead of a table.
    #[arg(long, global = true, env = "FBSDE_JSON")]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, env = "FBSDE_CONFIG")]
    config: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args, Debug, Clone)]
struct OverrideArgs {
    #[arg(long, env = "FBSDE_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "FBSDE_PATHS")]
    paths: Option<usize>,
    #[arg(long, env = "FBSDE_STEPS")]
    steps: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, env = "FBSDE_OUT")]
    out: Option<PathBuf>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            steps: self.steps,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the configured problem and write the solution artifacts.
    Solve(RunArgs),
    /// Solve, then run the verification suite.
    Verify(RunArgs),
    /// Run the built-in benchmark cases against their targets.
    Benchmark {
        /// Largest accepted relative error.
        #[arg(long, env = "FBSDE_TOLERANCE", default_value_t = 0.05)]
        tolerance: f64,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Estimate the convergence order in the time step.
    Convergence {
        #[command(flatten)]
        run: RunArgs,
        /// Step counts of the ladder.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        ladder: Vec<usize>,
        /// Path counts of the ladder; defaults to the configured count.
        #[arg(long, value_delimiter = ',')]
        ladder_paths: Vec<usize>,
    },
}

fn load(run: &RunArgs) -> Result<LoadedConfig, Error> {
    let mut cfg = LoadedConfig::from_path(&run.config)?;
    cfg.apply(&run.overrides.to_overrides())?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_report(report: &DiagnosticsReport) {
    println!(
        "{:<48} {:>6} {:>14} {:>12}",
        "check", "result", "statistic", "bound"
    );
    for c in &report.checks {
        println!(
            "{:<48} {:>6} {:>14.6e} {:>12.4e}",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.statistic,
            c.z * c.se + c.tolerance
        );
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    println!("overall: {}", if report.passed { "pass" } else { "FAIL" });
}

fn print_benchmark(table: &BenchmarkTable) {
    println!(
        "{:<22} {:>9} {:>14} {:>14} {:>12} {:>6}",
        "case", "quantity", "target", "computed", "rel_error", "result"
    );
    for r in &table.rows {
        println!(
            "{:<22} {:>9} {:>14.6e} {:>14.6e} {:>12.4e} {:>6}",
            r.case,
            r.quantity,
            r.target,
            r.computed,
            r.rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    println!("tolerance: {}", table.tolerance);
}

fn print_convergence(table: &ConvergenceTable) {
    println!("{:>6} {:>9} {:>14} {:>12} {:>12}", "N", "M", "y0", "se", "error");
    for r in &table.rows {
        let err = r.error.map_or("-".to_string(), |e| format!("{e:.4e}"));
        println!(
            "{:>6} {:>9} {:>14.6e} {:>12.4e} {:>12}",
            r.n_steps, r.n_paths, r.y0, r.se, err
        );
    }
    match table.order {
        Some(o) => println!("fitted order: {o:.3} (reference: {})", table.reference),
        None => println!("fitted order: n/a (reference: {})", table.reference),
    }
    if table.exact {
        println!("exact at every level");
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Solve(args) => {
            let cfg = load(&args)?;
            let out = cmd_solve(&cfg)?;
            if cli.json {
                print_json(&out.meta)?;
            } else {
                let m = &out.meta;
                println!("status: {:?}", m.status);
                if let Some(method) = m.method {
                    println!("method: {method:?}");
                }
                if let Some(y0) = m.y0 {
                    println!("y0: {y0}");
                }
                if let Some(m_star) = m.m_star {
                    println!("m_star: {m_star}");
                }
                if let Some(msg) = &m.message {
                    println!("message: {msg}");
                }
                if m.experimental {
                    println!("note: incomplete-market iteration is experimental");
                }
            }
            Ok(out.exit_code)
        }
        Command::Verify(args) => {
            let cfg = load(&args)?;
            let out = cmd_verify(&cfg)?;
            if cli.json {
                print_json(&out.report)?;
            } else {
                print_report(&out.report);
            }
            Ok(out.exit_code)
        }
        Command::Benchmark { tolerance, overrides } => {
            let base = NumericsConfig::default();
            let numerics = NumericsConfig {
                seed: overrides.seed.unwrap_or(base.seed),
                n_paths: overrides.paths.unwrap_or(base.n_paths),
                n_steps: overrides.steps.unwrap_or(base.n_steps),
                ..base
            };
            numerics.validate()?;
            if tolerance.is_nan() || tolerance < 0.0 {
                return Err(Error::Config {
                    field: "tolerance".into(),
                    message: "must be non-negative".into(),
                });
            }
            let options = BenchmarkOptions { tolerance, numerics };
            let table = cmd_benchmark(&options)?;
            let n = &options.numerics;
            let report = table.to_report(Provenance {
                version: VERSION.to_string(),
                config: None,
                config_sha256: None,
                seed: n.seed,
                n_steps: n.n_steps,
                n_paths: n.n_paths,
            });
            if let Some(dir) = &overrides.out {
                std::fs::create_dir_all(dir)?;
                fbsde_core::app::export::write_json(&dir.join("benchmark.json"), &report)?;
            }
            if cli.json {
                print_json(&report)?;
            } else {
                print_benchmark(&table);
            }
            Ok(table.exit_code())
        }
        Command::Convergence {
            run,
            ladder,
            ladder_paths,
        } => {
            let cfg = load(&run)?;
            let paths = if ladder_paths.is_empty() {
                vec![cfg.config.numerics.n_paths]
            } else {
                ladder_paths
            };
            let (table, code) = cmd_convergence(&cfg, &ladder, &paths)?;
            if cli.json {
                print_json(&table)?;
            } else {
                print_convergence(&table);
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for_error(&e) as u8)
        }
    }
}
