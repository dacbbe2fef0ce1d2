//! Configuration-driven commands shared by the command-line tool and the
//! Python bindings.

pub mod commands;
pub mod config;
pub mod export;

pub use commands::{
    budget_root, cmd_benchmark, cmd_convergence, cmd_solve, cmd_verify, exit_code, exit_code_for_error,
    BenchmarkOptions, BenchmarkRow, BenchmarkTable, Meta, SolveOutcome, Timing, VerifyOutcome, EXIT_ERROR,
    EXIT_INFEASIBLE, EXIT_MAX_ITERATIONS, EXIT_OK, EXIT_VERIFICATION, VERSION,
};
pub use config::{Format, LoadedConfig, Overrides, RunConfig, ThetaSpec};
