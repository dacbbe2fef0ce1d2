//! Verification suite for solver outputs.
//!
//! Every check carries its statistic, standard error, multiplier `z` and
//! absolute tolerance, and passes iff `|statistic| <= z * se + tolerance`, so
//! a report can be re-adjudicated from its numbers alone. Statistical checks
//! have `tolerance = 0` unless a discretization allowance is documented in
//! their context; deterministic checks have `se = 0`.

mod convergence;
mod martingale;
mod optimality;
mod structure;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, Normal};

pub use convergence::{convergence_study, fit_order, ConvergenceRow, ConvergenceTable, SolverId};
pub use martingale::{martingale_test, supermartingale_test};
pub use optimality::{
    default_perturbations, first_order_condition_test, first_order_condition_test_wealth, merton_benchmark,
    merton_target, merton_y0, utility_estimate, Perturbation, UtilityEstimate,
};
pub use structure::{cole_hopf_check, cole_hopf_residual_rms, dual_consistency_check};

use crate::bsde::RegressionBasis;
use crate::error::Result;
use crate::fbsde::{strategy_identity_residual, FbsdeSolution, ProblemSpec};
use crate::paths::{mean_std, wealth_proportion, StatePaths};
use crate::utility::Domain;

/// Default multiplier on the standard error.
pub const DEFAULT_Z: f64 = 3.0;
/// Perturbation directions in the utility comparison.
const UTILITY_DIRECTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Statistical,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub statistic: f64,
    pub se: f64,
    pub z: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub context: BTreeMap<String, Value>,
}

impl CheckResult {
    pub fn statistical(name: impl Into<String>, statistic: f64, se: f64, z: f64) -> Self {
        Self::build(name.into(), CheckKind::Statistical, statistic, se, z, 0.0)
    }

    /// Statistical check with an additional absolute allowance.
    pub fn statistical_with_allowance(
        name: impl Into<String>,
        statistic: f64,
        se: f64,
        z: f64,
        allowance: f64,
    ) -> Self {
        Self::build(name.into(), CheckKind::Statistical, statistic, se, z, allowance)
    }

    pub fn deterministic(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self::build(
            name.into(),
            CheckKind::Deterministic,
            statistic,
            0.0,
            0.0,
            tolerance,
        )
    }

    fn build(name: String, kind: CheckKind, statistic: f64, se: f64, z: f64, tolerance: f64) -> Self {
        let passed = statistic.is_finite() && statistic.abs() <= z * se + tolerance;
        Self {
            name,
            kind,
            statistic,
            se,
            z,
            tolerance,
            passed,
            context: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.context.insert(key.to_string(), value.into());
        self
    }

    /// Re-evaluates the pass rule from the stored numbers.
    pub fn recompute(&self) -> bool {
        self.statistic.is_finite() && self.statistic.abs() <= self.z * self.se + self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    /// Configuration source text, verbatim.
    pub config: Option<String>,
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
    pub provenance: Provenance,
    /// Scope of the theory behind the checks for this run, recorded without
    /// being adjudicated.
    pub notes: Vec<String>,
}

impl DiagnosticsReport {
    pub fn new(checks: Vec<CheckResult>, provenance: Provenance) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Self {
            checks,
            passed,
            provenance,
            notes: Vec::new(),
        }
    }

    pub fn with_notes(mut self, notes: Vec<String>) -> Self {
        self.notes = notes;
        self
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Two-sided multiplier keeping the family-wise error of `n` tests at the
/// level of a single `3 sigma` test.
pub fn bonferroni_z(base_z: f64, n: usize) -> f64 {
    if n <= 1 {
        return base_z;
    }
    let normal = Normal::standard();
    let tail = 1.0 - normal.cdf(base_z);
    normal.inverse_cdf(1.0 - tail / n as f64)
}

/// Evenly thinned nodes `0 <= k < N`, `ceil(N / 8)` of them.
pub(crate) fn thinned_nodes(n_steps: usize) -> Vec<usize> {
    let count = n_steps.div_ceil(8).max(1);
    (0..count).map(|j| j * n_steps / count).collect()
}

pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let (m, s) = mean_std(v);
    (m, s / (v.len() as f64).sqrt())
}

/// Options for [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub z: f64,
    pub merton_tolerance: f64,
    pub basis: RegressionBasis,
    pub perturbation_seed: u64,
    /// Size of the strategy perturbations in the utility comparison.
    pub utility_epsilon: f64,
    /// Tolerance of the fixed-point residual `|Y_0 - m*|`.
    pub fp_tolerance: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            z: DEFAULT_Z,
            merton_tolerance: 0.05,
            basis: RegressionBasis::polynomial(2),
            perturbation_seed: 7,
            utility_epsilon: 0.1,
            fp_tolerance: 1e-3,
        }
    }
}

/// Runs every diagnostic that applies to the solution.
pub fn verify(sol: &FbsdeSolution, spec: &ProblemSpec, options: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut checks = Vec::new();
    let bundle = &sol.bundle;
    let n = bundle.grid().n_steps();
    let z = options.z;
    let u = &spec.utility;

    checks.push(
        CheckResult::deterministic("strategy_identity", strategy_identity_residual(sol, spec), 1e-12)
            .with("scale", "relative to the largest term"),
    );
    checks.push(terminal_condition(sol, spec));
    if let Some(r) = sol.fixed_point_residual() {
        checks.push(
            CheckResult::deterministic("fixed_point_residual", r, options.fp_tolerance)
                .with("m_star", sol.m_star.unwrap_or(f64::NAN)),
        );
    }

    // Martingale property of the marginal-utility process, normalized at t = 0.
    let m_process = match u.domain() {
        Domain::RealLine => StatePaths::from_fn(n + 1, bundle.n_paths(), |k, p| {
            u.u1(sol.x.get(k, p) + sol.y.get(k, p))
        }),
        Domain::HalfLine => StatePaths::from_fn(n + 1, bundle.n_paths(), |k, p| {
            u.u1(sol.x.get(k, p)) * sol.y.get(k, p).exp()
        }),
    };
    let m0 = m_process.get(0, 0);
    let m_process = m_process.map(|v| v / m0);
    for c in martingale_test(&m_process, bundle, &options.basis)? {
        checks.push(prefix("marginal_utility", c));
    }

    match u.domain() {
        Domain::RealLine => {
            let perturbations =
                default_perturbations(bundle.grid(), spec.market.d1(), options.perturbation_seed);
            checks.extend(first_order_condition_test(sol, spec, &perturbations, z)?);
        }
        Domain::HalfLine => {
            checks.extend(dual_consistency_check(sol, spec, &options.basis, z)?);
            checks.extend(supermartingale_stress(sol, spec, &options.basis)?);
            if spec.market.dim() == 1 && spec.endowment.is_zero() {
                checks.extend(cole_hopf_check(sol, spec, z)?);
            }
        }
    }
    if merton_target(spec, bundle.grid()).is_some() {
        checks.extend(merton_benchmark(spec, sol, options.merton_tolerance)?);
    }
    checks.extend(utility_comparison(sol, spec, options)?);
    Ok(checks)
}

/// Applicability of the verification theory to this problem.
pub fn applicability_notes(sol: &FbsdeSolution, spec: &ProblemSpec) -> Vec<String> {
    let u = &spec.utility;
    let mut notes = Vec::new();
    match u.domain() {
        Domain::RealLine => notes.push(format!(
            "real line: the martingale characterization assumes bounded risk tolerance; \
             the bound used for |U'/U''| (grid supremum with safety margin) is {:.6e}",
            u.phi1_bound()
        )),
        Domain::HalfLine => notes.push(
            "half line: risk tolerance is unbounded for large wealth; checks use the \
             multiplicative characterization U'(X) exp(Y)"
                .to_string(),
        ),
    }
    if !spec.market.is_complete() {
        notes.push(format!(
            "incomplete market (d2 = {}): solution from the experimental Picard iteration",
            spec.market.d2()
        ));
    }
    if sol.clipped > 0 {
        notes.push(format!(
            "{} wealth evaluations were raised to the domain floor",
            sol.clipped
        ));
    }
    notes
}

fn prefix(p: &str, mut c: CheckResult) -> CheckResult {
    c.name = format!("{p}.{}", c.name);
    c
}

/// `Y_N` equals the domain's terminal value on every path.
fn terminal_condition(sol: &FbsdeSolution, spec: &ProblemSpec) -> CheckResult {
    let u = &spec.utility;
    let gap = sol
        .y
        .terminal()
        .iter()
        .zip(sol.x.terminal())
        .zip(&sol.endowment)
        .map(|((&y, &x), &h)| {
            let target = match u.domain() {
                Domain::RealLine => h,
                Domain::HalfLine => (u.u1(x + h) / u.u1(x)).ln(),
            };
            (y - target).abs() / target.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    CheckResult::deterministic("terminal_condition", gap, 1e-12)
}

/// `X^pi D` is a supermartingale for `0.5 pi*`, `2 pi*` and the constant
/// proportion 1.
fn supermartingale_stress(
    sol: &FbsdeSolution,
    spec: &ProblemSpec,
    basis: &RegressionBasis,
) -> Result<Vec<CheckResult>> {
    let u = &spec.utility;
    let bundle = &sol.bundle;
    let n_nodes = bundle.grid().n_nodes();
    let m = bundle.n_paths();
    let d0 = u.u1(sol.x.get(0, 0)) * sol.y.get(0, 0).exp();
    let y_star = StatePaths::from_fn(n_nodes, m, |k, p| {
        u.u1(sol.x.get(k, p)) * sol.y.get(k, p).exp() / d0
    });
    let scaled = |f: f64| -> Vec<StatePaths> { sol.pi_star.iter().map(|c| c.map(|v| f * v)).collect() };
    let stresses: [(&str, Vec<StatePaths>); 3] = [
        ("half_pi", scaled(0.5)),
        ("double_pi", scaled(2.0)),
        (
            "unit_proportion",
            sol.pi_star
                .iter()
                .map(|_| StatePaths::constant(n_nodes, m, 1.0))
                .collect(),
        ),
    ];
    let mut out = Vec::new();
    for (name, pi) in stresses {
        let x = wealth_proportion(bundle, &spec.market, &pi, spec.x0)?;
        let prod = StatePaths::from_fn(n_nodes, m, |k, p| x.get(k, p) * y_star.get(k, p) / spec.x0);
        for c in supermartingale_test(&prod, bundle, basis)? {
            out.push(prefix(&format!("wealth_deflator.{name}"), c));
        }
    }
    Ok(out)
}

/// `E[U(X_T + H)]` under `pi*` dominates `pi* +- eps h` up to noise.
fn utility_comparison(
    sol: &FbsdeSolution,
    spec: &ProblemSpec,
    options: &VerifyOptions,
) -> Result<Vec<CheckResult>> {
    let bundle = &sol.bundle;
    let grid = bundle.grid();
    let d1 = spec.market.d1();
    let m = bundle.n_paths();
    let base = utility_estimate(spec, &sol.pi_star, bundle)?;
    let perturbations = default_perturbations(grid, d1, options.perturbation_seed);
    let mut out = Vec::new();
    for h in perturbations.iter().take(UTILITY_DIRECTIONS) {
        for sign in [1.0, -1.0] {
            let eps = sign * options.utility_epsilon;
            let pi: Vec<StatePaths> = sol
                .pi_star
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    StatePaths::from_fn(grid.n_nodes(), m, |k, p| {
                        c.get(k, p) + eps * h.value(k.min(grid.n_steps() - 1), i)
                    })
                })
                .collect();
            let pert = utility_estimate(spec, &pi, bundle)?;
            let diff: Vec<f64> = pert
                .terminal_utility
                .iter()
                .zip(&base.terminal_utility)
                .map(|(a, b)| a - b)
                .filter(|v| v.is_finite())
                .collect();
            let (mean, se) = mean_and_se(&diff);
            // One-sided: only an improvement over pi* counts against it.
            let tag = if sign > 0.0 { "plus" } else { "minus" };
            out.push(
                CheckResult::statistical(
                    format!("utility_optimality.{}.{tag}", h.name),
                    mean.max(0.0),
                    se,
                    options.z,
                )
                .with("gain", mean)
                .with("epsilon", eps),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
