//! Coupled forward-backward solvers for the optimal investment problem.
//!
//! * complete markets, real line: fixed point `m` of `Y_0^m` over the
//!   auxiliary diffusion `P^m = X + Y`;
//! * complete markets, half line: fixed point over the state price level
//!   `G^m = U'(x0) e^m E(-theta . W)` with wealth recovered by inversion;
//! * incomplete markets: alternating forward/backward Picard passes.

mod complete;
mod endowment;
mod picard;

use serde::{Deserialize, Serialize};

pub use complete::{
    solve_complete_halfline, solve_complete_halfline_on, solve_complete_realline, solve_complete_realline_on,
};
pub use endowment::Endowment;
pub use picard::{solve_incomplete_picard, solve_incomplete_picard_on};

use crate::bsde::{RegressionBasis, RegressionDiagnostics, StepMode};
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::paths::{sample_brownian, PathBundle, StatePaths, TimeGrid};
use crate::utility::{Domain, Family, UtilityModel};

/// Market, preferences, initial wealth and endowment.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub market: MarketModel,
    pub utility: UtilityModel,
    pub x0: f64,
    pub endowment: Endowment,
}

/// How strategies are expressed: money amounts (real line) or proportions of
/// wealth (half line).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convention {
    Amount,
    Proportion,
}

impl ProblemSpec {
    pub fn new(market: MarketModel, utility: UtilityModel, x0: f64, endowment: Endowment) -> Result<Self> {
        if !x0.is_finite() {
            return Err(Error::InvalidArgument(format!("x0 = {x0} is not finite")));
        }
        endowment.validate(market.dim())?;
        if utility.domain() == Domain::HalfLine {
            if x0 <= 0.0 {
                return Err(Error::Domain {
                    what: "initial wealth on the half line",
                    x: x0,
                });
            }
            if endowment.bound().is_none() {
                return Err(Error::InvalidArgument(
                    "half-line problems need a bounded endowment".into(),
                ));
            }
            if endowment.lower_bound() < 0.0 {
                return Err(Error::InvalidArgument(
                    "half-line problems need a non-negative endowment".into(),
                ));
            }
        }
        Ok(Self {
            market,
            utility,
            x0,
            endowment,
        })
    }

    pub fn convention(&self) -> Convention {
        match self.utility.domain() {
            Domain::RealLine => Convention::Amount,
            Domain::HalfLine => Convention::Proportion,
        }
    }
}

/// Discretization and iteration controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub basis: RegressionBasis,
    pub step_mode: StepMode,
    pub fp_tolerance: f64,
    pub fp_max_iter: usize,
    pub damping: f64,
    pub picard_max_iter: usize,
    pub picard_tolerance: f64,
    pub eps_dom: f64,
    /// Overrides the default clamp of ten times the a-priori bound on `Y`.
    pub y_max: Option<f64>,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            n_steps: 64,
            n_paths: 20_000,
            seed: 0,
            basis: RegressionBasis::default(),
            step_mode: StepMode::ImplicitNewton,
            fp_tolerance: 1e-3,
            fp_max_iter: 50,
            damping: 0.5,
            picard_max_iter: 30,
            picard_tolerance: 1e-3,
            eps_dom: 1e-8,
            y_max: None,
        }
    }
}

impl NumericsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: format!("numerics.{field}"),
                message,
            })
        };
        if self.n_steps == 0 {
            return bad("n_steps", "must be at least 1".into());
        }
        if self.n_paths < 2 {
            return bad("n_paths", format!("must be at least 2, got {}", self.n_paths));
        }
        for (name, v) in [
            ("fp_tolerance", self.fp_tolerance),
            ("picard_tolerance", self.picard_tolerance),
            ("eps_dom", self.eps_dom),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping", format!("must lie in (0, 1], got {}", self.damping));
        }
        if self.fp_max_iter == 0 {
            return bad("fp_max_iter", "must be at least 1".into());
        }
        if self.picard_max_iter == 0 {
            return bad("picard_max_iter", "must be at least 1".into());
        }
        if let Some(y) = self.y_max {
            if !(y.is_finite() && y > 0.0) {
                return bad("y_max", format!("must be positive, got {y}"));
            }
        }
        if let Err(e) = self.basis.validate() {
            return bad("basis", e.to_string());
        }
        Ok(())
    }

    pub fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        TimeGrid::new(self.n_steps, horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CompleteRealLine,
    CompleteHalfLine,
    IncompletePicard,
}

/// Iteration history: the fixed-point sequence `(m, Y_0^m)` or the Picard
/// residuals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub m: Vec<f64>,
    pub y0: Vec<f64>,
    pub picard_residuals: Vec<f64>,
    /// Bracket used when the damped iteration fell back to bisection.
    pub bracket: Option<(f64, f64)>,
}

/// Solver output on the simulation grid.
#[derive(Debug, Clone)]
pub struct FbsdeSolution {
    pub method: Method,
    pub bundle: PathBundle,
    pub x: StatePaths,
    pub y: StatePaths,
    /// `d` components; the first `d1` are `Z^H`.
    pub z: Vec<StatePaths>,
    /// `d1` components, amounts on the real line, proportions on the half line.
    pub pi_star: Vec<StatePaths>,
    /// `H` per path.
    pub endowment: Vec<f64>,
    pub m_star: Option<f64>,
    pub status: Status,
    pub log: IterationLog,
    pub regression: RegressionDiagnostics,
    /// `P = X + Y` for the complete real-line solver.
    pub p: Option<StatePaths>,
    /// `log G` for the complete half-line solver.
    pub log_g: Option<StatePaths>,
    /// Half-line wealth evaluations raised to `eps_dom`.
    pub clipped: usize,
    pub experimental: bool,
}

impl FbsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y.get(0, 0)
    }

    /// `|Y_0 - m*|` for the fixed-point solvers.
    pub fn fixed_point_residual(&self) -> Option<f64> {
        self.m_star.map(|m| (self.y0() - m).abs())
    }

    /// `E[int |Z^O|^2 dt]`.
    pub fn orthogonal_energy(&self, d1: usize) -> f64 {
        let grid = self.bundle.grid();
        let m = self.bundle.n_paths();
        let dt = grid.dt();
        let mut s = 0.0;
        for zc in &self.z[d1..] {
            for k in 0..grid.n_steps() {
                s += zc.node(k).iter().map(|v| v * v).sum::<f64>() * dt;
            }
        }
        s / m as f64
    }
}

/// Picks the solver for the problem: complete markets use the fixed-point
/// constructions, incomplete markets the Picard iteration.
pub fn solve(spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<FbsdeSolution> {
    let bundle = sample_for(spec, numerics)?;
    solve_on(&bundle, spec, numerics)
}

/// [`solve`] on a caller-supplied bundle.
pub fn solve_on(bundle: &PathBundle, spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<FbsdeSolution> {
    match (spec.utility.domain(), spec.market.is_complete()) {
        (Domain::RealLine, true) => solve_complete_realline_on(bundle, spec, numerics),
        (Domain::HalfLine, true) => solve_complete_halfline_on(bundle, spec, numerics),
        (_, false) => solve_incomplete_picard_on(bundle, spec, numerics),
    }
}

/// Brownian bundle matching the problem's dimension and the numerics.
pub fn sample_for(spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<PathBundle> {
    numerics.validate()?;
    sample_brownian(
        numerics.grid(spec.market.horizon())?,
        numerics.n_paths,
        spec.market.dim(),
        numerics.seed,
    )
}

/// Power utility with a non-negative bounded endowment. Checks on every path
/// that the generic terminal `log(U'(X_T + H) / U'(X_T))` equals
/// `(gamma - 1) log(1 + H / X_T)`.
pub fn solve_power_endowment(spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<FbsdeSolution> {
    let bundle = sample_for(spec, numerics)?;
    solve_power_endowment_on(&bundle, spec, numerics)
}

pub fn solve_power_endowment_on(
    bundle: &PathBundle,
    spec: &ProblemSpec,
    numerics: &NumericsConfig,
) -> Result<FbsdeSolution> {
    let gamma = match spec.utility.family() {
        Family::Power { gamma } if *gamma > 0.0 && *gamma < 1.0 => *gamma,
        _ => {
            return Err(Error::InvalidArgument(
                "power endowment solver needs power utility with gamma in (0, 1)".into(),
            ))
        }
    };
    let sol = if spec.market.is_complete() {
        solve_complete_halfline_on(bundle, spec, numerics)?
    } else {
        solve_incomplete_picard_on(bundle, spec, numerics)?
    };
    let gap = power_terminal_gap(&sol, &spec.utility, gamma);
    if !(gap <= 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "power terminal identity violated by {gap:e}"
        )));
    }
    Ok(sol)
}

/// Largest relative gap between the generic half-line terminal and the power
/// closed form over all paths.
pub fn power_terminal_gap(sol: &FbsdeSolution, u: &UtilityModel, gamma: f64) -> f64 {
    let xn = sol.x.terminal();
    xn.iter()
        .zip(&sol.endowment)
        .map(|(&x, &h)| {
            let generic = (u.u1(x + h) / u.u1(x)).ln();
            let closed = (gamma - 1.0) * (h / x).ln_1p();
            (generic - closed).abs() / closed.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Optimal strategy from `(X, Y, Z)`: `-theta phi1(X + Y) - Z^H` as amounts on
/// the real line, `-U'(X) / (X U''(X)) (Z^H + theta^H)` as proportions on
/// the half line.
pub fn extract_strategy(sol: &FbsdeSolution, spec: &ProblemSpec, eps_dom: f64) -> Result<Vec<StatePaths>> {
    strategy_from(&sol.bundle, &sol.x, &sol.y, &sol.z, spec, eps_dom)
}

pub(crate) fn strategy_from(
    bundle: &PathBundle,
    x: &StatePaths,
    y: &StatePaths,
    z: &[StatePaths],
    spec: &ProblemSpec,
    eps_dom: f64,
) -> Result<Vec<StatePaths>> {
    let grid = bundle.grid();
    let n_nodes = grid.n_nodes();
    let m = bundle.n_paths();
    let d = spec.market.dim();
    let d1 = spec.market.d1();
    let theta = spec.market.theta_on_grid(grid.n_steps());
    let u = &spec.utility;
    match u.domain() {
        Domain::RealLine => Ok((0..d1)
            .map(|i| {
                StatePaths::from_fn(n_nodes, m, |k, p| {
                    -theta[k * d + i] * u.phi1_unchecked(x.get(k, p) + y.get(k, p)) - z[i].get(k, p)
                })
            })
            .collect()),
        Domain::HalfLine => {
            if let Some(v) = x.values().iter().find(|v| !(**v > eps_dom)) {
                return Err(Error::Domain {
                    what: "wealth in the half-line strategy",
                    x: *v,
                });
            }
            Ok((0..d1)
                .map(|i| {
                    StatePaths::from_fn(n_nodes, m, |k, p| {
                        let xv = x.get(k, p);
                        -u.u1(xv) / (xv * u.u2(xv)) * (z[i].get(k, p) + theta[k * d + i])
                    })
                })
                .collect())
        }
    }
}

/// Largest residual of the strategy identity over all nodes and paths,
/// relative to the size of the terms: `pi + Z + theta phi1(X + Y)` on the real
/// line, `pi X U''(X) + U'(X)(Z + theta)` on the half line.
pub fn strategy_identity_residual(sol: &FbsdeSolution, spec: &ProblemSpec) -> f64 {
    let grid = sol.bundle.grid();
    let d = spec.market.dim();
    let theta = spec.market.theta_on_grid(grid.n_steps());
    let u = &spec.utility;
    let mut worst: f64 = 0.0;
    for (i, pi) in sol.pi_star.iter().enumerate() {
        for k in 0..grid.n_nodes() {
            let th = theta[k * d + i];
            for p in 0..sol.bundle.n_paths() {
                let (x, zz, q) = (sol.x.get(k, p), sol.z[i].get(k, p), pi.get(k, p));
                let (r, scale) = match u.domain() {
                    Domain::RealLine => {
                        let a = th * u.phi1_unchecked(x + sol.y.get(k, p));
                        (q + zz + a, q.abs().max(zz.abs()).max(a.abs()).max(1.0))
                    }
                    Domain::HalfLine => {
                        let a = q * x * u.u2(x);
                        let b = u.u1(x) * (zz + th);
                        (a + b, a.abs().max(b.abs()).max(1.0))
                    }
                };
                worst = worst.max(r.abs() / scale);
            }
        }
    }
    worst
}

/// Outcome of the fixed-point search over `m`.
pub(crate) struct FixedPoint<T> {
    pub m: f64,
    pub value: T,
    pub status: Status,
    pub log: IterationLog,
}

/// Finds `m` with `|g(m) - m| <= tol` by damped iteration, falling back to
/// bisection on `[-B, B]` (B doubling from `k_bound` up to `10 k_bound`) after
/// two successive sign flips of the update. `Infeasible` evaluations count as
/// `g(m) < m` during bisection.
pub(crate) fn fixed_point<T>(
    numerics: &NumericsConfig,
    k_bound: f64,
    mut g: impl FnMut(f64) -> Result<(f64, T)>,
) -> Result<FixedPoint<T>> {
    let tol = numerics.fp_tolerance;
    let lambda = numerics.damping;
    let mut log = IterationLog::default();
    let mut m = 0.0;
    let mut signs: Vec<f64> = Vec::new();
    let mut last: Option<(f64, T)> = None;
    for _ in 0..numerics.fp_max_iter {
        let (gv, value) = g(m)?;
        log.m.push(m);
        log.y0.push(gv);
        let r = gv - m;
        if r.abs() <= tol {
            return Ok(FixedPoint {
                m,
                value,
                status: Status::Converged,
                log,
            });
        }
        signs.push(r.signum());
        let n = signs.len();
        let oscillating = n >= 3 && signs[n - 1] != signs[n - 2] && signs[n - 2] != signs[n - 3];
        last = Some((m, value));
        if oscillating {
            return bisect(numerics, k_bound, g, log);
        }
        m = (1.0 - lambda) * m + lambda * gv;
    }
    let (m, value) = last.expect("at least one iteration");
    Ok(FixedPoint {
        m,
        value,
        status: Status::MaxIterations,
        log,
    })
}

fn bisect<T>(
    numerics: &NumericsConfig,
    k_bound: f64,
    mut g: impl FnMut(f64) -> Result<(f64, T)>,
    mut log: IterationLog,
) -> Result<FixedPoint<T>> {
    let tol = numerics.fp_tolerance;
    let base = if k_bound > 0.0 { k_bound } else { 1.0 };
    let mut eval = |m: f64, log: &mut IterationLog| -> Result<(f64, Option<T>)> {
        match g(m) {
            Ok((gv, v)) => {
                log.m.push(m);
                log.y0.push(gv);
                Ok((gv - m, Some(v)))
            }
            Err(Error::Infeasible(_)) => Ok((f64::NEG_INFINITY, None)),
            Err(e) => Err(e),
        }
    };
    let mut b = base;
    let (mut lo, mut hi);
    loop {
        let (flo, vlo) = eval(-b, &mut log)?;
        let (fhi, vhi) = eval(b, &mut log)?;
        for (f, v, m) in [(flo, vlo, -b), (fhi, vhi, b)] {
            if f.abs() <= tol {
                log.bracket = Some((-b, b));
                return Ok(FixedPoint {
                    m,
                    value: v.expect("finite residual has a value"),
                    status: Status::Converged,
                    log,
                });
            }
        }
        if flo > 0.0 && fhi < 0.0 {
            lo = -b;
            hi = b;
            break;
        }
        if b >= 10.0 * base {
            return Err(Error::Infeasible(format!(
                "no sign change of Y_0^m - m on [-{b}, {b}]"
            )));
        }
        b = (2.0 * b).min(10.0 * base);
    }
    log.bracket = Some((lo, hi));
    let mut best: Option<(f64, f64, T)> = None;
    for _ in 0..numerics.fp_max_iter.max(60) {
        let mid = 0.5 * (lo + hi);
        let (f, v) = eval(mid, &mut log)?;
        if let Some(v) = v {
            if f.abs() <= tol {
                return Ok(FixedPoint {
                    m: mid,
                    value: v,
                    status: Status::Converged,
                    log,
                });
            }
            if best.as_ref().is_none_or(|b| f.abs() < b.0) {
                best = Some((f.abs(), mid, v));
            }
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match best {
        Some((_, m, value)) => Ok(FixedPoint {
            m,
            value,
            status: Status::MaxIterations,
            log,
        }),
        None => Err(Error::Infeasible("every bisection point was infeasible".into())),
    }
}

/// Regression coordinates `W^c` for the components the endowment reads.
pub(crate) fn endowment_regressors(bundle: &PathBundle, endowment: &Endowment) -> Vec<StatePaths> {
    if endowment.is_zero() {
        return Vec::new();
    }
    let n_nodes = bundle.grid().n_nodes();
    endowment
        .components()
        .into_iter()
        .map(|c| {
            let mut s = StatePaths::zeros(n_nodes, bundle.n_paths());
            for k in 0..n_nodes {
                s.node_mut(k).copy_from_slice(bundle.w(k, c));
            }
            s
        })
        .collect()
}

/// Clamp on `Y`: the configured value or ten times the a-priori bound.
pub(crate) fn y_clamp(numerics: &NumericsConfig, a_priori: f64) -> Option<f64> {
    numerics
        .y_max
        .or(Some(10.0 * a_priori))
        .filter(|b| *b > 0.0 && b.is_finite())
}
