//! First-order conditions, closed-form benchmarks and utility estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{mean_and_se, CheckResult};
use crate::error::{Error, Result};
use crate::fbsde::{Convention, FbsdeSolution, ProblemSpec};
use crate::paths::{wealth_amount, wealth_proportion, PathBundle, StatePaths, TimeGrid};
use crate::utility::{Domain, Family};

/// Pieces of the random piecewise-constant perturbations.
const RANDOM_PIECES: usize = 4;
/// Largest share of paths allowed to leave the utility domain.
const MAX_VIOLATION_SHARE: f64 = 1e-3;

/// Deterministic bounded direction `h(t_k)` with `d1` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub name: String,
    pub d1: usize,
    /// Step-major values, `n_steps * d1`.
    pub values: Vec<f64>,
}

impl Perturbation {
    pub fn from_fn(
        name: impl Into<String>,
        grid: &TimeGrid,
        d1: usize,
        f: impl Fn(f64, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(grid.n_steps() * d1);
        for k in 0..grid.n_steps() {
            for i in 0..d1 {
                values.push(f(grid.t(k), i));
            }
        }
        Self {
            name: name.into(),
            d1,
            values,
        }
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.d1 + i]
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.d1.max(1)
    }
}

/// Constants `+-1` per component, `+-sign(t - T/2)` and two seeded random
/// piecewise-constant directions.
pub fn default_perturbations(grid: &TimeGrid, d1: usize, seed: u64) -> Vec<Perturbation> {
    let half = 0.5 * grid.horizon();
    let mut out = Vec::new();
    for c in 0..d1 {
        for s in [1.0, -1.0] {
            let tag = if s > 0.0 { "plus" } else { "minus" };
            out.push(Perturbation::from_fn(
                format!("const_{tag}_{c}"),
                grid,
                d1,
                |_, i| {
                    if i == c {
                        s
                    } else {
                        0.0
                    }
                },
            ));
        }
    }
    let sign = |t: f64| if t < half { -1.0 } else { 1.0 };
    out.push(Perturbation::from_fn("switch_plus", grid, d1, |t, _| sign(t)));
    out.push(Perturbation::from_fn("switch_minus", grid, d1, |t, _| -sign(t)));
    for j in 0..2u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(j));
        let levels: Vec<f64> = (0..RANDOM_PIECES * d1)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let horizon = grid.horizon();
        out.push(Perturbation::from_fn(format!("random_{j}"), grid, d1, |t, i| {
            let piece = ((t / horizon * RANDOM_PIECES as f64) as usize).min(RANDOM_PIECES - 1);
            levels[piece * d1 + i]
        }));
    }
    out
}

/// `E[U'(X_N + H) sum_k h_k . (dW^H_k + theta^H dt)]` for each `h`, on the
/// solver's own terminal wealth.
pub fn first_order_condition_test(
    sol: &FbsdeSolution,
    spec: &ProblemSpec,
    perturbations: &[Perturbation],
    z: f64,
) -> Result<Vec<CheckResult>> {
    first_order_condition_test_wealth(
        sol.x.terminal(),
        &sol.endowment,
        &sol.bundle,
        spec,
        perturbations,
        z,
    )
}

/// [`first_order_condition_test`] for an arbitrary terminal wealth, e.g. one
/// built from a shifted strategy.
pub fn first_order_condition_test_wealth(
    terminal_wealth: &[f64],
    endowment: &[f64],
    bundle: &PathBundle,
    spec: &ProblemSpec,
    perturbations: &[Perturbation],
    z: f64,
) -> Result<Vec<CheckResult>> {
    if spec.utility.domain() != Domain::RealLine {
        return Err(Error::NotApplicable(
            "first-order test is defined for real-line solutions".into(),
        ));
    }
    let m = bundle.n_paths();
    if terminal_wealth.len() != m || endowment.len() != m {
        return Err(Error::InvalidArgument(
            "terminal wealth or endowment missing for some paths".into(),
        ));
    }
    let grid = bundle.grid();
    let n = grid.n_steps();
    let d = spec.market.dim();
    let d1 = spec.market.d1();
    let dt = grid.dt();
    let theta = spec.market.theta_on_grid(n);
    let marginal: Vec<f64> = terminal_wealth
        .iter()
        .zip(endowment)
        .map(|(x, h)| spec.utility.u1(x + h))
        .collect();
    let mut out = Vec::new();
    for h in perturbations {
        if h.d1 != d1 || h.n_steps() != n {
            return Err(Error::InvalidDimension(format!(
                "perturbation {} has shape {}x{}, expected {n}x{d1}",
                h.name,
                h.n_steps(),
                h.d1
            )));
        }
        let mut gain = vec![0.0; m];
        for k in 0..n {
            for i in 0..d1 {
                let hk = h.value(k, i);
                if hk == 0.0 {
                    continue;
                }
                let drift = theta[k * d + i] * dt;
                for (g, dw) in gain.iter_mut().zip(bundle.dw(k, i)) {
                    *g += hk * (dw + drift);
                }
            }
        }
        let prod: Vec<f64> = marginal.iter().zip(&gain).map(|(a, b)| a * b).collect();
        let (mean, se) = mean_and_se(&prod);
        out.push(
            CheckResult::statistical(format!("first_order.{}", h.name), mean, se, z)
                .with("n_paths", m)
                .with("n_steps", n),
        );
    }
    Ok(out)
}

/// Closed-form Merton strategy on every node and component, when one exists:
/// `theta / alpha` (amount), `theta / (1 - gamma)` or `theta` (proportion).
/// Requires `H = 0`.
pub fn merton_target(spec: &ProblemSpec, grid: &TimeGrid) -> Option<Vec<f64>> {
    if !spec.endowment.is_zero() {
        return None;
    }
    let scale = match spec.utility.family() {
        Family::Exponential { alpha } => 1.0 / alpha,
        Family::Power { gamma } => 1.0 / (1.0 - gamma),
        Family::Log => 1.0,
        _ => return None,
    };
    let d = spec.market.dim();
    let d1 = spec.market.d1();
    let mut out = Vec::with_capacity(grid.n_nodes() * d1);
    for k in 0..grid.n_nodes() {
        let th = spec.market.theta(grid.t(k)).ok()?;
        out.extend(th[..d1].iter().map(|v| v * scale));
        debug_assert_eq!(th.len(), d);
    }
    Some(out)
}

/// Closed-form `Y_0` for the Merton families with `H = 0`:
/// `int |theta^H|^2 dt / (2 alpha)` (exponential) and
/// `-gamma / (2 (gamma - 1)) int |theta^H|^2 dt` (power, log).
pub fn merton_y0(spec: &ProblemSpec) -> Option<f64> {
    if !spec.endowment.is_zero() {
        return None;
    }
    let d1 = spec.market.d1();
    let horizon = spec.market.horizon();
    // Simpson's rule on a fine grid.
    let n = 2_000;
    let h = horizon / n as f64;
    let mut integral = 0.0;
    for j in 0..=n {
        let th = spec.market.theta(j as f64 * h).ok()?;
        let v: f64 = th[..d1].iter().map(|x| x * x).sum();
        let w = if j == 0 || j == n {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += w * v;
    }
    integral *= h / 3.0;
    match spec.utility.family() {
        Family::Exponential { alpha } => Some(integral / (2.0 * alpha)),
        Family::Power { gamma } => Some(-gamma / (2.0 * (gamma - 1.0)) * integral),
        Family::Log => Some(0.0),
        _ => None,
    }
}

/// Largest relative deviation of `pi*` from the Merton strategy over nodes
/// and paths, per component.
pub fn merton_benchmark(spec: &ProblemSpec, sol: &FbsdeSolution, rel_tol: f64) -> Result<Vec<CheckResult>> {
    if !spec.endowment.is_zero() {
        return Err(Error::NotApplicable("Merton benchmark requires H = 0".into()));
    }
    let grid = sol.bundle.grid();
    let target = merton_target(spec, grid).ok_or_else(|| {
        Error::NotApplicable(format!(
            "no closed-form strategy for the {:?} family",
            spec.utility.family()
        ))
    })?;
    let d1 = spec.market.d1();
    let convention = match spec.convention() {
        Convention::Amount => "amount",
        Convention::Proportion => "proportion",
    };
    let mut out = Vec::new();
    for (i, pi) in sol.pi_star.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..grid.n_nodes() {
            let t = target[k * d1 + i];
            for v in pi.node(k) {
                let dev = if t == 0.0 {
                    v.abs()
                } else {
                    (v - t).abs() / t.abs()
                };
                worst = worst.max(dev);
            }
        }
        out.push(
            CheckResult::deterministic(format!("merton.component{i}"), worst, rel_tol)
                .with("target_t0", target[i])
                .with("convention", convention)
                .with("scale", "relative"),
        );
    }
    Ok(out)
}

/// Monte Carlo estimate of `E[U(X_N + H)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub se: f64,
    /// Paths whose terminal position left the utility domain.
    pub violations: usize,
    /// `U(X_N + H)` per path, `NaN` on violating paths.
    pub terminal_utility: Vec<f64>,
}

/// Builds wealth from `pi` under the problem's convention and estimates the
/// expected terminal utility. More than 0.1% of paths outside the domain is
/// an error.
pub fn utility_estimate(
    spec: &ProblemSpec,
    pi: &[StatePaths],
    bundle: &PathBundle,
) -> Result<UtilityEstimate> {
    let x = match spec.convention() {
        Convention::Amount => wealth_amount(bundle, &spec.market, pi, spec.x0)?,
        Convention::Proportion => wealth_proportion(bundle, &spec.market, pi, spec.x0)?,
    };
    let h = spec.endowment.evaluate(bundle)?;
    let u = &spec.utility;
    let mut violations = 0;
    let mut worst = f64::NAN;
    let terminal_utility: Vec<f64> = x
        .terminal()
        .iter()
        .zip(&h)
        .map(|(x, h)| {
            let v = x + h;
            let value = if u.in_domain(v) { u.u0(v) } else { f64::NAN };
            if !value.is_finite() {
                violations += 1;
                worst = v;
                return f64::NAN;
            }
            value
        })
        .collect();
    let m = bundle.n_paths();
    if violations as f64 > MAX_VIOLATION_SHARE * m as f64 {
        return Err(Error::Domain {
            what: "terminal position in utility_estimate",
            x: worst,
        });
    }
    let finite: Vec<f64> = terminal_utility
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let (mean, se) = mean_and_se(&finite);
    Ok(UtilityEstimate {
        mean,
        se,
        violations,
        terminal_utility,
    })
}
