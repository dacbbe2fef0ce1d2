//! Backward solver by least-squares Monte Carlo.
//!
//! The equation is `Y_t = xi - int_t^T Z dW - int_t^T f(s, state, Y, Z) ds`,
//! discretized backwards as
//! `Z_k = E_k[(Y_{k+1} - E_k Y_{k+1}) dW_k] / dt` and
//! `Y_k = E_k[Y_{k+1}] - f(t_k, state_k, Y_k, Z_k) dt`, with the conditional
//! expectations replaced by per-node regressions on the state.

mod drivers;
mod regression;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use drivers::{driver_halfline, driver_hara, driver_incomplete_realline, driver_lipschitz_realline};
pub use regression::{BasisFamily, NodeRegression, RegressionBasis, MAX_CONDITION};

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::paths::{PathBundle, StatePaths};

const NEWTON_MAX_ITER: usize = 20;
const NEWTON_TOL: f64 = 1e-12;
const MAX_STATE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZDependence {
    Linear,
    Quadratic,
}

/// Arguments handed to a driver at one node and path. `theta` is the full
/// `d`-vector at `t`; `state` lists the caller's state coordinates at the node.
pub struct DriverArgs<'a> {
    pub t: f64,
    pub theta: &'a [f64],
    pub state: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
}

type DriverFn = Arc<dyn Fn(&DriverArgs) -> f64 + Send + Sync>;

/// Driver `f(t, state, y, z)` with its growth tag and the state it reads.
#[derive(Clone)]
pub struct Driver {
    name: String,
    z_dependence: ZDependence,
    reads: String,
    market: Option<Arc<MarketModel>>,
    eval: DriverFn,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("z_dependence", &self.z_dependence)
            .field("reads", &self.reads)
            .finish_non_exhaustive()
    }
}

impl Driver {
    /// `market` supplies `theta(t)` to the driver; without it `theta` is empty.
    pub fn new(
        name: impl Into<String>,
        z_dependence: ZDependence,
        reads: impl Into<String>,
        market: Option<&MarketModel>,
        eval: impl Fn(&DriverArgs) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            z_dependence,
            reads: reads.into(),
            market: market.map(|m| Arc::new(m.clone())),
            eval: Arc::new(eval),
        }
    }

    /// Same driver with state coordinate 0 replaced by `map(state, y)` before
    /// evaluation. Used when the driver's state is itself a function of `y`.
    pub fn with_state_map(
        &self,
        reads: impl Into<String>,
        map: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let inner = self.eval.clone();
        Self {
            name: self.name.clone(),
            z_dependence: self.z_dependence,
            reads: reads.into(),
            market: self.market.clone(),
            eval: Arc::new(move |a: &DriverArgs| {
                let mut s = [0.0; MAX_STATE];
                let n = a.state.len().min(MAX_STATE);
                s[..n].copy_from_slice(&a.state[..n]);
                s[0] = map(a.state, a.y);
                inner(&DriverArgs {
                    t: a.t,
                    theta: a.theta,
                    state: &s[..n.max(1)],
                    y: a.y,
                    z: a.z,
                })
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn z_dependence(&self) -> ZDependence {
        self.z_dependence
    }

    /// Which state the driver reads (descriptor, e.g. `"P"`, `"X"`, `"X+Y"`).
    pub fn reads(&self) -> &str {
        &self.reads
    }

    pub fn eval(&self, args: &DriverArgs) -> f64 {
        (self.eval)(args)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    Explicit,
    ImplicitNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeOptions {
    pub mode: StepMode,
    /// Regressed `Y` is clamped to `[-y_max, y_max]` when set.
    pub y_max: Option<f64>,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        Self {
            mode: StepMode::ImplicitNewton,
            y_max: None,
        }
    }
}

/// Per-node regression diagnostics (index `k` refers to the regression at
/// node `k`; entry `N` is zero).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionDiagnostics {
    pub condition: Vec<f64>,
    pub n_features: Vec<usize>,
    /// RMS residual of the continuation regression.
    pub residual_rms: Vec<f64>,
    /// Standard error of the fitted continuation, `rms * sqrt(p / M)`.
    pub y_se: Vec<f64>,
    /// Largest standard error of the fitted `Z` components.
    pub z_se: Vec<f64>,
    pub clamped: usize,
}

/// Solution of a backward equation on the grid.
#[derive(Debug, Clone)]
pub struct BsdePaths {
    pub y: StatePaths,
    pub z: Vec<StatePaths>,
    pub diagnostics: RegressionDiagnostics,
}

impl BsdePaths {
    /// `Y_0` (node 0 is deterministic, all paths agree).
    pub fn y0(&self) -> f64 {
        self.y.get(0, 0)
    }
}

enum PathFailure {
    Domain(f64),
    Newton,
}

/// Backward induction on the bundle's grid.
///
/// `state` lists the processes available to the driver (in order) and to the
/// regression basis (through its projection). `terminal` gives `Y_N` per path.
pub fn solve_bsde(
    bundle: &PathBundle,
    state: &[&StatePaths],
    terminal: &[f64],
    driver: &Driver,
    basis: &RegressionBasis,
    options: &BsdeOptions,
) -> Result<BsdePaths> {
    solve_bsde_with_regressors(bundle, state, &[], terminal, driver, basis, options)
}

/// Variant with extra regression-only coordinates appended after `state`.
pub fn solve_bsde_with_regressors(
    bundle: &PathBundle,
    state: &[&StatePaths],
    extra_regressors: &[&StatePaths],
    terminal: &[f64],
    driver: &Driver,
    basis: &RegressionBasis,
    options: &BsdeOptions,
) -> Result<BsdePaths> {
    basis.validate()?;
    if driver.z_dependence() == ZDependence::Quadratic && options.mode == StepMode::Explicit {
        return Err(Error::QuadraticDriverNeedsImplicit);
    }
    if state.len() > MAX_STATE {
        return Err(Error::InvalidDimension(format!(
            "at most {MAX_STATE} state coordinates are supported"
        )));
    }
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let m = bundle.n_paths();
    let d = bundle.dim();
    let dt = grid.dt();
    if terminal.len() != m {
        return Err(Error::InvalidDimension(format!(
            "terminal has {} values for {m} paths",
            terminal.len()
        )));
    }
    if let Some(p) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "terminal value on path {p} is not finite"
        )));
    }
    let all: Vec<&StatePaths> = state.iter().chain(extra_regressors).copied().collect();
    if all.iter().any(|s| s.n_nodes() != n + 1 || s.n_paths() != m) {
        return Err(Error::InvalidDimension(
            "state processes are not aligned with the bundle".into(),
        ));
    }
    let coords = basis.coords(all.len())?;

    let theta: Vec<f64> = match &driver.market {
        Some(mk) => {
            if mk.dim() != d {
                return Err(Error::InvalidDimension(format!(
                    "driver market has dimension {}, bundle {d}",
                    mk.dim()
                )));
            }
            mk.theta_on_grid(n)
        }
        None => Vec::new(),
    };
    let theta_dim = if theta.is_empty() { 0 } else { d };

    let mut y = StatePaths::zeros(n + 1, m);
    y.node_mut(n).copy_from_slice(terminal);
    let mut z: Vec<StatePaths> = (0..d).map(|_| StatePaths::zeros(n + 1, m)).collect();
    let mut diag = RegressionDiagnostics {
        condition: vec![0.0; n + 1],
        n_features: vec![0; n + 1],
        residual_rms: vec![0.0; n + 1],
        y_se: vec![0.0; n + 1],
        z_se: vec![0.0; n + 1],
        clamped: 0,
    };

    for k in (0..n).rev() {
        let cols: Vec<&[f64]> = coords.iter().map(|&c| all[c].node(k)).collect();
        let reg = NodeRegression::new(k, m, &cols, basis)?;
        let next = y.node(k + 1).to_vec();
        let cont = reg.fit(&next);
        let scale = (reg.n_features() as f64 / m as f64).sqrt();
        let rms = rms_diff(&next, &cont);
        diag.condition[k] = reg.condition();
        diag.n_features[k] = reg.n_features();
        diag.residual_rms[k] = rms;
        diag.y_se[k] = rms * scale;

        let mut z_se: f64 = 0.0;
        for c in 0..d {
            let dw = bundle.dw(k, c);
            let target: Vec<f64> = (0..m).map(|p| (next[p] - cont[p]) * dw[p] / dt).collect();
            let fitted = reg.fit(&target);
            z_se = z_se.max(rms_diff(&target, &fitted) * scale);
            z[c].node_mut(k).copy_from_slice(&fitted);
        }
        diag.z_se[k] = z_se;

        let t = grid.t(k);
        let th = &theta[k * theta_dim..(k + 1) * theta_dim];
        let zk: Vec<&[f64]> = z.iter().map(|c| c.node(k)).collect();
        let states: Vec<&[f64]> = state.iter().map(|s| s.node(k)).collect();
        let results: Vec<std::result::Result<f64, PathFailure>> = (0..m)
            .into_par_iter()
            .map(|p| {
                let mut zbuf = [0.0; MAX_STATE];
                let mut zv = Vec::new();
                let zp: &mut [f64] = if d <= MAX_STATE {
                    &mut zbuf[..d]
                } else {
                    zv.resize(d, 0.0);
                    &mut zv
                };
                for (c, zc) in zk.iter().enumerate() {
                    zp[c] = zc[p];
                }
                let mut sbuf = [0.0; MAX_STATE];
                for (j, s) in states.iter().enumerate() {
                    sbuf[j] = s[p];
                }
                let f = |yv: f64| {
                    driver.eval(&DriverArgs {
                        t,
                        theta: th,
                        state: &sbuf[..states.len()],
                        y: yv,
                        z: zp,
                    })
                };
                step(f, cont[p], dt, options.mode)
            })
            .collect();
        let mut values = Vec::with_capacity(m);
        for (p, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => values.push(v),
                Err(PathFailure::Domain(x)) => {
                    return Err(Error::Domain {
                        what: "driver evaluation",
                        x: if x.is_nan() {
                            state.first().map_or(x, |s| s.get(k, p))
                        } else {
                            x
                        },
                    })
                }
                Err(PathFailure::Newton) => return Err(Error::ImplicitStep { node: k, path: p }),
            }
        }
        if let Some(ymax) = options.y_max {
            for v in values.iter_mut() {
                if v.abs() > ymax {
                    *v = v.clamp(-ymax, ymax);
                    diag.clamped += 1;
                }
            }
        }
        y.node_mut(k).copy_from_slice(&values);
    }
    for zc in z.iter_mut() {
        let last = zc.node(n - 1).to_vec();
        zc.node_mut(n).copy_from_slice(&last);
    }
    Ok(BsdePaths {
        y,
        z,
        diagnostics: diag,
    })
}

fn step(f: impl Fn(f64) -> f64, cont: f64, dt: f64, mode: StepMode) -> std::result::Result<f64, PathFailure> {
    match mode {
        StepMode::Explicit => {
            let v = f(cont);
            if !v.is_finite() {
                return Err(PathFailure::Domain(f64::NAN));
            }
            Ok(cont - v * dt)
        }
        StepMode::ImplicitNewton => {
            let mut yv = cont;
            for _ in 0..NEWTON_MAX_ITER {
                let fv = f(yv);
                if !fv.is_finite() {
                    return Err(PathFailure::Domain(f64::NAN));
                }
                let g = yv - cont + fv * dt;
                let h = 1e-7 * yv.abs().max(1.0);
                let (fp, fm) = (f(yv + h), f(yv - h));
                let slope = if fp.is_finite() && fm.is_finite() {
                    (fp - fm) / (2.0 * h)
                } else {
                    0.0
                };
                let mut denom = 1.0 + slope * dt;
                if !(denom.abs() > 1e-3) {
                    denom = 1.0;
                }
                let delta = g / denom;
                yv -= delta;
                if delta.abs() <= NEWTON_TOL * yv.abs().max(1.0) {
                    return Ok(yv);
                }
            }
            Err(PathFailure::Newton)
        }
    }
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}
