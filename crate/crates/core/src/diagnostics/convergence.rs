//! Refinement studies over `(N, M)` ladders with common random numbers.

use serde::{Deserialize, Serialize};

use super::optimality::merton_target;
use crate::error::{Error, Result};
use crate::fbsde::{
    solve_complete_halfline_on, solve_complete_realline_on, solve_incomplete_picard_on, solve_on,
    solve_power_endowment_on, FbsdeSolution, NumericsConfig, ProblemSpec, Status,
};
use crate::paths::{sample_brownian, PathBundle};
use crate::utility::Family;

/// Errors at or below this level count as exact.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverId {
    /// Dispatch on domain and completeness; power utility with an endowment
    /// goes through the power-endowment entry point.
    #[default]
    Auto,
    CompleteRealLine,
    CompleteHalfLine,
    IncompletePicard,
    PowerEndowment,
}

impl SolverId {
    pub fn run(
        self,
        bundle: &PathBundle,
        spec: &ProblemSpec,
        numerics: &NumericsConfig,
    ) -> Result<FbsdeSolution> {
        match self {
            Self::Auto => match spec.utility.family() {
                Family::Power { gamma } if *gamma > 0.0 && *gamma < 1.0 && !spec.endowment.is_zero() => {
                    solve_power_endowment_on(bundle, spec, numerics)
                }
                _ => solve_on(bundle, spec, numerics),
            },
            Self::CompleteRealLine => solve_complete_realline_on(bundle, spec, numerics),
            Self::CompleteHalfLine => solve_complete_halfline_on(bundle, spec, numerics),
            Self::IncompletePicard => solve_incomplete_picard_on(bundle, spec, numerics),
            Self::PowerEndowment => solve_power_endowment_on(bundle, spec, numerics),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_steps: usize,
    pub n_paths: usize,
    pub y0: f64,
    /// Standard error of the root regression.
    pub se: f64,
    /// `|Y_0 - reference|`; `None` for the finest level when it is the reference.
    pub error: Option<f64>,
    /// Largest relative deviation of `pi*` from the closed form, if one exists.
    pub pi_error: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `"target"` or `"finest"`.
    pub reference: String,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: Option<f64>,
    /// Every error is at or below [`EXACT_TOL`].
    pub exact: bool,
}

impl ConvergenceTable {
    /// Order at least `min_order`, or exact at every level.
    pub fn passes(&self, min_order: f64) -> bool {
        self.exact || self.order.is_some_and(|o| o >= min_order)
    }
}

/// Least-squares slope of `ln e` on `ln dt` over points with `e > 0`.
pub fn fit_order(dts: &[f64], errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .zip(errors)
        .filter(|(d, e)| **d > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(d, e)| (d.ln(), e.ln()))
        .collect();
    if pts.len() < 2 || pts.iter().all(|p| p.0 == pts[0].0) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `solver` on every `(N, M)` of the ladder. All levels share the paths
/// of the finest grid: coarser grids sum its increments and smaller samples
/// take its leading paths. Errors are measured against `target` when given,
/// otherwise against the finest level.
pub fn convergence_study(
    spec: &ProblemSpec,
    solver: SolverId,
    ladder: &[(usize, usize)],
    base: &NumericsConfig,
    target: Option<f64>,
) -> Result<ConvergenceTable> {
    if ladder.is_empty() {
        return Err(Error::InvalidArgument("empty convergence ladder".into()));
    }
    let n_max = ladder.iter().map(|l| l.0).max().unwrap_or(1);
    let m_max = ladder.iter().map(|l| l.1).max().unwrap_or(1);
    if let Some(&(n, _)) = ladder.iter().find(|l| l.0 == 0 || n_max % l.0 != 0) {
        return Err(Error::InvalidArgument(format!(
            "ladder step count {n} does not divide the finest {n_max}"
        )));
    }
    let fine_numerics = NumericsConfig {
        n_steps: n_max,
        n_paths: m_max,
        ..base.clone()
    };
    fine_numerics.validate()?;
    let fine = sample_brownian(
        fine_numerics.grid(spec.market.horizon())?,
        m_max,
        spec.market.dim(),
        base.seed,
    )?;

    let mut rows = Vec::with_capacity(ladder.len());
    for &(n, m) in ladder {
        let bundle = fine.coarsen(n_max / n)?;
        let bundle = if m == m_max { bundle } else { bundle.head(m)? };
        let numerics = NumericsConfig {
            n_steps: n,
            n_paths: m,
            ..base.clone()
        };
        let sol = solver.run(&bundle, spec, &numerics)?;
        let pi_error = merton_target(spec, bundle.grid()).map(|t| {
            let d1 = spec.market.d1();
            let mut worst: f64 = 0.0;
            for (i, pi) in sol.pi_star.iter().enumerate() {
                for k in 0..bundle.grid().n_nodes() {
                    let tk = t[k * d1 + i];
                    for v in pi.node(k) {
                        worst = worst.max(if tk == 0.0 {
                            v.abs()
                        } else {
                            (v - tk).abs() / tk.abs()
                        });
                    }
                }
            }
            worst
        });
        rows.push(ConvergenceRow {
            n_steps: n,
            n_paths: m,
            y0: sol.y0(),
            se: sol.regression.y_se.first().copied().unwrap_or(0.0),
            error: None,
            pi_error,
            status: sol.status,
        });
    }

    let (reference, value) = match target {
        Some(t) => ("target", t),
        None => {
            let finest = rows
                .iter()
                .max_by_key(|r| (r.n_steps, r.n_paths))
                .map(|r| r.y0)
                .unwrap_or(f64::NAN);
            ("finest", finest)
        }
    };
    for r in rows.iter_mut() {
        let is_reference = target.is_none() && r.n_steps == n_max && r.n_paths == m_max;
        if !is_reference {
            r.error = Some((r.y0 - value).abs());
        }
    }
    let (dts, errors): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.error.map(|e| (spec.market.horizon() / r.n_steps as f64, e)))
        .unzip();
    let exact = !errors.is_empty() && errors.iter().all(|e| *e <= EXACT_TOL);
    let order = if exact { None } else { fit_order(&dts, &errors) };
    Ok(ConvergenceTable {
        rows,
        reference: reference.into(),
        order,
        exact,
    })
}
