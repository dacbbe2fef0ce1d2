//! Picard iteration for incomplete markets: forward wealth from the current
//! `(Y, Z)`, then a backward solve with the terminal evaluated on that wealth.

use std::sync::Arc;

use super::{
    endowment_regressors, sample_for, solve_complete_halfline_on, solve_complete_realline_on, strategy_from,
    y_clamp, FbsdeSolution, IterationLog, Method, NumericsConfig, ProblemSpec, Status,
};
use crate::bsde::{
    driver_halfline, driver_incomplete_realline, solve_bsde_with_regressors, BsdeOptions,
    RegressionDiagnostics, StepMode,
};
use crate::error::{Error, Result};
use crate::paths::{forward_sweep, PathBundle, StatePaths};
use crate::utility::Domain;

const DIVERGENCE_FACTOR: f64 = 5.0;

pub fn solve_incomplete_picard(spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<FbsdeSolution> {
    let bundle = sample_for(spec, numerics)?;
    solve_incomplete_picard_on(&bundle, spec, numerics)
}

/// Complete markets are delegated to the fixed-point solvers.
pub fn solve_incomplete_picard_on(
    bundle: &PathBundle,
    spec: &ProblemSpec,
    numerics: &NumericsConfig,
) -> Result<FbsdeSolution> {
    if spec.market.is_complete() {
        return match spec.utility.domain() {
            Domain::RealLine => solve_complete_realline_on(bundle, spec, numerics),
            Domain::HalfLine => solve_complete_halfline_on(bundle, spec, numerics),
        };
    }
    numerics.validate()?;
    let market = &spec.market;
    if bundle.dim() != market.dim() {
        return Err(Error::InvalidDimension(format!(
            "bundle dimension {} differs from market dimension {}",
            bundle.dim(),
            market.dim()
        )));
    }
    let u = Arc::new(spec.utility.clone());
    let domain = u.domain();
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let m_paths = bundle.n_paths();
    let dt = grid.dt();
    let d = market.dim();
    let d1 = market.d1();
    let theta = market.theta_on_grid(n);
    let h = spec.endowment.evaluate(bundle)?;
    if domain == Domain::HalfLine {
        if let Some(p) = h.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "endowment is negative on path {p}"
            )));
        }
    }
    let extra = endowment_regressors(bundle, &spec.endowment);
    let extra: Vec<&StatePaths> = extra.iter().collect();
    let driver = match domain {
        Domain::RealLine => driver_incomplete_realline(&spec.utility, market)?,
        // Half-line wealth is regressed in log coordinates.
        Domain::HalfLine => {
            driver_halfline(&spec.utility, market)?.with_state_map("X", |s: &[f64], _| s[0].exp())
        }
    };
    let theta2 = market.theta_bound().powi(2);
    let horizon = grid.horizon();

    let mut y = StatePaths::zeros(n + 1, m_paths);
    let mut z: Vec<StatePaths> = (0..d).map(|_| StatePaths::zeros(n + 1, m_paths)).collect();
    let mut x = StatePaths::constant(n + 1, m_paths, spec.x0);
    let mut diagnostics = RegressionDiagnostics::default();
    let mut residuals: Vec<f64> = Vec::new();
    let mut status = Status::MaxIterations;
    let lambda = numerics.damping;
    let mut y_in = y.clone();
    let mut z_in = z.clone();

    for _ in 0..numerics.picard_max_iter {
        let (yc, zc) = (&y_in, &z_in);
        let xf = forward_sweep(bundle, spec.x0, |k, p, xk| {
            let th = &theta[k * d..(k + 1) * d];
            match domain {
                Domain::RealLine => {
                    let f = u.phi1_unchecked(xk + yc.get(k, p));
                    let mut dx = 0.0;
                    for i in 0..d1 {
                        let pi = -th[i] * f - zc[i].get(k, p);
                        dx += pi * (bundle.dw(k, i)[p] + th[i] * dt);
                    }
                    xk + dx
                }
                Domain::HalfLine => {
                    let r = -u.u1(xk) / (xk * u.u2(xk));
                    let mut e = 0.0;
                    for i in 0..d1 {
                        let pi = r * (zc[i].get(k, p) + th[i]);
                        e += pi * bundle.dw(k, i)[p] - 0.5 * pi * pi * dt + pi * th[i] * dt;
                    }
                    xk * e.exp()
                }
            }
        })?;

        let (terminal, k_bound) = match domain {
            Domain::RealLine => {
                let h_max = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let k = h_max + horizon * theta2 * (0.5 * u.phi2_bound() + u.phi1_bound());
                (h.clone(), k)
            }
            Domain::HalfLine => {
                let mut t = Vec::with_capacity(m_paths);
                for (&xn, &hp) in xf.terminal().iter().zip(&h) {
                    if !(xn > numerics.eps_dom) {
                        return Err(Error::Domain {
                            what: "terminal wealth in the Picard forward pass",
                            x: xn,
                        });
                    }
                    t.push((u.u1(xn + hp) / u.u1(xn)).ln());
                }
                let yn_max = t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                (t, yn_max + horizon * theta2 * u.phi2_bound())
            }
        };
        let options = BsdeOptions {
            mode: StepMode::ImplicitNewton,
            y_max: y_clamp(numerics, k_bound),
        };
        let log_x;
        let state = match domain {
            Domain::RealLine => &xf,
            Domain::HalfLine => {
                log_x = xf.map(f64::ln);
                &log_x
            }
        };
        let b = solve_bsde_with_regressors(
            bundle,
            &[state],
            &extra,
            &terminal,
            &driver,
            &numerics.basis,
            &options,
        )?;
        let r = rms_diff(b.y.values(), y.values());
        blend(&mut y_in, &b.y, lambda);
        for (zi, zn) in z_in.iter_mut().zip(&b.z) {
            blend(zi, zn, lambda);
        }
        residuals.push(r);
        y = b.y;
        z = b.z;
        x = xf;
        diagnostics = b.diagnostics;
        if r <= numerics.picard_tolerance {
            status = Status::Converged;
            break;
        }
        let min = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
        if r > DIVERGENCE_FACTOR * min {
            return Err(Error::Diverged { residuals });
        }
    }

    let pi_star = strategy_from(bundle, &x, &y, &z, spec, numerics.eps_dom)?;
    Ok(FbsdeSolution {
        method: Method::IncompletePicard,
        bundle: bundle.clone(),
        x,
        y,
        z,
        pi_star,
        endowment: h,
        m_star: None,
        status,
        log: IterationLog {
            picard_residuals: residuals,
            ..IterationLog::default()
        },
        regression: diagnostics,
        p: None,
        log_g: None,
        clipped: 0,
        experimental: true,
    })
}

/// `old <- (1 - lambda) old + lambda new`.
fn blend(old: &mut StatePaths, new: &StatePaths, lambda: f64) {
    for (o, n) in old.values_mut().iter_mut().zip(new.values()) {
        *o = (1.0 - lambda) * *o + lambda * n;
    }
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}
