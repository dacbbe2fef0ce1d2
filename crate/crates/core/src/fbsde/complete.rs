//! Fixed-point constructions for complete markets.

use std::sync::Arc;

use super::{
    endowment_regressors, fixed_point, sample_for, strategy_from, y_clamp, FbsdeSolution, IterationLog,
    Method, NumericsConfig, ProblemSpec,
};
use crate::bsde::{
    driver_halfline, driver_lipschitz_realline, solve_bsde_with_regressors, BsdeOptions, BsdePaths,
};
use crate::error::{Error, Result};
use crate::paths::{euler_sde, stochastic_exponential, PathBundle, StatePaths};
use crate::utility::Domain;

fn require_complete(spec: &ProblemSpec, domain: Domain, bundle: &PathBundle) -> Result<()> {
    if spec.utility.domain() != domain {
        return Err(Error::WrongDomain {
            expected: match domain {
                Domain::RealLine => "real-line",
                Domain::HalfLine => "half-line",
            },
        });
    }
    if !spec.market.is_complete() {
        return Err(Error::InvalidArgument(
            "complete-market solver called with d2 > 0".into(),
        ));
    }
    if bundle.dim() != spec.market.dim() {
        return Err(Error::InvalidDimension(format!(
            "bundle dimension {} differs from market dimension {}",
            bundle.dim(),
            spec.market.dim()
        )));
    }
    Ok(())
}

fn refs(v: &[StatePaths]) -> Vec<&StatePaths> {
    v.iter().collect()
}

/// Real-line complete market.
pub fn solve_complete_realline(spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<FbsdeSolution> {
    let bundle = sample_for(spec, numerics)?;
    solve_complete_realline_on(&bundle, spec, numerics)
}

pub fn solve_complete_realline_on(
    bundle: &PathBundle,
    spec: &ProblemSpec,
    numerics: &NumericsConfig,
) -> Result<FbsdeSolution> {
    numerics.validate()?;
    require_complete(spec, Domain::RealLine, bundle)?;
    let market = &spec.market;
    let u = Arc::new(spec.utility.clone());
    let grid = *bundle.grid();
    let d = market.dim();
    let dt = grid.dt();
    let theta = Arc::new(market.theta_on_grid(grid.n_steps()));
    let h = spec.endowment.evaluate(bundle)?;
    let extra = endowment_regressors(bundle, &spec.endowment);
    let extra = refs(&extra);
    let driver = driver_lipschitz_realline(&spec.utility, market)?;

    let theta2 = market.theta_bound().powi(2);
    let h_max = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let k_bound =
        h_max + grid.horizon() * theta2 * (0.5 * spec.utility.phi2_bound() + spec.utility.phi1_bound());
    let options = BsdeOptions {
        mode: numerics.step_mode,
        y_max: y_clamp(numerics, k_bound),
    };

    let node = move |t: f64| ((t / dt).round() as usize).min(grid.n_steps());
    let eval = |m: f64| -> Result<(f64, (StatePaths, BsdePaths))> {
        let (u1, u2, th1, th2) = (u.clone(), u.clone(), theta.clone(), theta.clone());
        let p = euler_sde(
            bundle,
            move |t, x| {
                let k = node(t);
                let t2: f64 = th1[k * d..(k + 1) * d].iter().map(|v| v * v).sum();
                -0.5 * t2 * u1.phi2_realline_unchecked(x)
            },
            move |t, x, sigma| {
                let k = node(t);
                let f = u2.phi1_unchecked(x);
                for (s, th) in sigma.iter_mut().zip(&th2[k * d..(k + 1) * d]) {
                    *s = -th * f;
                }
            },
            spec.x0 + m,
        )?;
        let b = solve_bsde_with_regressors(bundle, &[&p], &extra, &h, &driver, &numerics.basis, &options)?;
        Ok((b.y0(), (p, b)))
    };
    let fp = fixed_point(numerics, k_bound, eval)?;
    let (p, b) = fp.value;
    let mut x = p.clone();
    for (xv, yv) in x.values_mut().iter_mut().zip(b.y.values()) {
        *xv -= yv;
    }
    let pi_star = strategy_from(bundle, &x, &b.y, &b.z, spec, numerics.eps_dom)?;
    Ok(FbsdeSolution {
        method: Method::CompleteRealLine,
        bundle: bundle.clone(),
        x,
        y: b.y,
        z: b.z,
        pi_star,
        endowment: h,
        m_star: Some(fp.m),
        status: fp.status,
        log: fp.log,
        regression: b.diagnostics,
        p: Some(p),
        log_g: None,
        clipped: 0,
        experimental: false,
    })
}

/// Half-line complete market.
pub fn solve_complete_halfline(spec: &ProblemSpec, numerics: &NumericsConfig) -> Result<FbsdeSolution> {
    let bundle = sample_for(spec, numerics)?;
    solve_complete_halfline_on(&bundle, spec, numerics)
}

pub fn solve_complete_halfline_on(
    bundle: &PathBundle,
    spec: &ProblemSpec,
    numerics: &NumericsConfig,
) -> Result<FbsdeSolution> {
    numerics.validate()?;
    require_complete(spec, Domain::HalfLine, bundle)?;
    let market = &spec.market;
    let u = Arc::new(spec.utility.clone());
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let m_paths = bundle.n_paths();
    let eps = numerics.eps_dom;
    let h = spec.endowment.evaluate(bundle)?;
    if let Some(p) = h.iter().position(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "endowment is negative on path {p}"
        )));
    }
    let extra = endowment_regressors(bundle, &spec.endowment);
    let extra = refs(&extra);

    let market_for_theta = market.clone();
    let e = stochastic_exponential(
        bundle,
        move |t| {
            let mut v = vec![0.0; market_for_theta.dim()];
            market_for_theta.theta_into(t, &mut v);
            v.iter_mut().for_each(|x| *x = -*x);
            v
        },
        &vec![true; market.dim()],
    )?;
    let log_e = e.map(f64::ln);
    let log_u1_x0 = u.u1(spec.x0).ln();

    let ui = u.clone();
    let driver = driver_halfline(&spec.utility, market)?
        .with_state_map("I(G exp(-Y))", move |s: &[f64], y: f64| {
            ui.inverse_marginal((s[0] - y).exp()).max(eps)
        });

    let log_g_for = |m: f64| log_e.map(|v| log_u1_x0 + m + v);
    let terminal = |log_g: &StatePaths| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut xn = Vec::with_capacity(m_paths);
        let mut yn = Vec::with_capacity(m_paths);
        for (p, (&lg, &hp)) in log_g.terminal().iter().zip(&h).enumerate() {
            let x = u.inverse_marginal(lg.exp()) - hp;
            if !(x >= eps) {
                return Err(Error::Infeasible(format!(
                    "terminal wealth I(G_T) - H = {x:e} on path {p} is below {eps:e}; \
                     the initial wealth x0 = {} does not finance the endowment",
                    spec.x0
                )));
            }
            xn.push(x);
            yn.push((u.u1(x + hp) / u.u1(x)).ln());
        }
        Ok((xn, yn))
    };

    let (_, yn0) = terminal(&log_g_for(0.0))?;
    let theta2 = market.theta_bound().powi(2);
    let yn_max = yn0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let k_bound = yn_max + grid.horizon() * theta2 * spec.utility.phi2_bound();
    let options = BsdeOptions {
        mode: crate::bsde::StepMode::ImplicitNewton,
        y_max: y_clamp(numerics, k_bound),
    };

    // log G, terminal wealth and the BSDE solution for one level m.
    type Level = (StatePaths, Vec<f64>, BsdePaths);
    let eval = |m: f64| -> Result<(f64, Level)> {
        let lg = log_g_for(m);
        let (xn, yn) = terminal(&lg)?;
        let b = solve_bsde_with_regressors(bundle, &[&lg], &extra, &yn, &driver, &numerics.basis, &options)?;
        Ok((b.y0(), (lg, xn, b)))
    };
    let fp = fixed_point(numerics, k_bound, eval)?;
    let (lg, xn, b) = fp.value;
    let mut clipped = 0;
    let mut x = StatePaths::zeros(n + 1, m_paths);
    for k in 0..n {
        let row: Vec<f64> = lg
            .node(k)
            .iter()
            .zip(b.y.node(k))
            .map(|(g, y)| u.inverse_marginal((g - y).exp()))
            .collect();
        for (dst, v) in x.node_mut(k).iter_mut().zip(row) {
            if v >= eps {
                *dst = v;
            } else {
                *dst = eps;
                clipped += 1;
            }
        }
    }
    x.node_mut(n).copy_from_slice(&xn);
    let pi_star = strategy_from(bundle, &x, &b.y, &b.z, spec, 0.0)?;
    Ok(FbsdeSolution {
        method: Method::CompleteHalfLine,
        bundle: bundle.clone(),
        x,
        y: b.y,
        z: b.z,
        pi_star,
        endowment: h,
        m_star: Some(fp.m),
        status: fp.status,
        log: IterationLog { ..fp.log },
        regression: b.diagnostics,
        p: None,
        log_g: Some(lg),
        clipped,
        experimental: false,
    })
}
