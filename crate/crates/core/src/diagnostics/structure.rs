//! Structural identities of half-line solutions: the Cole-Hopf adjoint
//! system and the dual representation.

use super::{bonferroni_z, mean_and_se, thinned_nodes, CheckResult};
use crate::bsde::RegressionBasis;
use crate::error::{Error, Result};
use crate::fbsde::{FbsdeSolution, ProblemSpec};
use crate::paths::StatePaths;
use crate::utility::Domain;

/// Absolute allowance for identities that hold exactly up to rounding.
const ROUNDING: f64 = 1e-12;

fn require_halfline(spec: &ProblemSpec, what: &str) -> Result<()> {
    if spec.utility.domain() != Domain::HalfLine {
        return Err(Error::NotApplicable(format!(
            "{what} requires a half-line solution"
        )));
    }
    Ok(())
}

/// Adjoint residual `r_k = dp_k - k_k dW_k - phi2(X_k)(k_k / p_k + theta)^2 p_k dt`
/// with `p = exp(Y)`, `k = Z p`, as `(node, path)` values over steps `0..N`.
fn adjoint_residual(sol: &FbsdeSolution, spec: &ProblemSpec) -> (StatePaths, StatePaths) {
    let bundle = &sol.bundle;
    let grid = bundle.grid();
    let n = grid.n_steps();
    let m = bundle.n_paths();
    let dt = grid.dt();
    let theta = spec.market.theta_on_grid(n);
    let u = &spec.utility;
    let p = sol.y.map(f64::exp);
    let residual = StatePaths::from_fn(n, m, |k, j| {
        let pk = p.get(k, j);
        let kk = sol.z[0].get(k, j) * pk;
        let a = kk / pk + theta[k];
        let drift = u.phi2_halfline_unchecked(sol.x.get(k, j)) * a * a * pk;
        p.get(k + 1, j) - pk - kk * bundle.dw(k, 0)[j] - drift * dt
    });
    (p, residual)
}

/// RMS of the adjoint residual over all steps and paths.
pub fn cole_hopf_residual_rms(sol: &FbsdeSolution, spec: &ProblemSpec) -> Result<f64> {
    cole_hopf_preconditions(sol, spec)?;
    let (_, r) = adjoint_residual(sol, spec);
    let s: f64 = r.values().iter().map(|v| v * v).sum();
    Ok((s / r.values().len() as f64).sqrt())
}

fn cole_hopf_preconditions(sol: &FbsdeSolution, spec: &ProblemSpec) -> Result<()> {
    require_halfline(spec, "Cole-Hopf check")?;
    if spec.market.dim() != 1 || sol.z.len() != 1 {
        return Err(Error::NotApplicable("Cole-Hopf check requires d = 1".into()));
    }
    if !spec.endowment.is_zero() {
        return Err(Error::NotApplicable("Cole-Hopf check requires H = 0".into()));
    }
    Ok(())
}

/// `p = exp(Y)`, `k = Z p` against the adjoint system: terminal value 1,
/// adjoint residual (RMS and per-node mean) and the Hamiltonian maximizer.
pub fn cole_hopf_check(sol: &FbsdeSolution, spec: &ProblemSpec, z: f64) -> Result<Vec<CheckResult>> {
    cole_hopf_preconditions(sol, spec)?;
    let bundle = &sol.bundle;
    let grid = bundle.grid();
    let n = grid.n_steps();
    let m = bundle.n_paths();
    let dt = grid.dt();
    let theta = spec.market.theta_on_grid(n);
    let u = &spec.utility;
    let (p, r) = adjoint_residual(sol, spec);
    let mut out = Vec::new();

    let terminal = p.terminal().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    out.push(CheckResult::deterministic("cole_hopf.terminal", terminal, 0.0));

    let s: f64 = r.values().iter().map(|v| v * v).sum();
    let rms = (s / r.values().len() as f64).sqrt();
    out.push(
        CheckResult::deterministic("cole_hopf.residual_rms", rms, dt.sqrt())
            .with("constant", 1.0)
            .with("n_steps", n),
    );

    // The exponential of an Euler step differs from its linearization by
    // O(dt^2) in the mean; that bias is allowed on top of the noise.
    let zb = bonferroni_z(z, n);
    for k in 0..n {
        let (mean, se) = mean_and_se(r.node(k));
        let scale: f64 = (0..m)
            .map(|j| {
                let pk = p.get(k, j);
                let a = sol.z[0].get(k, j) + theta[k];
                let g = u.phi2_halfline_unchecked(sol.x.get(k, j)) * a * a;
                pk * (1.0 + g * g)
            })
            .sum::<f64>()
            / m as f64;
        let allowance = dt * dt * scale;
        out.push(
            CheckResult::statistical_with_allowance(
                format!("cole_hopf.residual_mean.k{k}"),
                mean,
                se,
                zb,
                allowance,
            )
            .with("node", k)
            .with("family_size", n),
        );
    }

    let mut worst: f64 = 0.0;
    for k in 0..grid.n_nodes() {
        for j in 0..m {
            let x = sol.x.get(k, j);
            let pk = p.get(k, j);
            let kk = sol.z[0].get(k, j) * pk;
            let maximizer = -u.u1(x) / u.u2(x) * (kk / pk + theta[k]);
            let amount = sol.pi_star[0].get(k, j) * x;
            let scale = maximizer.abs().max(amount.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((maximizer - amount).abs() / scale);
        }
    }
    out.push(CheckResult::deterministic("cole_hopf.hamiltonian", worst, 1e-10).with("scale", "relative"));
    Ok(out)
}

/// `D = U'(X) e^Y` normalized to `Y* = D / D_0`: `Y*_0 = 1`,
/// `E[X_N Y*_N] = x0`, the representation of `log D` and the orthogonal energy.
pub fn dual_consistency_check(
    sol: &FbsdeSolution,
    spec: &ProblemSpec,
    _basis: &RegressionBasis,
    z: f64,
) -> Result<Vec<CheckResult>> {
    require_halfline(spec, "dual consistency check")?;
    let bundle = &sol.bundle;
    let grid = bundle.grid();
    let n = grid.n_steps();
    let m = bundle.n_paths();
    let dt = grid.dt();
    let d = spec.market.dim();
    let d1 = spec.market.d1();
    let theta = spec.market.theta_on_grid(n);
    let u = &spec.utility;
    let log_d = StatePaths::from_fn(grid.n_nodes(), m, |k, j| {
        u.u1(sol.x.get(k, j)).ln() + sol.y.get(k, j)
    });
    let log_d0 = log_d.get(0, 0);
    let mut out = Vec::new();

    let start = log_d
        .node(0)
        .iter()
        .map(|v| ((v - log_d0).exp() - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(CheckResult::deterministic("dual.initial", start, 0.0));

    let prod: Vec<f64> = sol
        .x
        .terminal()
        .iter()
        .zip(log_d.terminal())
        .map(|(x, l)| x * (l - log_d0).exp() - spec.x0)
        .collect();
    let (mean, se) = mean_and_se(&prod);
    out.push(
        CheckResult::statistical_with_allowance("dual.budget", mean, se, z, ROUNDING * spec.x0)
            .with("x0", spec.x0)
            .with("n_paths", m),
    );

    let nodes = thinned_nodes(n);
    let zb = bonferroni_z(z, nodes.len());
    for &k in &nodes {
        let th = &theta[k * d..(k + 1) * d];
        let th_h2: f64 = th[..d1].iter().map(|v| v * v).sum();
        // The regression pins the sample mean of its residual to zero, so the
        // spread of `r` alone understates the noise of its mean. The SE bounds
        // `r` split into `r + dM` and the stochastic integral `dM = Z . dW`.
        let dm: Vec<f64> = (0..m)
            .map(|j| (0..d).map(|i| sol.z[i].get(k, j) * bundle.dw(k, i)[j]).sum())
            .collect();
        let resid: Vec<f64> = (0..m)
            .map(|j| {
                let mut r = log_d.get(k + 1, j) - log_d.get(k, j) + 0.5 * th_h2 * dt;
                for (i, t) in th[..d1].iter().enumerate() {
                    r += t * bundle.dw(k, i)[j];
                }
                for i in d1..d {
                    let zo = sol.z[i].get(k, j);
                    r += 0.5 * zo * zo * dt - zo * bundle.dw(k, i)[j];
                }
                r
            })
            .collect();
        let (mean, _) = mean_and_se(&resid);
        let shifted: Vec<f64> = resid.iter().zip(&dm).map(|(r, q)| r + q).collect();
        let se = mean_and_se(&shifted).1 + mean_and_se(&dm).1;
        out.push(
            CheckResult::statistical_with_allowance(
                format!("dual.representation.k{k}"),
                mean,
                se,
                zb,
                ROUNDING,
            )
            .with("node", k)
            .with("family_size", nodes.len()),
        );
    }

    let energy = sol.orthogonal_energy(d1);
    out.push(
        CheckResult::deterministic("dual.orthogonal_energy", energy, 1e12)
            .with("note", "reported estimate; only finiteness is asserted"),
    );
    Ok(out)
}
