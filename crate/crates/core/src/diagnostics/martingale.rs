//! Martingale and supermartingale tests on discrete processes.

use super::{bonferroni_z, mean_and_se, thinned_nodes, CheckResult, DEFAULT_Z};
use crate::bsde::{BasisFamily, RegressionBasis};
use crate::error::{Error, Result};
use crate::paths::{PathBundle, StatePaths};

const MIN_PATHS: usize = 100;
/// Allowance for rounding, relative to the mean magnitude of the process.
const ROUNDING_REL: f64 = 1e-12;

fn rounding_allowance(process: &StatePaths) -> f64 {
    let v = process.values();
    ROUNDING_REL * v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

fn check_aligned(process: &StatePaths, bundle: &PathBundle) -> Result<()> {
    let n_nodes = bundle.grid().n_nodes();
    if process.n_nodes() != n_nodes || process.n_paths() != bundle.n_paths() {
        return Err(Error::InvalidDimension(format!(
            "process has {}x{} values, bundle {}x{}",
            process.n_nodes(),
            process.n_paths(),
            n_nodes,
            bundle.n_paths()
        )));
    }
    if bundle.n_paths() < MIN_PATHS {
        return Err(Error::InsufficientSample {
            got: bundle.n_paths(),
            need: MIN_PATHS,
        });
    }
    Ok(())
}

/// Test functions of the node-`k` Brownian state: the constant and the
/// standardized monomials of degree at most 2 (capped by the basis degree).
/// Coordinates with zero spread, such as `W_0`, contribute only the constant.
fn test_functions(bundle: &PathBundle, k: usize, basis: &RegressionBasis) -> Vec<(String, Vec<f64>)> {
    let degree = match basis.family {
        BasisFamily::Polynomial { degree } => degree.min(2),
        BasisFamily::PiecewiseLinear { .. } => 1,
    };
    let m = bundle.n_paths();
    let mut out = vec![("1".to_string(), vec![1.0; m])];
    if degree == 0 {
        return out;
    }
    let mut coords: Vec<(usize, Vec<f64>)> = Vec::new();
    for c in 0..bundle.dim() {
        let w = bundle.w(k, c);
        let (mean, sd) = crate::paths::mean_std(w);
        if sd > 0.0 {
            coords.push((c, w.iter().map(|v| (v - mean) / sd).collect()));
        }
    }
    for (c, v) in &coords {
        out.push((format!("w{c}"), v.clone()));
    }
    if degree >= 2 {
        for (i, (ci, vi)) in coords.iter().enumerate() {
            for (cj, vj) in &coords[i..] {
                let prod: Vec<f64> = vi.iter().zip(vj).map(|(a, b)| a * b).collect();
                out.push((format!("w{ci}*w{cj}"), prod));
            }
        }
    }
    out
}

/// `E[M_N] - M_0` and, on `ceil(N / 8)` thinned nodes, `E[psi(W_k)(M_{k+1} - M_k)]`
/// for each test function `psi`. The increment family uses a Bonferroni
/// multiplier.
pub fn martingale_test(
    process: &StatePaths,
    bundle: &PathBundle,
    basis: &RegressionBasis,
) -> Result<Vec<CheckResult>> {
    check_aligned(process, bundle)?;
    let tol = rounding_allowance(process);
    let n = bundle.grid().n_steps();
    let m = bundle.n_paths();
    let mut out = Vec::new();

    let diff: Vec<f64> = process
        .terminal()
        .iter()
        .zip(process.node(0))
        .map(|(a, b)| a - b)
        .collect();
    let (mean, se) = mean_and_se(&diff);
    out.push(
        CheckResult::statistical_with_allowance("martingale.terminal", mean, se, DEFAULT_Z, tol)
            .with("n_paths", m)
            .with("n_steps", n),
    );

    let increments = increment_statistics(process, bundle, basis);
    let family = increments.len();
    let z = bonferroni_z(DEFAULT_Z, family);
    for (k, name, mean, se) in increments {
        out.push(
            CheckResult::statistical_with_allowance(
                format!("martingale.increment.k{k}.{name}"),
                mean,
                se,
                z,
                tol,
            )
            .with("node", k)
            .with("family_size", family)
            .with("n_paths", m),
        );
    }
    Ok(out)
}

fn increment_statistics(
    process: &StatePaths,
    bundle: &PathBundle,
    basis: &RegressionBasis,
) -> Vec<(usize, String, f64, f64)> {
    let n = bundle.grid().n_steps();
    let mut out = Vec::new();
    for k in thinned_nodes(n) {
        let dm: Vec<f64> = process
            .node(k + 1)
            .iter()
            .zip(process.node(k))
            .map(|(a, b)| a - b)
            .collect();
        for (name, psi) in test_functions(bundle, k, basis) {
            let prod: Vec<f64> = psi.iter().zip(&dm).map(|(a, b)| a * b).collect();
            let (mean, se) = mean_and_se(&prod);
            out.push((k, name, mean, se));
        }
    }
    out
}

/// One-sided version of [`martingale_test`] with nonnegative weights
/// `1`, `1{W > 0}`, `1{W <= 0}` and `W^2 / Var(W)` per component. The
/// statistic is the positive part of the estimated drift; the raw estimate is
/// kept in the context.
pub fn supermartingale_test(
    process: &StatePaths,
    bundle: &PathBundle,
    _basis: &RegressionBasis,
) -> Result<Vec<CheckResult>> {
    check_aligned(process, bundle)?;
    let tol = rounding_allowance(process);
    let n = bundle.grid().n_steps();
    let m = bundle.n_paths();
    let mut out = Vec::new();

    let diff: Vec<f64> = process
        .terminal()
        .iter()
        .zip(process.node(0))
        .map(|(a, b)| a - b)
        .collect();
    let (mean, se) = mean_and_se(&diff);
    out.push(
        CheckResult::statistical_with_allowance(
            "supermartingale.terminal",
            mean.max(0.0),
            se,
            DEFAULT_Z,
            tol,
        )
        .with("estimate", mean)
        .with("n_paths", m)
        .with("n_steps", n),
    );

    let mut incs = Vec::new();
    for k in thinned_nodes(n) {
        let dm: Vec<f64> = process
            .node(k + 1)
            .iter()
            .zip(process.node(k))
            .map(|(a, b)| a - b)
            .collect();
        let mut weights: Vec<(String, Vec<f64>)> = vec![("1".into(), vec![1.0; m])];
        for c in 0..bundle.dim() {
            let w = bundle.w(k, c);
            let (_, sd) = crate::paths::mean_std(w);
            if sd == 0.0 {
                continue;
            }
            weights.push((
                format!("w{c}>0"),
                w.iter().map(|v| f64::from(u8::from(*v > 0.0))).collect(),
            ));
            weights.push((
                format!("w{c}<=0"),
                w.iter().map(|v| f64::from(u8::from(*v <= 0.0))).collect(),
            ));
            weights.push((format!("w{c}^2"), w.iter().map(|v| v * v / (sd * sd)).collect()));
        }
        for (name, psi) in weights {
            let prod: Vec<f64> = psi.iter().zip(&dm).map(|(a, b)| a * b).collect();
            let (mean, se) = mean_and_se(&prod);
            incs.push((k, name, mean, se));
        }
    }
    let z = bonferroni_z(DEFAULT_Z, incs.len());
    let family = incs.len();
    for (k, name, mean, se) in incs {
        out.push(
            CheckResult::statistical_with_allowance(
                format!("supermartingale.increment.k{k}.{name}"),
                mean.max(0.0),
                se,
                z,
                tol,
            )
            .with("estimate", mean)
            .with("node", k)
            .with("family_size", family)
            .with("n_paths", m),
        );
    }
    Ok(out)
}
