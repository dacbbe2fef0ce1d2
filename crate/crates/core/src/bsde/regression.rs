//! Least-squares conditional expectations on a single time node.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible condition estimate of the design matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Coordinates whose variance (after orthogonalizing against earlier kept
/// coordinates) falls below this fraction are dropped as collinear.
const COLLINEAR_TOL: f64 = 1e-6;
/// Fixed reduction chunk: partial Gram matrices are summed in chunk order so
/// the result does not depend on the number of threads.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFamily {
    /// Monomials of total degree at most `degree` in the standardized coordinates.
    Polynomial { degree: usize },
    /// Hat functions on `bins` quantile cells per coordinate (additive).
    PiecewiseLinear { bins: usize },
}

/// Regression basis: family plus the state coordinates that feed it
/// (`None` uses every coordinate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub family: BasisFamily,
    pub projection: Option<Vec<usize>>,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self::polynomial(3)
    }
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            family: BasisFamily::Polynomial { degree },
            projection: None,
        }
    }

    pub fn piecewise_linear(bins: usize) -> Self {
        Self {
            family: BasisFamily::PiecewiseLinear { bins },
            projection: None,
        }
    }

    pub fn with_projection(mut self, coords: Vec<usize>) -> Self {
        self.projection = Some(coords);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            BasisFamily::Polynomial { degree } if degree > 5 => Err(Error::InvalidArgument(format!(
                "polynomial degree {degree} exceeds 5"
            ))),
            BasisFamily::PiecewiseLinear { bins: 0 } => Err(Error::InvalidArgument(
                "piecewise-linear basis needs bins >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub(crate) fn coords(&self, available: usize) -> Result<Vec<usize>> {
        match &self.projection {
            None => Ok((0..available).collect()),
            Some(p) => {
                if let Some(bad) = p.iter().find(|&&c| c >= available) {
                    return Err(Error::InvalidDimension(format!(
                        "basis projection references coordinate {bad}, only {available} supplied"
                    )));
                }
                Ok(p.clone())
            }
        }
    }
}

/// Design matrix and its spectral factorization at one node, reusable for
/// several right-hand sides.
pub struct NodeRegression {
    n_paths: usize,
    n_features: usize,
    features: Vec<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    condition: f64,
}

impl NodeRegression {
    /// Builds the basis on the given coordinates (each a slice over paths).
    pub fn new(node: usize, n_paths: usize, coords: &[&[f64]], basis: &RegressionBasis) -> Result<Self> {
        let standardized = screen(coords);
        let (n_features, features) = match basis.family {
            BasisFamily::Polynomial { degree } => polynomial_features(&standardized, degree, n_paths),
            BasisFamily::PiecewiseLinear { bins } => hat_features(&standardized, bins, n_paths),
        };
        let gram = reduce(n_paths, n_features * n_features, |p, acc| {
            let row = &features[p * n_features..(p + 1) * n_features];
            for i in 0..n_features {
                for j in i..n_features {
                    acc[i * n_features + j] += row[i] * row[j];
                }
            }
        });
        let mut a = DMatrix::zeros(n_features, n_features);
        for i in 0..n_features {
            for j in i..n_features {
                let v = gram[i * n_features + j] / n_paths as f64;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(a);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let condition = if min > 0.0 {
            (max / min).sqrt()
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditionedBasis { node, condition });
        }
        Ok(Self {
            n_paths,
            n_features,
            features,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            condition,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Least-squares coefficients for `y`.
    pub fn coefficients(&self, y: &[f64]) -> DVector<f64> {
        let nf = self.n_features;
        let rhs = reduce(self.n_paths, nf, |p, acc| {
            let row = &self.features[p * nf..(p + 1) * nf];
            for i in 0..nf {
                acc[i] += row[i] * y[p];
            }
        });
        let b = DVector::from_iterator(nf, rhs.into_iter().map(|v| v / self.n_paths as f64));
        let proj = self.eigenvectors.transpose() * b;
        let scaled = proj.component_div(&self.eigenvalues);
        &self.eigenvectors * scaled
    }

    /// Fitted conditional expectation of `y` at every path.
    pub fn fit(&self, y: &[f64]) -> Vec<f64> {
        let beta = self.coefficients(y);
        let nf = self.n_features;
        (0..self.n_paths)
            .into_par_iter()
            .map(|p| {
                let row = &self.features[p * nf..(p + 1) * nf];
                row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

fn reduce(n_paths: usize, acc_len: usize, add: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let n_chunks = n_paths.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; acc_len];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                add(p, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; acc_len];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Standardizes coordinates and drops constant or collinear ones.
fn screen(coords: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for c in coords {
        let n = c.len() as f64;
        let mean0 = c.iter().sum::<f64>() / n;
        // Corrected two-pass estimate, exact zero for constant data.
        let shift = c.iter().map(|v| v - mean0).sum::<f64>() / n;
        let mean = mean0 + shift;
        let var = (c.iter().map(|v| (v - mean0) * (v - mean0)).sum::<f64>() / n - shift * shift).max(0.0);
        let scale = mean.abs().max(1.0);
        if !(var.sqrt() > 1e-12 * scale) {
            continue;
        }
        let sd = var.sqrt();
        let u: Vec<f64> = c.iter().map(|v| (v - mean) / sd).collect();
        let mut r = u.clone();
        for q in &ortho {
            let dot = r.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / n;
            let qq = q.iter().map(|b| b * b).sum::<f64>() / n;
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot / qq * b);
        }
        let resid = r.iter().map(|v| v * v).sum::<f64>() / n;
        if resid < COLLINEAR_TOL {
            continue;
        }
        ortho.push(r);
        kept.push(u);
    }
    kept
}

fn monomials(n_coords: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n_coords]];
    fn rec(prefix: &mut Vec<usize>, left: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == prefix.capacity() {
            if prefix.iter().sum::<usize>() > 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for e in 0..=remaining.min(left) {
            prefix.push(e);
            rec(prefix, left, remaining - e, out);
            prefix.pop();
        }
    }
    if n_coords > 0 {
        let mut prefix = Vec::with_capacity(n_coords);
        rec(&mut prefix, degree, degree, &mut out);
    }
    out.sort_by_key(|e| e.iter().sum::<usize>());
    out
}

fn polynomial_features(coords: &[Vec<f64>], degree: usize, n_paths: usize) -> (usize, Vec<f64>) {
    let exps = monomials(coords.len(), degree);
    let nf = exps.len();
    let mut features = vec![0.0; n_paths * nf];
    features.par_chunks_mut(nf).enumerate().for_each(|(p, row)| {
        for (f, e) in row.iter_mut().zip(&exps) {
            let mut v = 1.0;
            for (c, &k) in e.iter().enumerate() {
                if k > 0 {
                    v *= coords[c][p].powi(k as i32);
                }
            }
            *f = v;
        }
    });
    (nf, features)
}

fn hat_features(coords: &[Vec<f64>], bins: usize, n_paths: usize) -> (usize, Vec<f64>) {
    if coords.is_empty() {
        return (1, vec![1.0; n_paths]);
    }
    let knots: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(|a, b| a.total_cmp(b));
            let mut k: Vec<f64> = (0..=bins).map(|i| s[((s.len() - 1) * i) / bins]).collect();
            k.dedup();
            k
        })
        .collect();
    let widths: Vec<usize> = knots
        .iter()
        .enumerate()
        .map(|(i, k)| if i == 0 { k.len() } else { k.len() - 1 })
        .collect();
    let nf: usize = widths.iter().sum();
    let mut features = vec![0.0; n_paths * nf];
    features.par_chunks_mut(nf).enumerate().for_each(|(p, row)| {
        let mut offset = 0;
        for (c, k) in knots.iter().enumerate() {
            let mut hats = vec![0.0; k.len()];
            let x = coords[c][p].clamp(k[0], k[k.len() - 1]);
            if k.len() == 1 {
                hats[0] = 1.0;
            } else {
                let j = (k.partition_point(|v| *v <= x)).clamp(1, k.len() - 1);
                let w = (x - k[j - 1]) / (k[j] - k[j - 1]);
                hats[j - 1] = 1.0 - w;
                hats[j] = w;
            }
            let skip = usize::from(c > 0);
            for (i, h) in hats.into_iter().skip(skip).enumerate() {
                row[offset + i] = h;
            }
            offset += widths[c];
        }
    });
    (nf, features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(0, 3).len(), 1);
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 3).len(), 10);
        assert_eq!(monomials(3, 2).len(), 10);
    }

    #[test]
    fn constant_coordinates_reduce_to_mean() {
        let c = vec![2.0; 100];
        let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = NodeRegression::new(0, 100, &[&c], &RegressionBasis::default()).unwrap();
        assert_eq!(r.n_features(), 1);
        let fit = r.fit(&y);
        assert!(fit.iter().all(|v| (v - 49.5).abs() < 1e-12));
    }

    #[test]
    fn large_constant_sample_is_screened() {
        let c = vec![10f64.ln(); 100_000];
        let r = NodeRegression::new(0, 100_000, &[&c], &RegressionBasis::default()).unwrap();
        assert_eq!(r.n_features(), 1);
    }

    #[test]
    fn collinear_coordinates_are_screened() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let z: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let r = NodeRegression::new(3, 200, &[&x, &z], &RegressionBasis::default()).unwrap();
        assert_eq!(r.n_features(), 4);
    }

    #[test]
    fn cubic_is_reproduced_exactly() {
        let x: Vec<f64> = (0..500).map(|i| -2.0 + 4.0 * i as f64 / 499.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v + 0.5 * v * v * v).collect();
        let r = NodeRegression::new(0, 500, &[&x], &RegressionBasis::polynomial(3)).unwrap();
        for (f, t) in r.fit(&y).iter().zip(&y) {
            assert!((f - t).abs() < 1e-9);
        }
    }

    #[test]
    fn hat_basis_reproduces_linear_functions() {
        let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.123).cos()).collect();
        let w: Vec<f64> = (0..400).map(|i| (i as f64 * 0.71).sin()).collect();
        let y: Vec<f64> = x.iter().zip(&w).map(|(a, b)| 2.0 * a - b + 0.3).collect();
        let r = NodeRegression::new(0, 400, &[&x, &w], &RegressionBasis::piecewise_linear(4)).unwrap();
        for (f, t) in r.fit(&y).iter().zip(&y) {
            assert!((f - t).abs() < 1e-9);
        }
    }

    #[test]
    fn degree_limit() {
        assert!(RegressionBasis::polynomial(6).validate().is_err());
        assert!(RegressionBasis::piecewise_linear(0).validate().is_err());
        assert!(RegressionBasis::polynomial(5).validate().is_ok());
    }
}
