//! Market model: `d1` tradable Brownian directions, `d2` orthogonal ones and a
//! deterministic market price of risk `theta(t)`.
//!
//! Prices are only ever used in normalized form `dS^i = dW^i + theta^i dt`, the
//! interest rate is zero.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of interior sample points used to certify `theta_bound`.
const THETA_BOUND_SAMPLES: usize = 10 * 1024;
const TIME_SLACK: f64 = 1e-12;

/// Deterministic market price of risk.
#[derive(Clone)]
pub enum Theta {
    Constant(Vec<f64>),
    /// `(time, vector)` breakpoints with linear interpolation, flat outside.
    Breakpoints(Vec<(f64, Vec<f64>)>),
    Function {
        dim: usize,
        f: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    },
}

impl fmt::Debug for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Theta::Breakpoints(b) => f.debug_tuple("Breakpoints").field(b).finish(),
            Theta::Function { dim, .. } => write!(f, "Function {{ dim: {dim} }}"),
        }
    }
}

impl Theta {
    pub fn constant(v: impl Into<Vec<f64>>) -> Self {
        Theta::Constant(v.into())
    }

    pub fn function(dim: usize, f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Theta::Function { dim, f: Arc::new(f) }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Theta::Constant(v) => Some(v.len()),
            Theta::Breakpoints(b) => b.first().map(|(_, v)| v.len()),
            Theta::Function { dim, .. } => Some(*dim),
        }
    }

    /// Writes `theta(t)` into `out`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            Theta::Constant(v) => out.copy_from_slice(v),
            Theta::Breakpoints(b) => {
                let last = b.len() - 1;
                if t <= b[0].0 {
                    out.copy_from_slice(&b[0].1);
                } else if t >= b[last].0 {
                    out.copy_from_slice(&b[last].1);
                } else {
                    let i = b.partition_point(|(s, _)| *s <= t) - 1;
                    let (t0, v0) = &b[i];
                    let (t1, v1) = &b[i + 1];
                    let w = (t - t0) / (t1 - t0);
                    for ((o, a), c) in out.iter_mut().zip(v0).zip(v1) {
                        *o = a + w * (c - a);
                    }
                }
            }
            Theta::Function { f, .. } => out.copy_from_slice(&f(t)),
        }
    }

    fn breakpoint_times(&self) -> Vec<f64> {
        match self {
            Theta::Breakpoints(b) => b.iter().map(|(t, _)| *t).collect(),
            _ => Vec::new(),
        }
    }
}

/// Validated, immutable market description.
#[derive(Debug, Clone)]
pub struct MarketModel {
    d1: usize,
    d2: usize,
    theta: Theta,
    theta_bound: f64,
    horizon: f64,
}

/// Hedgeable / orthogonal split of a vector of length `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSplit {
    pub hedgeable: Vec<f64>,
    pub orthogonal: Vec<f64>,
}

impl MarketModel {
    /// Validates the inputs and certifies `theta_bound` as the maximum of
    /// `|theta(t)|` over a fine grid of `[0, T]` (plus all breakpoints).
    pub fn new(d1: usize, d2: usize, theta: Theta, horizon: f64) -> Result<Self> {
        if d1 == 0 {
            return Err(Error::InvalidDimension("d1 must be at least 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let d = d1 + d2;
        match theta.dim() {
            Some(n) if n == d => {}
            Some(n) => {
                return Err(Error::InvalidDimension(format!(
                    "theta has {n} components, expected d1 + d2 = {d}"
                )))
            }
            None => return Err(Error::InvalidDimension("theta has no breakpoints".into())),
        }
        if let Theta::Breakpoints(b) = &theta {
            if b.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidArgument(
                    "theta breakpoints must have strictly increasing times".into(),
                ));
            }
            if b.iter().any(|(_, v)| v.len() != d) {
                return Err(Error::InvalidDimension(
                    "all theta breakpoints must have the same length".into(),
                ));
            }
        }

        let mut times: Vec<f64> = (0..=THETA_BOUND_SAMPLES)
            .map(|i| horizon * i as f64 / THETA_BOUND_SAMPLES as f64)
            .collect();
        times.extend(
            theta
                .breakpoint_times()
                .into_iter()
                .filter(|t| (0.0..=horizon).contains(t)),
        );
        let mut buf = vec![0.0; d];
        let mut bound: f64 = 0.0;
        for t in times {
            theta.eval_into(t, &mut buf);
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteTheta { t });
            }
            bound = bound.max(norm(&buf));
        }

        Ok(Self {
            d1,
            d2,
            theta,
            theta_bound: bound,
            horizon,
        })
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta_bound(&self) -> f64 {
        self.theta_bound
    }

    pub fn is_complete(&self) -> bool {
        self.d2 == 0
    }

    /// `theta(t)` with `t` checked against `[0, T]`.
    pub fn theta(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let mut out = vec![0.0; self.dim()];
        self.theta.eval_into(t.clamp(0.0, self.horizon), &mut out);
        Ok(out)
    }

    /// Unchecked evaluation used on solver grids.
    pub fn theta_into(&self, t: f64, out: &mut [f64]) {
        self.theta.eval_into(t, out);
    }

    /// Splits `theta(t)` into the hedgeable part (first `d1` slots) and the
    /// orthogonal part (last `d2` slots), each padded with zeros to length `d`.
    pub fn theta_split(&self, t: f64) -> Result<ThetaSplit> {
        let theta = self.theta(t)?;
        Ok(self.split(&theta))
    }

    /// Splits any length-`d` vector at index `d1`.
    pub fn split(&self, v: &[f64]) -> ThetaSplit {
        let mut hedgeable = v.to_vec();
        let mut orthogonal = v.to_vec();
        hedgeable[self.d1..].iter_mut().for_each(|x| *x = 0.0);
        orthogonal[..self.d1].iter_mut().for_each(|x| *x = 0.0);
        ThetaSplit {
            hedgeable,
            orthogonal,
        }
    }

    /// `theta` at every node of a uniform grid with `n_steps` steps,
    /// flattened node-major (`d` values per node).
    pub fn theta_on_grid(&self, n_steps: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; (n_steps + 1) * d];
        for k in 0..=n_steps {
            let t = self.horizon * k as f64 / n_steps as f64;
            self.theta.eval_into(t, &mut out[k * d..(k + 1) * d]);
        }
        out
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -TIME_SLACK && t <= self.horizon + TIME_SLACK) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

/// Convenience alias matching the operation name.
pub fn build_market(d1: usize, d2: usize, theta: Theta, horizon: f64) -> Result<MarketModel> {
    MarketModel::new(d1, d2, theta, horizon)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
