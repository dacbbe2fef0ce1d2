//! Declarative endowments `H` as functionals of terminal Brownian values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathBundle;

/// Terminal endowment. `component` indexes the full Brownian vector
/// (hedgeable coordinates first, 0-based).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endowment {
    #[default]
    None,
    /// `level + scale * tanh(W^c_T)`.
    AffineTanh {
        component: usize,
        level: f64,
        scale: f64,
    },
    /// `level + slope * W^c_T` (unbounded).
    Linear {
        component: usize,
        level: f64,
        slope: f64,
    },
    /// `min((W^c_T - strike)^+, cap)`.
    Call { component: usize, strike: f64, cap: f64 },
}

impl Endowment {
    pub fn is_zero(&self) -> bool {
        match self {
            Endowment::None => true,
            Endowment::AffineTanh { level, scale, .. } => *level == 0.0 && *scale == 0.0,
            Endowment::Linear { level, slope, .. } => *level == 0.0 && *slope == 0.0,
            Endowment::Call { cap, .. } => *cap == 0.0,
        }
    }

    /// Brownian components the endowment reads.
    pub fn components(&self) -> Vec<usize> {
        match self {
            Endowment::None => vec![],
            Endowment::AffineTanh { component, .. }
            | Endowment::Linear { component, .. }
            | Endowment::Call { component, .. } => vec![*component],
        }
    }

    /// `sup |H|` when the family is bounded.
    pub fn bound(&self) -> Option<f64> {
        match self {
            Endowment::None => Some(0.0),
            Endowment::AffineTanh { level, scale, .. } => Some(level.abs() + scale.abs()),
            Endowment::Linear { slope, level, .. } => (*slope == 0.0).then_some(level.abs()),
            Endowment::Call { cap, .. } => Some(cap.abs()),
        }
    }

    /// `inf H` over all Brownian values.
    pub fn lower_bound(&self) -> f64 {
        match self {
            Endowment::None => 0.0,
            Endowment::AffineTanh { level, scale, .. } => level - scale.abs(),
            Endowment::Linear { level, slope, .. } => {
                if *slope == 0.0 {
                    *level
                } else {
                    f64::NEG_INFINITY
                }
            }
            Endowment::Call { cap, .. } => cap.min(0.0),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for c in self.components() {
            if c >= dim {
                return Err(Error::InvalidDimension(format!(
                    "endowment reads W component {c}, market dimension is {dim}"
                )));
            }
        }
        let params: Vec<f64> = match self {
            Endowment::None => vec![],
            Endowment::AffineTanh { level, scale, .. } => vec![*level, *scale],
            Endowment::Linear { level, slope, .. } => vec![*level, *slope],
            Endowment::Call { strike, cap, .. } => vec![*strike, *cap],
        };
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "endowment parameters must be finite".into(),
            ));
        }
        if let Endowment::Call { cap, .. } = self {
            if *cap < 0.0 {
                return Err(Error::InvalidArgument("call cap must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, w_terminal: &[f64]) -> f64 {
        match *self {
            Endowment::None => 0.0,
            Endowment::AffineTanh {
                component,
                level,
                scale,
            } => level + scale * w_terminal[component].tanh(),
            Endowment::Linear {
                component,
                level,
                slope,
            } => level + slope * w_terminal[component],
            Endowment::Call {
                component,
                strike,
                cap,
            } => (w_terminal[component] - strike).max(0.0).min(cap),
        }
    }

    /// `H` on every path of the bundle.
    pub fn evaluate(&self, bundle: &PathBundle) -> Result<Vec<f64>> {
        self.validate(bundle.dim())?;
        let d = bundle.dim();
        let m = bundle.n_paths();
        let mut w = vec![0.0; d];
        let mut out = Vec::with_capacity(m);
        for p in 0..m {
            for (c, wc) in w.iter_mut().enumerate() {
                *wc = bundle.w_terminal(c)[p];
            }
            let h = self.value(&w);
            if !h.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "endowment is not finite on path {p}"
                )));
            }
            out.push(h);
        }
        Ok(out)
    }
}
