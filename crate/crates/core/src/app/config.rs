//! Run configuration: a TOML document with market, utility, problem,
//! numerics, verification and output blocks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{SolverId, VerifyOptions};
use crate::error::{Error, Result};
use crate::fbsde::{Endowment, NumericsConfig, ProblemSpec};
use crate::market::{build_market, Theta};
use crate::utility::{Family, UtilityModel};

/// Market price of risk as a declarative function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaSpec {
    Constant {
        values: Vec<f64>,
    },
    /// `intercept + slope * t` per component.
    Affine {
        intercept: Vec<f64>,
        slope: Vec<f64>,
    },
}

impl ThetaSpec {
    pub fn to_theta(&self) -> Result<Theta> {
        match self {
            ThetaSpec::Constant { values } => Ok(Theta::constant(values.clone())),
            ThetaSpec::Affine { intercept, slope } => {
                if intercept.len() != slope.len() {
                    return Err(Error::Config {
                        field: "market.theta.slope".into(),
                        message: format!("{} slopes for {} intercepts", slope.len(), intercept.len()),
                    });
                }
                let (a, b) = (intercept.clone(), slope.clone());
                Ok(Theta::function(a.len(), move |t| {
                    a.iter().zip(&b).map(|(a, b)| a + b * t).collect()
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub d1: usize,
    #[serde(default)]
    pub d2: usize,
    pub theta: ThetaSpec,
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
}

fn unit_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub x0: f64,
    #[serde(default)]
    pub endowment: Endowment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub z: f64,
    pub merton_tolerance: f64,
    pub perturbation_seed: u64,
    pub utility_epsilon: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let o = VerifyOptions::default();
        Self {
            z: o.z,
            merton_tolerance: o.merton_tolerance,
            perturbation_seed: o.perturbation_seed,
            utility_epsilon: o.utility_epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    /// Leading paths written to the per-path CSV files.
    pub csv_paths: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![Format::Csv, Format::Json],
            csv_paths: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    pub utility: Family,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverId,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line or environment overrides applied after parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Parsed configuration together with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: String,
}

impl LoadedConfig {
    pub fn parse(source: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(source).map_err(|e| {
            let field = match e.span() {
                Some(span) => {
                    let line = source[..span.start.min(source.len())].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "config".to_string(),
            };
            Error::Config {
                field,
                message: e.message().to_string(),
            }
        })?;
        config.validate()?;
        Ok(Self {
            config,
            source: source.to_string(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)?;
        Self::parse(&source)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let n = &mut self.config.numerics;
        if let Some(s) = o.seed {
            n.seed = s;
        }
        if let Some(m) = o.paths {
            n.n_paths = m;
        }
        if let Some(k) = o.steps {
            n.n_steps = k;
        }
        if let Some(d) = &o.out {
            self.config.output.dir = Some(d.clone());
        }
        self.config.validate()
    }

    /// SHA-256 of the source text.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.numerics.validate()?;
        if self.output.csv_paths == 0 {
            return Err(Error::Config {
                field: "output.csv_paths".into(),
                message: "must be positive".into(),
            });
        }
        if !(self.verify.z > 0.0) {
            return Err(Error::Config {
                field: "verify.z".into(),
                message: "must be positive".into(),
            });
        }
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let m = &self.market;
        let market = build_market(m.d1, m.d2, m.theta.to_theta()?, m.horizon).map_err(|e| Error::Config {
            field: "market".into(),
            message: e.to_string(),
        })?;
        let utility = UtilityModel::from_family(&self.utility).map_err(|e| Error::Config {
            field: "utility".into(),
            message: e.to_string(),
        })?;
        ProblemSpec::new(market, utility, self.problem.x0, self.problem.endowment.clone()).map_err(|e| {
            Error::Config {
                field: "problem".into(),
                message: e.to_string(),
            }
        })
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            z: self.verify.z,
            merton_tolerance: self.verify.merton_tolerance,
            basis: self.numerics.basis.clone(),
            perturbation_seed: self.verify.perturbation_seed,
            utility_epsilon: self.verify.utility_epsilon,
            fp_tolerance: self.numerics.fp_tolerance,
        }
    }
}
