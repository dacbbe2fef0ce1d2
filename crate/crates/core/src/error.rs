use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("market price of risk is not finite at t = {t}")]
    NonFiniteTheta { t: f64 },

    #[error("t = {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("{what}: x = {x} is outside the utility domain")]
    Domain { what: &'static str, x: f64 },

    #[error("operation requires a {expected} utility")]
    WrongDomain { expected: &'static str },

    #[error("utility validation failed: {0}")]
    UtilityValidation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot allocate {requested} f64 values for path storage")]
    Allocation { requested: usize },

    #[error("non-finite state at path {path}, step {step}")]
    Integration { path: usize, step: usize },

    #[error("regression basis ill-conditioned at node {node}: condition estimate {condition:.3e}")]
    IllConditionedBasis { node: usize, condition: f64 },

    #[error("implicit step did not converge at node {node}, path {path}")]
    ImplicitStep { node: usize, path: usize },

    #[error("quadratic driver requires the implicit Newton stepping mode")]
    QuadraticDriverNeedsImplicit,

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("Picard iteration diverged; residual log {residuals:?}")]
    Diverged { residuals: Vec<f64> },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("insufficient sample: {got} paths, need at least {need}")]
    InsufficientSample { got: usize, need: usize },

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
