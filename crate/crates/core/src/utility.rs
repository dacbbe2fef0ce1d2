//! Utility calculus: `U` and its first three derivatives, the inverse marginal
//! utility `I = (U')^{-1}`, the coefficient functions `phi1`, `phi2`, `phi3`,
//! the convex conjugate and HARA detection.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_POINTS: usize = 101;
const BOUND_SAFETY: f64 = 1.5;
const INVERSE_TOL: f64 = 1e-10;
const FD_REL_TOL: f64 = 1e-5;
const HARA_TOL: f64 = 1e-8;

/// Whether the utility lives on the whole real line or on `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    RealLine,
    HalfLine,
}

/// Parametric family, used for benchmark dispatch and reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `U(x) = -exp(-alpha x)`.
    Exponential {
        alpha: f64,
    },
    /// `U(x) = x^gamma / gamma`.
    Power {
        gamma: f64,
    },
    /// `U(x) = ln x`.
    Log,
    /// `U(x) = x - x^2 / (2b)` on `x < b`.
    Quadratic {
        b: f64,
    },
    /// `U(x) = -exp(-a1 x) - exp(-a2 x)`.
    MixtureExp {
        alpha1: f64,
        alpha2: f64,
    },
    /// `U(x) = x^g1 / g1 + x^g2 / g2`.
    MixturePower {
        gamma1: f64,
        gamma2: f64,
    },
    Custom {
        name: String,
    },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied utility. All four derivatives and the inverse marginal must
/// be provided; nothing is inverted or differentiated automatically.
#[derive(Clone)]
pub struct CustomUtility {
    pub name: String,
    pub domain: Domain,
    pub u0: ScalarFn,
    pub u1: ScalarFn,
    pub u2: ScalarFn,
    pub u3: ScalarFn,
    pub inverse_marginal: ScalarFn,
}

impl fmt::Debug for CustomUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomUtility")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

/// A validated utility function.
#[derive(Debug, Clone)]
pub struct UtilityModel {
    family: Family,
    domain: Domain,
    custom: Option<Arc<CustomUtility>>,
    grid: Vec<f64>,
    phi1_bound: f64,
    phi2_bound: f64,
}

impl UtilityModel {
    pub fn exponential(alpha: f64) -> Result<Self> {
        positive("alpha", alpha)?;
        Self::build(Family::Exponential { alpha }, None)
    }

    pub fn power(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma < 1.0 && gamma != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power utility needs gamma < 1, gamma != 0; got {gamma}"
            )));
        }
        Self::build(Family::Power { gamma }, None)
    }

    pub fn log() -> Result<Self> {
        Self::build(Family::Log, None)
    }

    pub fn quadratic(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quadratic bliss point must be positive, got {b}"
            )));
        }
        Self::build(Family::Quadratic { b }, None)
    }

    pub fn mixture_exp(alpha1: f64, alpha2: f64) -> Result<Self> {
        positive("alpha1", alpha1)?;
        positive("alpha2", alpha2)?;
        Self::build(Family::MixtureExp { alpha1, alpha2 }, None)
    }

    pub fn mixture_power(gamma1: f64, gamma2: f64) -> Result<Self> {
        for g in [gamma1, gamma2] {
            if !(g.is_finite() && g > 0.0 && g < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "mixture power exponents must lie in (0, 1); got {g}"
                )));
            }
        }
        Self::build(Family::MixturePower { gamma1, gamma2 }, None)
    }

    pub fn custom(c: CustomUtility) -> Result<Self> {
        let family = Family::Custom { name: c.name.clone() };
        Self::build(family, Some(Arc::new(c)))
    }

    /// Builds a built-in family from its tag.
    pub fn from_family(family: &Family) -> Result<Self> {
        match *family {
            Family::Exponential { alpha } => Self::exponential(alpha),
            Family::Power { gamma } => Self::power(gamma),
            Family::Log => Self::log(),
            Family::Quadratic { b } => Self::quadratic(b),
            Family::MixtureExp { alpha1, alpha2 } => Self::mixture_exp(alpha1, alpha2),
            Family::MixturePower { gamma1, gamma2 } => Self::mixture_power(gamma1, gamma2),
            Family::Custom { ref name } => Err(Error::InvalidArgument(format!(
                "custom utility `{name}` must be supplied with its derivatives"
            ))),
        }
    }

    fn build(family: Family, custom: Option<Arc<CustomUtility>>) -> Result<Self> {
        let domain = match (&family, &custom) {
            (_, Some(c)) => c.domain,
            (Family::Power { .. } | Family::Log | Family::MixturePower { .. }, _) => Domain::HalfLine,
            _ => Domain::RealLine,
        };
        let grid = validation_grid(&family, domain);
        let mut model = Self {
            family,
            domain,
            custom,
            grid,
            phi1_bound: 0.0,
            phi2_bound: 0.0,
        };
        model.validate()?;
        let (mut b1, mut b2) = (0.0f64, 0.0f64);
        for &x in &model.grid {
            b1 = b1.max(model.phi1_unchecked(x).abs());
            b2 = b2.max(model.phi2_unchecked(x).abs());
        }
        model.phi1_bound = BOUND_SAFETY * b1;
        model.phi2_bound = BOUND_SAFETY * b2;
        Ok(model)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Points on which the model was validated.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Grid estimate of `sup |phi1|` including the safety factor.
    pub fn phi1_bound(&self) -> f64 {
        self.phi1_bound
    }

    /// Grid estimate of `sup |phi2|` (domain-appropriate) including the safety factor.
    pub fn phi2_bound(&self) -> f64 {
        self.phi2_bound
    }

    pub fn in_domain(&self, x: f64) -> bool {
        match (self.domain, &self.family) {
            (_, Family::Quadratic { b }) => x.is_finite() && x < *b,
            (Domain::RealLine, _) => x.is_finite(),
            (Domain::HalfLine, _) => x.is_finite() && x > 0.0,
        }
    }

    fn check(&self, what: &'static str, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::Domain { what, x })
        }
    }

    pub fn u0(&self, x: f64) -> f64 {
        match self.family {
            Family::Exponential { alpha } => -(-alpha * x).exp(),
            Family::Power { gamma } => x.powf(gamma) / gamma,
            Family::Log => x.ln(),
            Family::Quadratic { b } => x - x * x / (2.0 * b),
            Family::MixtureExp { alpha1, alpha2 } => -(-alpha1 * x).exp() - (-alpha2 * x).exp(),
            Family::MixturePower { gamma1, gamma2 } => x.powf(gamma1) / gamma1 + x.powf(gamma2) / gamma2,
            Family::Custom { .. } => (self.custom_fns().u0)(x),
        }
    }

    pub fn u1(&self, x: f64) -> f64 {
        match self.family {
            Family::Exponential { alpha } => alpha * (-alpha * x).exp(),
            Family::Power { gamma } => x.powf(gamma - 1.0),
            Family::Log => 1.0 / x,
            Family::Quadratic { b } => 1.0 - x / b,
            Family::MixtureExp { alpha1, alpha2 } => {
                alpha1 * (-alpha1 * x).exp() + alpha2 * (-alpha2 * x).exp()
            }
            Family::MixturePower { gamma1, gamma2 } => x.powf(gamma1 - 1.0) + x.powf(gamma2 - 1.0),
            Family::Custom { .. } => (self.custom_fns().u1)(x),
        }
    }

    pub fn u2(&self, x: f64) -> f64 {
        match self.family {
            Family::Exponential { alpha } => -alpha * alpha * (-alpha * x).exp(),
            Family::Power { gamma } => (gamma - 1.0) * x.powf(gamma - 2.0),
            Family::Log => -1.0 / (x * x),
            Family::Quadratic { b } => -1.0 / b,
            Family::MixtureExp { alpha1, alpha2 } => {
                -alpha1 * alpha1 * (-alpha1 * x).exp() - alpha2 * alpha2 * (-alpha2 * x).exp()
            }
            Family::MixturePower { gamma1, gamma2 } => {
                (gamma1 - 1.0) * x.powf(gamma1 - 2.0) + (gamma2 - 1.0) * x.powf(gamma2 - 2.0)
            }
            Family::Custom { .. } => (self.custom_fns().u2)(x),
        }
    }

    pub fn u3(&self, x: f64) -> f64 {
        match self.family {
            Family::Exponential { alpha } => alpha.powi(3) * (-alpha * x).exp(),
            Family::Power { gamma } => (gamma - 1.0) * (gamma - 2.0) * x.powf(gamma - 3.0),
            Family::Log => 2.0 / (x * x * x),
            Family::Quadratic { .. } => 0.0,
            Family::MixtureExp { alpha1, alpha2 } => {
                alpha1.powi(3) * (-alpha1 * x).exp() + alpha2.powi(3) * (-alpha2 * x).exp()
            }
            Family::MixturePower { gamma1, gamma2 } => {
                (gamma1 - 1.0) * (gamma1 - 2.0) * x.powf(gamma1 - 3.0)
                    + (gamma2 - 1.0) * (gamma2 - 2.0) * x.powf(gamma2 - 3.0)
            }
            Family::Custom { .. } => (self.custom_fns().u3)(x),
        }
    }

    /// `I(y) = (U')^{-1}(y)` for `y > 0`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        match self.family {
            Family::Exponential { alpha } => -(y / alpha).ln() / alpha,
            Family::Power { gamma } => y.powf(1.0 / (gamma - 1.0)),
            Family::Log => 1.0 / y,
            Family::Quadratic { b } => b * (1.0 - y),
            Family::MixtureExp { alpha1, alpha2 } => {
                let lo = alpha1.min(alpha2);
                let hi = alpha1.max(alpha2);
                // Each term alone brackets the root.
                let x_a = -(y / (2.0 * hi)).ln() / hi;
                let x_b = -(y / (2.0 * lo)).ln() / lo;
                let x_c = -(y / hi).ln() / hi;
                let x_d = -(y / lo).ln() / lo;
                let a = x_a.min(x_b).min(x_c).min(x_d);
                let b = x_a.max(x_b).max(x_c).max(x_d);
                solve_decreasing(|x| self.u1(x), |x| self.u2(x), y, a - 1.0, b + 1.0)
            }
            Family::MixturePower { gamma1, gamma2 } => {
                // Newton in s = ln x where ln U'(e^s) is convex and decreasing.
                let g = |s: f64| self.u1(s.exp());
                let dg = |s: f64| self.u2(s.exp()) * s.exp();
                let s_guess = [gamma1, gamma2]
                    .iter()
                    .flat_map(|g| [(y / 2.0).ln() / (g - 1.0), y.ln() / (g - 1.0)])
                    .collect::<Vec<_>>();
                let a = s_guess.iter().cloned().fold(f64::INFINITY, f64::min);
                let b = s_guess.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                solve_decreasing(g, dg, y, a - 1.0, b + 1.0).exp()
            }
            Family::Custom { .. } => (self.custom_fns().inverse_marginal)(y),
        }
    }

    fn custom_fns(&self) -> &CustomUtility {
        self.custom
            .as_deref()
            .expect("custom family always carries its functions")
    }

    pub fn phi1_unchecked(&self, x: f64) -> f64 {
        self.u1(x) / self.u2(x)
    }

    pub fn phi3_unchecked(&self, x: f64) -> f64 {
        self.u3(x) / self.u2(x)
    }

    pub fn phi2_realline_unchecked(&self, x: f64) -> f64 {
        let u1 = self.u1(x);
        let u2 = self.u2(x);
        self.u3(x) * u1 * u1 / (u2 * u2 * u2)
    }

    pub fn phi2_halfline_unchecked(&self, x: f64) -> f64 {
        let u2 = self.u2(x);
        1.0 - 0.5 * self.u3(x) * self.u1(x) / (u2 * u2)
    }

    /// Domain-appropriate `phi2`.
    pub fn phi2_unchecked(&self, x: f64) -> f64 {
        match self.domain {
            Domain::RealLine => self.phi2_realline_unchecked(x),
            Domain::HalfLine => self.phi2_halfline_unchecked(x),
        }
    }

    /// `U'(x) / U''(x)`.
    pub fn phi1(&self, x: f64) -> Result<f64> {
        self.check("phi1", x)?;
        Ok(self.phi1_unchecked(x))
    }

    /// `U'''(x) |U'(x)|^2 / U''(x)^3`.
    pub fn phi2_realline(&self, x: f64) -> Result<f64> {
        if self.domain != Domain::RealLine {
            return Err(Error::WrongDomain {
                expected: "real-line",
            });
        }
        self.check("phi2_realline", x)?;
        Ok(self.phi2_realline_unchecked(x))
    }

    /// `1 - U'''(x) U'(x) / (2 U''(x)^2)`.
    pub fn phi2_halfline(&self, x: f64) -> Result<f64> {
        if self.domain != Domain::HalfLine {
            return Err(Error::WrongDomain {
                expected: "half-line",
            });
        }
        self.check("phi2_halfline", x)?;
        Ok(self.phi2_halfline_unchecked(x))
    }

    /// `U'''(x) / U''(x)`.
    pub fn phi3(&self, x: f64) -> Result<f64> {
        self.check("phi3", x)?;
        Ok(self.phi3_unchecked(x))
    }

    /// `-U'(x) / U''(x)`.
    pub fn risk_tolerance(&self, x: f64) -> Result<f64> {
        Ok(-self.phi1(x)?)
    }

    /// `-U'(x) / (x U''(x))`, for `x > 0`.
    pub fn relative_risk_tolerance(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Err(Error::Domain {
                what: "relative_risk_tolerance",
                x,
            });
        }
        Ok(-self.phi1(x)? / x)
    }

    /// Returns `kappa = 1/2 - c/2` when the risk tolerance `f = -U'/U''` has a
    /// constant slope `c` on the validation grid, `None` otherwise.
    pub fn hara_kappa(&self) -> Option<f64> {
        let slopes: Vec<f64> = self
            .grid
            .iter()
            .map(|&x| {
                let u2 = self.u2(x);
                -1.0 + self.u1(x) * self.u3(x) / (u2 * u2)
            })
            .collect();
        let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = slopes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return None;
        }
        let c = 0.5 * (lo + hi);
        if hi - lo <= HARA_TOL * c.abs().max(1.0) {
            Some(0.5 - 0.5 * c)
        } else {
            None
        }
    }

    /// `V(y) = sup_x { U(x) - x y } = U(I(y)) - y I(y)`.
    pub fn convex_conjugate(&self, y: f64) -> Result<f64> {
        if self.domain != Domain::HalfLine {
            return Err(Error::WrongDomain {
                expected: "half-line",
            });
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Domain {
                what: "convex_conjugate",
                x: y,
            });
        }
        let x = self.inverse_marginal(y);
        Ok(self.u0(x) - y * x)
    }

    /// Checks monotonicity, concavity, the inverse round trip and finite
    /// difference consistency of the derivatives on the validation grid.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::UtilityValidation(msg));
        for &x in &self.grid {
            let (u0, u1, u2, u3) = (self.u0(x), self.u1(x), self.u2(x), self.u3(x));
            if ![u0, u1, u2, u3].iter().all(|v| v.is_finite()) {
                return fail(format!("non-finite derivative at x = {x}"));
            }
            if u1 <= 0.0 {
                return fail(format!("U'({x}) = {u1} is not positive"));
            }
            if u2 >= 0.0 {
                return fail(format!("U''({x}) = {u2} is not negative"));
            }
            let back = self.inverse_marginal(u1);
            if !((back - x).abs() <= INVERSE_TOL * x.abs().max(1.0)) {
                return fail(format!("I(U'({x})) = {back}"));
            }

            let h = match self.domain {
                Domain::RealLine => 1e-5 * x.abs().max(1.0),
                Domain::HalfLine => 1e-5 * x,
            };
            type Scalar<'a> = &'a dyn Fn(f64) -> f64;
            let pairs: [(Scalar, f64, &str); 3] = [
                (&|s| self.u0(s), u1, "U'"),
                (&|s| self.u1(s), u2, "U''"),
                (&|s| self.u2(s), u3, "U'''"),
            ];
            for (f, exact, label) in pairs {
                let fd = (f(x + h) - f(x - h)) / (2.0 * h);
                let roundoff = 10.0 * f64::EPSILON * f(x).abs() / h;
                if (fd - exact).abs() > FD_REL_TOL * exact.abs() + roundoff {
                    return fail(format!(
                        "{label}({x}) = {exact} disagrees with finite difference {fd}"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// 101 points: `[-10, 10]` on the real line (clipped below the bliss point
/// for quadratic utility), geometric on `[1e-3, 10]` for the half line.
fn validation_grid(family: &Family, domain: Domain) -> Vec<f64> {
    let n = GRID_POINTS - 1;
    match domain {
        Domain::RealLine => {
            let hi = match family {
                Family::Quadratic { b } => 10.0f64.min(b - 0.01 * b.abs().max(1.0)),
                _ => 10.0,
            };
            (0..=n)
                .map(|i| -10.0 + (hi + 10.0) * i as f64 / n as f64)
                .collect()
        }
        Domain::HalfLine => {
            let (a, b) = (1e-3f64.ln(), 10f64.ln());
            (0..=n)
                .map(|i| (a + (b - a) * i as f64 / n as f64).exp())
                .collect()
        }
    }
}

/// Solves `g(x) = y` for strictly decreasing `g` by Newton on `ln g`, kept
/// inside an expanding bracket.
fn solve_decreasing(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    y: f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let target = y.ln();
    let h = |x: f64| g(x).ln() - target;
    let mut step = (hi - lo).max(1.0);
    while h(lo) < 0.0 {
        lo -= step;
        step *= 2.0;
    }
    step = (hi - lo).max(1.0);
    while h(hi) > 0.0 {
        hi += step;
        step *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let hx = h(x);
        if hx == 0.0 {
            return x;
        }
        if hx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = dg(x) / g(x);
        let mut next = x - hx / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-4 * x.abs().max(1.0);
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn phi1_examples() {
        let e = UtilityModel::exponential(1.0).unwrap();
        assert_relative_eq!(e.phi1(3.7).unwrap(), -1.0, epsilon = 1e-15);
        let p = UtilityModel::power(0.5).unwrap();
        assert_relative_eq!(p.phi1(1.0).unwrap(), -2.0, epsilon = 1e-15);
        let l = UtilityModel::log().unwrap();
        assert_relative_eq!(l.phi1(2.0).unwrap(), -2.0, epsilon = 1e-15);
        assert!(matches!(l.phi1(-1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn phi2_realline_examples() {
        let e1 = UtilityModel::exponential(1.0).unwrap();
        assert_relative_eq!(e1.phi2_realline(0.3).unwrap(), -1.0, epsilon = 1e-14);
        let e2 = UtilityModel::exponential(2.0).unwrap();
        assert_relative_eq!(e2.phi2_realline(-4.0).unwrap(), -0.5, epsilon = 1e-14);

        // Independent oracle: derivatives of U = -e^{-x} - e^{-2x} by finite differences.
        let m = UtilityModel::mixture_exp(1.0, 2.0).unwrap();
        let u = |x: f64| -(-x).exp() - (-2.0 * x).exp();
        let d1 = |x: f64| fd(u, x);
        let d2 = |x: f64| fd(d1, x);
        let d3 = |x: f64| fd(d2, x);
        let oracle = d3(0.0) * d1(0.0).powi(2) / d2(0.0).powi(3);
        assert_relative_eq!(m.phi2_realline(0.0).unwrap(), oracle, max_relative = 1e-4);
        assert_relative_eq!(m.phi2_realline(0.0).unwrap(), -0.648, epsilon = 1e-12);

        let p = UtilityModel::power(0.5).unwrap();
        assert!(matches!(p.phi2_realline(1.0), Err(Error::WrongDomain { .. })));
    }

    #[test]
    fn phi2_halfline_examples() {
        let p = UtilityModel::power(0.5).unwrap();
        assert_relative_eq!(p.phi2_halfline(2.5).unwrap(), -0.5, epsilon = 1e-13);
        let l = UtilityModel::log().unwrap();
        assert!(l.phi2_halfline(0.7).unwrap().abs() < 1e-14);
        let p9 = UtilityModel::power(0.9).unwrap();
        assert_relative_eq!(p9.phi2_halfline(1.3).unwrap(), -4.5, max_relative = 1e-12);
        assert!(matches!(p.phi2_halfline(0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn phi3_examples() {
        let e = UtilityModel::exponential(1.0).unwrap();
        assert_relative_eq!(e.phi3(0.0).unwrap(), -1.0, epsilon = 1e-15);
        // U''' / U'' = (gamma - 2) / x for U = x^gamma / gamma.
        let p = UtilityModel::power(0.5).unwrap();
        let u2 = |x: f64| -0.5 * x.powf(-1.5);
        assert_relative_eq!(p.phi3(1.0).unwrap(), fd(u2, 1.0) / u2(1.0), max_relative = 1e-8);
        assert_relative_eq!(p.phi3(1.0).unwrap(), -1.5, epsilon = 1e-14);
        let l = UtilityModel::log().unwrap();
        assert_relative_eq!(l.phi3(1.0).unwrap(), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn risk_tolerance_examples() {
        let e = UtilityModel::exponential(2.0).unwrap();
        assert_relative_eq!(e.risk_tolerance(1.0).unwrap(), 0.5, epsilon = 1e-15);
        let p = UtilityModel::power(0.5).unwrap();
        assert_relative_eq!(p.relative_risk_tolerance(3.0).unwrap(), 2.0, epsilon = 1e-14);
        let l = UtilityModel::log().unwrap();
        assert_relative_eq!(l.risk_tolerance(5.0).unwrap(), 5.0, epsilon = 1e-14);
    }

    #[test]
    fn hara_kappa_examples() {
        let k = UtilityModel::power(0.5).unwrap().hara_kappa().unwrap();
        assert_relative_eq!(k, -0.5, epsilon = 1e-10);
        let k = UtilityModel::exponential(3.0).unwrap().hara_kappa().unwrap();
        assert_relative_eq!(k, 0.5, epsilon = 1e-12);
        let k = UtilityModel::log().unwrap().hara_kappa().unwrap();
        assert!(k.abs() < 1e-10);
        let k = UtilityModel::quadratic(20.0).unwrap().hara_kappa().unwrap();
        assert_relative_eq!(k, 1.0, epsilon = 1e-12);
        assert!(UtilityModel::mixture_exp(1.0, 2.0)
            .unwrap()
            .hara_kappa()
            .is_none());
        assert!(UtilityModel::mixture_power(0.3, 0.7)
            .unwrap()
            .hara_kappa()
            .is_none());
    }

    #[test]
    fn hara_kappa_matches_halfline_phi2_for_power() {
        for gamma in [-1.0, 0.2, 0.5, 0.75] {
            let p = UtilityModel::power(gamma).unwrap();
            assert_relative_eq!(
                p.hara_kappa().unwrap(),
                p.phi2_halfline(1.0).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn convex_conjugate_examples() {
        let p = UtilityModel::power(0.5).unwrap();
        assert_relative_eq!(p.convex_conjugate(2.0).unwrap(), 0.5, epsilon = 1e-14);
        let l = UtilityModel::log().unwrap();
        assert_relative_eq!(l.convex_conjugate(1.0).unwrap(), -1.0, epsilon = 1e-14);
        for u in [p, l, UtilityModel::mixture_power(0.3, 0.6).unwrap()] {
            let v = u.convex_conjugate(u.u1(1.0)).unwrap();
            assert_relative_eq!(v, u.u0(1.0) - u.u1(1.0), epsilon = 1e-12);
        }
        assert!(UtilityModel::log().unwrap().convex_conjugate(0.0).is_err());
        assert!(UtilityModel::exponential(1.0)
            .unwrap()
            .convex_conjugate(1.0)
            .is_err());
    }

    #[test]
    fn classical_families_have_constant_phi2() {
        let models = [
            UtilityModel::exponential(1.5).unwrap(),
            UtilityModel::power(0.3).unwrap(),
            UtilityModel::log().unwrap(),
            UtilityModel::quadratic(15.0).unwrap(),
        ];
        for u in &models {
            let v0 = u.phi2_unchecked(u.grid()[0]);
            for &x in u.grid() {
                assert!((u.phi2_unchecked(x) - v0).abs() <= 1e-10 * v0.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mixture_inverse_round_trips() {
        let m = UtilityModel::mixture_exp(1.0, 2.0).unwrap();
        for x in [-10.0, -1.0, 0.0, 0.3, 5.0, 10.0] {
            assert_relative_eq!(m.inverse_marginal(m.u1(x)), x, epsilon = 1e-12);
        }
        let m = UtilityModel::mixture_power(0.2, 0.8).unwrap();
        for x in [1e-3, 0.5, 1.0, 7.0] {
            assert_relative_eq!(m.inverse_marginal(m.u1(x)), x, max_relative = 1e-12);
        }
    }

    #[test]
    fn custom_utility_validation() {
        let good = CustomUtility {
            name: "exp2".into(),
            domain: Domain::RealLine,
            u0: Arc::new(|x| -(-2.0 * x).exp()),
            u1: Arc::new(|x| 2.0 * (-2.0 * x).exp()),
            u2: Arc::new(|x| -4.0 * (-2.0 * x).exp()),
            u3: Arc::new(|x| 8.0 * (-2.0 * x).exp()),
            inverse_marginal: Arc::new(|y| -(y / 2.0).ln() / 2.0),
        };
        let u = UtilityModel::custom(good.clone()).unwrap();
        assert_relative_eq!(u.phi2_realline(1.0).unwrap(), -0.5, epsilon = 1e-14);

        let mut bad = good;
        bad.u3 = Arc::new(|x| 7.0 * (-2.0 * x).exp());
        assert!(matches!(
            UtilityModel::custom(bad),
            Err(Error::UtilityValidation(_))
        ));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(UtilityModel::exponential(0.0).is_err());
        assert!(UtilityModel::power(1.0).is_err());
        assert!(UtilityModel::power(0.0).is_err());
        assert!(UtilityModel::mixture_power(0.5, 1.2).is_err());
    }

    proptest! {
        #[test]
        fn fenchel_inequality(x in 0.01f64..20.0, y in 0.01f64..20.0, gamma in 0.1f64..0.9) {
            let u = UtilityModel::power(gamma).unwrap();
            let v = u.convex_conjugate(y).unwrap();
            prop_assert!(v >= u.u0(x) - x * y - 1e-9 * (1.0 + v.abs()));
            let at = u.convex_conjugate(u.u1(x)).unwrap();
            prop_assert!((at - (u.u0(x) - x * u.u1(x))).abs() <= 1e-9 * (1.0 + at.abs()));
        }

        #[test]
        fn phi2_halfline_from_raw_derivatives(x in 1e-2f64..10.0, g1 in 0.1f64..0.45, g2 in 0.55f64..0.9) {
            let u = UtilityModel::mixture_power(g1, g2).unwrap();
            let raw = 1.0 - 0.5 * u.u3(x) * u.u1(x) / (u.u2(x) * u.u2(x));
            prop_assert_eq!(u.phi2_halfline(x).unwrap(), raw);
        }

        #[test]
        fn mixture_exp_inverse(x in -10.0f64..10.0, a1 in 0.2f64..3.0, a2 in 0.2f64..3.0) {
            let u = UtilityModel::mixture_exp(a1, a2).unwrap();
            prop_assert!((u.inverse_marginal(u.u1(x)) - x).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }
}
