//! Concrete drivers for the backward equations.
//!
//! Every driver splits `z` and `theta` at `d1`: only the hedgeable part of
//! `theta` ever enters, and `z . theta^H = z^H . theta^H`.

use std::sync::Arc;

use super::{Driver, DriverArgs, ZDependence};
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::utility::{Domain, UtilityModel};

fn hedgeable_theta2(theta: &[f64], d1: usize) -> f64 {
    theta[..d1].iter().map(|v| v * v).sum()
}

fn require(u: &UtilityModel, domain: Domain) -> Result<()> {
    if u.domain() == domain {
        Ok(())
    } else {
        Err(Error::WrongDomain {
            expected: match domain {
                Domain::RealLine => "real-line",
                Domain::HalfLine => "half-line",
            },
        })
    }
}

/// `f(t, p, z) = -1/2 |theta|^2 phi2(p) + |theta|^2 phi1(p) + z . theta`,
/// reading `p = state[0]`.
pub fn driver_lipschitz_realline(u: &UtilityModel, market: &MarketModel) -> Result<Driver> {
    require(u, Domain::RealLine)?;
    let u = Arc::new(u.clone());
    let d1 = market.d1();
    Ok(Driver::new(
        "lipschitz_realline",
        ZDependence::Linear,
        "P",
        Some(market),
        move |a: &DriverArgs| {
            let p = a.state[0];
            let th2 = hedgeable_theta2(a.theta, d1);
            let zt: f64 = a.z[..d1].iter().zip(&a.theta[..d1]).map(|(z, t)| z * t).sum();
            -0.5 * th2 * u.phi2_realline_unchecked(p) + th2 * u.phi1_unchecked(p) + zt
        },
    ))
}

/// `f(t, x, z) = |z^H + theta^H|^2 phi2(x) - 1/2 |z|^2` with the half-line
/// `phi2`, reading `x = state[0]`. Returns NaN for `x <= 0`.
pub fn driver_halfline(u: &UtilityModel, market: &MarketModel) -> Result<Driver> {
    require(u, Domain::HalfLine)?;
    let u = Arc::new(u.clone());
    let d1 = market.d1();
    Ok(Driver::new(
        "halfline",
        ZDependence::Quadratic,
        "X",
        Some(market),
        move |a: &DriverArgs| {
            let x = a.state[0];
            if !(x > 0.0) {
                return f64::NAN;
            }
            halfline_value(u.phi2_halfline_unchecked(x), a.z, a.theta, d1)
        },
    ))
}

fn halfline_value(phi2: f64, z: &[f64], theta: &[f64], d1: usize) -> f64 {
    let zt2: f64 = z[..d1]
        .iter()
        .zip(&theta[..d1])
        .map(|(z, t)| (z + t) * (z + t))
        .sum();
    let z2: f64 = z.iter().map(|v| v * v).sum();
    phi2 * zt2 - 0.5 * z2
}

/// `g(t, z) = -1/2 |z|^2 + kappa |z^H + theta^H|^2`, state free.
pub fn driver_hara(kappa: f64, market: &MarketModel) -> Driver {
    let d1 = market.d1();
    Driver::new(
        "hara",
        ZDependence::Quadratic,
        "",
        Some(market),
        move |a: &DriverArgs| halfline_value(kappa, a.z, a.theta, d1),
    )
}

/// Incomplete real-line driver evaluated at `p = x + y` with `x = state[0]`:
/// `-1/2 |theta^H|^2 phi2(p) + |theta^H|^2 phi1(p) + z^H . theta^H - 1/2 |z^O|^2 phi3(p)`.
pub fn driver_incomplete_realline(u: &UtilityModel, market: &MarketModel) -> Result<Driver> {
    require(u, Domain::RealLine)?;
    let u = Arc::new(u.clone());
    let d1 = market.d1();
    Ok(Driver::new(
        "incomplete_realline",
        ZDependence::Quadratic,
        "X+Y",
        Some(market),
        move |a: &DriverArgs| {
            let p = a.state[0] + a.y;
            let th2 = hedgeable_theta2(a.theta, d1);
            let zt: f64 = a.z[..d1].iter().zip(&a.theta[..d1]).map(|(z, t)| z * t).sum();
            let zo2: f64 = a.z[d1..].iter().map(|v| v * v).sum();
            -0.5 * th2 * u.phi2_realline_unchecked(p) + th2 * u.phi1_unchecked(p) + zt
                - 0.5 * zo2 * u.phi3_unchecked(p)
        },
    ))
}
