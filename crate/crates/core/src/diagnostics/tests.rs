use super::*;
use crate::fbsde::{solve, Endowment, NumericsConfig};
use crate::market::{build_market, Theta};
use crate::utility::UtilityModel;
use crate::Error;

fn numerics(n: usize, m: usize, seed: u64) -> NumericsConfig {
    NumericsConfig {
        n_steps: n,
        n_paths: m,
        seed,
        ..NumericsConfig::default()
    }
}

fn merton(u: UtilityModel, x0: f64) -> ProblemSpec {
    let market = build_market(1, 0, Theta::constant([0.2]), 1.0).unwrap();
    ProblemSpec::new(market, u, x0, Endowment::None).unwrap()
}

fn failures(checks: &[CheckResult]) -> Vec<&CheckResult> {
    checks.iter().filter(|c| !c.passed).collect()
}

#[test]
fn pass_rule_and_recompute() {
    let c = CheckResult::statistical("s", 0.29, 0.1, 3.0);
    assert!(c.passed && c.recompute());
    let c = CheckResult::statistical("s", -0.31, 0.1, 3.0);
    assert!(!c.passed && !c.recompute());
    let c = CheckResult::deterministic("d", 1e-13, 1e-12);
    assert!(c.passed);
    assert_eq!(c.kind, CheckKind::Deterministic);
    assert!(!CheckResult::deterministic("d", f64::NAN, 1.0).passed);
    let json = serde_json::to_value(&c).unwrap();
    assert_eq!(json["kind"], "deterministic");
    let back: CheckResult = serde_json::from_value(json).unwrap();
    assert_eq!(back, c);
}

#[test]
fn bonferroni_multiplier() {
    assert_eq!(bonferroni_z(3.0, 1), 3.0);
    let z10 = bonferroni_z(3.0, 10);
    let tail = 1.0 - Normal::standard().cdf(3.0);
    assert!((1.0 - Normal::standard().cdf(z10) - tail / 10.0).abs() <= 1e-12);
    assert!(bonferroni_z(3.0, 100) > z10);
}

#[test]
fn thinning() {
    assert_eq!(thinned_nodes(64), vec![0, 8, 16, 24, 32, 40, 48, 56]);
    assert_eq!(thinned_nodes(2), vec![0]);
    assert_eq!(thinned_nodes(9), vec![0, 4]);
}

#[test]
fn report_is_conjunction() {
    let ok = CheckResult::deterministic("a", 0.0, 0.0);
    let bad = CheckResult::deterministic("b", 1.0, 0.0);
    assert!(DiagnosticsReport::new(vec![ok.clone()], Provenance::default()).passed);
    let r = DiagnosticsReport::new(vec![ok, bad], Provenance::default());
    assert!(!r.passed);
    assert_eq!(r.failures().count(), 1);
    assert!(!DiagnosticsReport::new(vec![], Provenance::default()).passed);
}

#[test]
fn exponential_merton_verifies() {
    let s = merton(UtilityModel::exponential(1.0).unwrap(), 0.0);
    let sol = solve(&s, &numerics(32, 5_000, 1)).unwrap();
    let checks = verify(&sol, &s, &VerifyOptions::default()).unwrap();
    assert!(checks.iter().any(|c| c.name.starts_with("first_order")));
    assert!(checks.iter().any(|c| c.name.starts_with("merton")));
    assert!(failures(&checks).is_empty(), "{:#?}", failures(&checks));
}

#[test]
fn power_merton_verifies() {
    let s = merton(UtilityModel::power(0.5).unwrap(), 1.0);
    let sol = solve(&s, &numerics(32, 5_000, 2)).unwrap();
    let checks = verify(&sol, &s, &VerifyOptions::default()).unwrap();
    for prefix in ["cole_hopf", "dual", "wealth_deflator", "merton"] {
        assert!(checks.iter().any(|c| c.name.starts_with(prefix)), "{prefix}");
    }
    assert!(failures(&checks).is_empty(), "{:#?}", failures(&checks));
}

#[test]
fn log_merton_verifies() {
    let market = build_market(1, 0, Theta::function(1, |t| vec![0.1 + 0.1 * t]), 1.0).unwrap();
    let s = ProblemSpec::new(market, UtilityModel::log().unwrap(), 1.0, Endowment::None).unwrap();
    let sol = solve(&s, &numerics(32, 5_000, 3)).unwrap();
    let checks = verify(&sol, &s, &VerifyOptions::default()).unwrap();
    assert!(failures(&checks).is_empty(), "{:#?}", failures(&checks));
}

#[test]
fn cole_hopf_exact_parts() {
    let s = merton(UtilityModel::power(0.5).unwrap(), 1.0);
    let sol = solve(&s, &numerics(16, 1_000, 4)).unwrap();
    let checks = cole_hopf_check(&sol, &s, 3.0).unwrap();
    assert_eq!(checks[0].statistic, 0.0);
    let ham = checks.iter().find(|c| c.name == "cole_hopf.hamiltonian").unwrap();
    assert!(ham.statistic <= 1e-10);
    let exp = merton(UtilityModel::exponential(1.0).unwrap(), 0.0);
    let sol = solve(&exp, &numerics(8, 500, 4)).unwrap();
    assert!(matches!(
        cole_hopf_check(&sol, &exp, 3.0),
        Err(Error::NotApplicable(_))
    ));
}

#[test]
fn dual_identities_for_complete_market() {
    let s = merton(UtilityModel::power(0.5).unwrap(), 1.0);
    let sol = solve(&s, &numerics(16, 2_000, 5)).unwrap();
    let checks = dual_consistency_check(&sol, &s, &RegressionBasis::default(), 3.0).unwrap();
    assert_eq!(checks[0].statistic, 0.0);
    for c in checks
        .iter()
        .filter(|c| c.name.starts_with("dual.representation"))
    {
        assert!(c.statistic.abs() <= 1e-12, "{c:?}");
    }
    assert_eq!(checks.last().unwrap().statistic, 0.0);
    assert!(failures(&checks).is_empty(), "{:#?}", failures(&checks));
}

#[test]
fn merton_benchmark_rejects_endowment() {
    let market = build_market(1, 0, Theta::constant([0.2]), 1.0).unwrap();
    let h = Endowment::Linear {
        component: 0,
        level: 0.0,
        slope: 1.0,
    };
    let s = ProblemSpec::new(market, UtilityModel::exponential(1.0).unwrap(), 0.0, h).unwrap();
    let sol = solve(&s, &numerics(8, 500, 6)).unwrap();
    assert!(matches!(
        merton_benchmark(&s, &sol, 0.05),
        Err(Error::NotApplicable(_))
    ));
}

#[test]
fn power_ladder_is_exact() {
    let s = merton(UtilityModel::power(0.5).unwrap(), 1.0);
    let ladder = [(4, 500), (8, 500), (16, 500)];
    let t = convergence_study(&s, SolverId::Auto, &ladder, &numerics(16, 500, 7), Some(0.02)).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.exact, "{t:?}");
    assert!(t.passes(0.4));
    let again = convergence_study(&s, SolverId::Auto, &ladder, &numerics(16, 500, 7), Some(0.02)).unwrap();
    assert_eq!(t, again);
}

#[test]
fn ladder_uses_common_paths() {
    let s = merton(UtilityModel::mixture_exp(1.0, 2.0).unwrap(), 0.0);
    let ladder = [(8, 1_000), (16, 1_000)];
    let t = convergence_study(&s, SolverId::Auto, &ladder, &numerics(16, 1_000, 8), None).unwrap();
    assert_eq!(t.reference, "finest");
    assert!(t.rows[1].error.is_none());
    assert!(t.rows[0].error.unwrap() < 5e-3);
    assert!(convergence_study(
        &s,
        SolverId::Auto,
        &[(3, 100), (8, 100)],
        &numerics(8, 100, 0),
        None
    )
    .is_err());
}
