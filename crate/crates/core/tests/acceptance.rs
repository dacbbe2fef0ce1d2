//! Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Targets are computed here from closed forms.

use std::path::Path;
use std::time::Instant;

use fbsde_core::app::{cmd_solve, cmd_verify, LoadedConfig, Overrides};
use fbsde_core::diagnostics::{
    cole_hopf_check, cole_hopf_residual_rms, default_perturbations, dual_consistency_check,
    first_order_condition_test, first_order_condition_test_wealth, CheckResult,
};
use fbsde_core::fbsde::{
    sample_for, solve, solve_complete_realline_on, solve_incomplete_picard_on, solve_on,
    solve_power_endowment, Endowment, FbsdeSolution, NumericsConfig, ProblemSpec, Status,
};
use fbsde_core::market::{build_market, Theta};
use fbsde_core::paths::{wealth_amount, StatePaths};
use fbsde_core::utility::{Domain, UtilityModel};

type Outcome = Result<(bool, String), String>;

struct Harness {
    failures: usize,
    /// Solver outputs collected for the strategy identity criterion.
    solutions: Vec<(String, ProblemSpec, FbsdeSolution)>,
}

impl Harness {
    fn record(&mut self, name: &str, outcome: Outcome) {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            self.failures += 1;
        }
        println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn keep(&mut self, name: &str, spec: &ProblemSpec, sol: &FbsdeSolution) {
        self.solutions.push((name.to_string(), spec.clone(), sol.clone()));
    }
}

fn numerics(n_steps: usize, n_paths: usize, seed: u64) -> NumericsConfig {
    NumericsConfig {
        n_steps,
        n_paths,
        seed,
        ..NumericsConfig::default()
    }
}

fn flat(theta: &[f64], d1: usize, d2: usize) -> ProblemMarket {
    ProblemMarket {
        d1,
        d2,
        theta: theta.to_vec(),
    }
}

struct ProblemMarket {
    d1: usize,
    d2: usize,
    theta: Vec<f64>,
}

fn spec(m: ProblemMarket, u: UtilityModel, x0: f64, h: Endowment) -> ProblemSpec {
    let market = build_market(m.d1, m.d2, Theta::constant(m.theta), 1.0).unwrap();
    ProblemSpec::new(market, u, x0, h).unwrap()
}

fn max_rel_dev(pi: &StatePaths, target: impl Fn(usize) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..pi.n_nodes() {
        let t = target(k);
        for v in pi.node(k) {
            worst = worst.max((v - t).abs() / t.abs());
        }
    }
    worst
}

fn err(e: fbsde_core::Error) -> String {
    e.to_string()
}

fn within_se(c: &CheckResult, z: f64) -> bool {
    c.statistic.is_finite() && c.statistic.abs() <= z * c.se
}

fn merton_recovery(h: &mut Harness) {
    let exp = spec(
        flat(&[0.2], 1, 0),
        UtilityModel::exponential(1.0).unwrap(),
        0.0,
        Endowment::None,
    );
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let clock = Instant::now();
    let sol = pool.install(|| solve(&exp, &numerics(64, 20_000, 0)));
    let elapsed = clock.elapsed().as_secs_f64();
    let outcome = sol.map_err(err).map(|sol| {
        // pi* = theta / alpha
        let dev = max_rel_dev(&sol.pi_star[0], |_| 0.2 / 1.0);
        h.keep("exponential", &exp, &sol);
        (
            dev <= 0.05 && elapsed < 30.0,
            format!("max rel dev {dev:.3e} (<= 5e-2), single-thread {elapsed:.2}s (< 30s)"),
        )
    });
    h.record("merton exponential amount", outcome);

    let power = spec(
        flat(&[0.2], 1, 0),
        UtilityModel::power(0.5).unwrap(),
        1.0,
        Endowment::None,
    );
    let outcome = solve(&power, &numerics(64, 20_000, 0)).map_err(err).map(|sol| {
        let (gamma, theta) = (0.5, 0.2);
        let dev = max_rel_dev(&sol.pi_star[0], |_| theta / (1.0 - gamma));
        // constant driver: Y_0 = gamma theta^2 T / (2 (1 - gamma))
        let y0 = gamma * theta * theta / (2.0 * (1.0 - gamma));
        let gap = (sol.y0() - y0).abs();
        h.keep("power", &power, &sol);
        (
            dev <= 0.05 && gap <= 2e-3,
            format!("max rel dev {dev:.3e} (<= 5e-2), |Y0 - {y0}| = {gap:.3e} (<= 2e-3)"),
        )
    });
    h.record("merton power proportion", outcome);

    let theta = |t: f64| 0.1 + 0.1 * t;
    let market = build_market(1, 0, Theta::function(1, move |t| vec![theta(t)]), 1.0).unwrap();
    let log = ProblemSpec::new(market, UtilityModel::log().unwrap(), 1.0, Endowment::None).unwrap();
    let outcome = solve(&log, &numerics(64, 20_000, 0)).map_err(err).map(|sol| {
        let dt = sol.bundle.grid().dt();
        let dev = max_rel_dev(&sol.pi_star[0], |k| theta(k as f64 * dt));
        h.keep("log", &log, &sol);
        (
            dev <= 0.05,
            format!("max rel dev from theta(t) {dev:.3e} (<= 5e-2)"),
        )
    });
    h.record("merton log time-varying theta", outcome);
}

/// `Y_0 = P_0 - x0` where `P_0` solves the budget equation
/// `E[E_T I(U'(P_0) E_T)] = x0`; Simpson's rule over the normal density.
fn budget_oracle(u: &UtilityModel, theta: f64, x0: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (-12.0f64, 12.0f64);
    let h = (b - a) / n as f64;
    let budget = |p0: f64| {
        let c = u.u1(p0);
        let mut s = 0.0;
        for j in 0..=n {
            let z = a + j as f64 * h;
            let w = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let e = (-theta * z - 0.5 * theta * theta).exp();
            s += w * (-0.5 * z * z).exp() * e * u.inverse_marginal(c * e);
        }
        s * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt() - x0
    };
    let (mut lo, mut hi) = (x0 - 5.0, x0 + 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if budget(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) - x0
}

fn fixed_point_mixture(h: &mut Harness) {
    let u = UtilityModel::mixture_exp(1.0, 2.0).unwrap();
    let s = spec(flat(&[0.2], 1, 0), u.clone(), 0.0, Endowment::None);
    let mut y0s = Vec::new();
    let mut worst_fp: f64 = 0.0;
    let mut all_converged = true;
    for seed in 0..5 {
        match solve(&s, &numerics(64, 20_000, seed)) {
            Ok(sol) => {
                all_converged &= sol.status == Status::Converged;
                worst_fp = worst_fp.max(sol.fixed_point_residual().unwrap_or(f64::INFINITY));
                y0s.push(sol.y0());
                if seed == 0 {
                    h.keep("mixture", &s, &sol);
                }
            }
            Err(e) => return h.record("fixed point mixture", Err(err(e))),
        }
    }
    let spread = y0s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - y0s.iter().cloned().fold(f64::INFINITY, f64::min);
    h.record(
        "fixed point mixture",
        Ok((
            all_converged && worst_fp <= 1e-3 && spread <= 2e-3,
            format!(
                "converged on 5 seeds: {all_converged}, max |Y0 - m*| {worst_fp:.3e} (<= 1e-3), \
                 seed spread {spread:.3e} (<= 2e-3)"
            ),
        )),
    );
    let target = budget_oracle(&u, 0.2, 0.0);
    let mean = y0s.iter().sum::<f64>() / y0s.len() as f64;
    h.record(
        "fixed point mixture against budget equation",
        Ok((
            (mean - target).abs() <= 2e-3,
            format!("mean Y0 {mean:.6e}, quadrature {target:.6e} (|diff| <= 2e-3)"),
        )),
    );
}

fn martingale_identities(h: &mut Harness) {
    let (gamma, theta) = (0.5, 0.2);
    let outcome = match h.solutions.iter().find(|(n, _, _)| n == "power") {
        Some((_, _, sol)) => {
            let u = UtilityModel::power(gamma).unwrap();
            let g = sol.bundle.grid();
            let m_star = sol.m_star.unwrap_or(f64::NAN);
            let mut worst: f64 = 0.0;
            for k in 0..g.n_nodes() {
                let t = g.t(k);
                for (j, w) in sol.bundle.w(k, 0).iter().enumerate() {
                    let lhs = u.u1(sol.x.get(k, j)) * sol.y.get(k, j).exp();
                    let rhs = u.u1(1.0) * m_star.exp() * (-theta * w - 0.5 * theta * theta * t).exp();
                    worst = worst.max((lhs / rhs - 1.0).abs());
                }
            }
            Ok((worst <= 1e-12, format!("max relative gap {worst:.3e} (<= 1e-12)")))
        }
        None => Err("power solution unavailable".to_string()),
    };
    h.record("half-line marginal utility identity", outcome);

    let u = UtilityModel::mixture_exp(1.0, 2.0).unwrap();
    let s = spec(flat(&[theta], 1, 0), u.clone(), 0.0, Endowment::None);
    let outcome = (|| {
        let fine = sample_for(&s, &numerics(128, 20_000, 0)).map_err(err)?;
        let mut errs = Vec::new();
        for factor in [4, 2, 1] {
            let b = fine.coarsen(factor).map_err(err)?;
            // The fixed point is solved well below the discretization error,
            // which is the quantity under study.
            let n = NumericsConfig {
                fp_tolerance: 1e-6,
                ..numerics(128 / factor, 20_000, 0)
            };
            let sol = solve_on(&b, &s, &n).map_err(err)?;
            let g = b.grid();
            let base = u.u1(s.x0 + sol.y0());
            let (mut sum, mut count) = (0.0, 0usize);
            for k in 0..g.n_nodes() {
                let t = g.t(k);
                for (j, w) in b.w(k, 0).iter().enumerate() {
                    let e = (-theta * w - 0.5 * theta * theta * t).exp();
                    let r = u.u1(sol.x.get(k, j) + sol.y.get(k, j)) / (base * e) - 1.0;
                    sum += r * r;
                    count += 1;
                }
            }
            errs.push((sum / count as f64).sqrt());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        let ok = (1.1..=2.0).contains(&r1) && (1.1..=2.0).contains(&r2);
        Ok((
            ok,
            format!(
                "relative RMS N=32,64,128: {:.3e}, {:.3e}, {:.3e}; ratios {r1:.3}, {r2:.3} (in [1.1, 2.0])",
                errs[0], errs[1], errs[2]
            ),
        ))
    })();
    h.record("real-line marginal utility identity refinement", outcome);
}

fn first_order(h: &mut Harness) {
    let s = spec(
        flat(&[0.2], 1, 0),
        UtilityModel::exponential(1.0).unwrap(),
        0.0,
        Endowment::None,
    );
    let outcome = (|| {
        let sol = solve(&s, &numerics(64, 100_000, 0)).map_err(err)?;
        let perts = default_perturbations(sol.bundle.grid(), 1, 7);
        let checks = first_order_condition_test(&sol, &s, &perts, 3.0).map_err(err)?;
        let worst = checks
            .iter()
            .map(|c| c.statistic.abs() / c.se)
            .fold(0.0, f64::max);
        let optimal_ok = checks.len() == 6 && checks.iter().all(|c| within_se(c, 3.0));

        let shifted = sol.pi_star[0].map(|v| v + 0.5);
        let x = wealth_amount(&sol.bundle, &s.market, &[shifted], s.x0).map_err(err)?;
        let bad =
            first_order_condition_test_wealth(x.terminal(), &sol.endowment, &sol.bundle, &s, &perts, 3.0)
                .map_err(err)?;
        let rejected = bad.iter().filter(|c| !within_se(c, 3.0)).count();
        Ok((
            optimal_ok && rejected > 0,
            format!(
                "optimal: {} perturbations, max |stat|/SE {worst:.2} (<= 3); shifted by 0.5: {rejected} of {} rejected",
                checks.len(),
                bad.len()
            ),
        ))
    })();
    h.record("first-order optimality", outcome);
}

fn power_endowment_spec() -> ProblemSpec {
    spec(
        flat(&[0.2, 0.0], 1, 1),
        UtilityModel::power(0.5).unwrap(),
        10.0,
        Endowment::AffineTanh {
            component: 1,
            level: 1.0,
            scale: 0.5,
        },
    )
}

fn duality(h: &mut Harness) {
    let s = power_endowment_spec();
    let outcome = (|| {
        let mut energies = Vec::new();
        let mut detail = String::new();
        let mut ok = true;
        for seed in [0, 1] {
            let n = numerics(32, 100_000, seed);
            let b = sample_for(&s, &n).map_err(err)?;
            let sol = solve_incomplete_picard_on(&b, &s, &n).map_err(err)?;
            let checks = dual_consistency_check(&sol, &s, &n.basis, 3.0).map_err(err)?;
            let get = |name: &str| checks.iter().find(|c| c.name == name).cloned();
            let initial = get("dual.initial").ok_or("missing dual.initial")?;
            let budget = get("dual.budget").ok_or("missing dual.budget")?;
            let reps: Vec<&CheckResult> = checks
                .iter()
                .filter(|c| c.name.starts_with("dual.representation"))
                .collect();
            let rep_worst = reps.iter().map(|c| c.statistic.abs() / c.se).fold(0.0, f64::max);
            let energy = sol.orthogonal_energy(1);
            ok &= initial.statistic == 0.0
                && within_se(&budget, 3.0)
                && !reps.is_empty()
                && reps.iter().all(|c| within_se(c, 3.0))
                && energy.is_finite();
            energies.push(energy);
            if seed == 0 {
                detail = format!(
                    "Y*_0 gap {:.1e}, budget {:.3e} (SE {:.3e}), representation max |stat|/SE {rep_worst:.2}",
                    initial.statistic, budget.statistic, budget.se
                );
                h.keep("picard half line", &s, &sol);
            }
        }
        let rel = (energies[0] - energies[1]).abs() / (0.5 * (energies[0] + energies[1]));
        Ok((
            ok && rel <= 0.1,
            format!(
                "{detail}; orthogonal energy {:.4e}, {:.4e} (seed change {rel:.3} <= 0.1)",
                energies[0], energies[1]
            ),
        ))
    })();
    h.record("duality", outcome);
}

fn terminal_gap(sol: &FbsdeSolution, gamma: f64) -> f64 {
    sol.x
        .terminal()
        .iter()
        .zip(&sol.endowment)
        .zip(sol.y.terminal())
        .map(|((x, hh), y)| {
            let target = (gamma - 1.0) * (1.0 + hh / x).ln();
            (y - target).abs() / target.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

fn power_endowment_terminal(h: &mut Harness) {
    let outcome = (|| {
        let mut detail = Vec::new();
        let mut ok = true;
        let complete = spec(
            flat(&[0.2], 1, 0),
            UtilityModel::power(0.5).unwrap(),
            10.0,
            Endowment::AffineTanh {
                component: 0,
                level: 1.0,
                scale: 0.5,
            },
        );
        let sol = solve_power_endowment(&complete, &numerics(32, 20_000, 0)).map_err(err)?;
        let gap = terminal_gap(&sol, 0.5);
        ok &= gap <= 1e-12;
        detail.push(format!("complete {gap:.2e}"));
        h.keep("power endowment complete", &complete, &sol);
        if let Some((_, _, sol)) = h.solutions.iter().find(|(n, _, _)| n == "picard half line") {
            let gap = terminal_gap(sol, 0.5);
            ok &= gap <= 1e-12;
            detail.push(format!("incomplete {gap:.2e}"));
        }
        Ok((ok, format!("max terminal gap {} (<= 1e-12)", detail.join(", "))))
    })();
    h.record("power endowment terminal identity", outcome);
}

fn picard(h: &mut Harness) {
    let outcome = (|| {
        let u = UtilityModel::exponential(1.0).unwrap();
        let hedgeable = Endowment::AffineTanh {
            component: 0,
            level: 0.0,
            scale: 0.5,
        };
        let full = spec(flat(&[0.2, 0.0], 1, 1), u.clone(), 0.0, hedgeable.clone());
        let reduced = spec(flat(&[0.2], 1, 0), u, 0.0, hedgeable);
        let n = numerics(32, 20_000, 0);
        let b = sample_for(&full, &n).map_err(err)?;
        let p = solve_incomplete_picard_on(&b, &full, &n).map_err(err)?;
        let c = solve_complete_realline_on(&b.select(&[0]).map_err(err)?, &reduced, &n).map_err(err)?;
        let gap = (p.y0() - c.y0()).abs();
        h.keep("picard real line embedding", &full, &p);
        h.keep("complete real line endowment", &reduced, &c);
        Ok((
            gap <= 5e-3 && p.status == Status::Converged,
            format!(
                "Picard Y0 {:.6e}, complete Y0 {:.6e}, gap {gap:.3e} (<= 5e-3)",
                p.y0(),
                c.y0()
            ),
        ))
    })();
    h.record("picard embedding", outcome);

    let outcome = (|| {
        let sol = match h.solutions.iter().find(|(n, _, _)| n == "picard half line") {
            Some((_, _, sol)) => sol.clone(),
            None => return Err("incomplete solution unavailable".to_string()),
        };
        let real = spec(
            flat(&[0.2, 0.0], 1, 1),
            UtilityModel::exponential(1.0).unwrap(),
            0.0,
            Endowment::AffineTanh {
                component: 1,
                level: 0.0,
                scale: 0.5,
            },
        );
        let n = numerics(32, 20_000, 0);
        let b = sample_for(&real, &n).map_err(err)?;
        let rl = solve_incomplete_picard_on(&b, &real, &n).map_err(err)?;
        h.keep("picard real line orthogonal", &real, &rl);
        let mut ok = true;
        let mut detail = Vec::new();
        for (name, sol) in [("half line", &sol), ("real line", &rl)] {
            let r = &sol.log.picard_residuals;
            let monotone = r.windows(2).all(|w| w[1] <= w[0]);
            let honest = matches!(sol.status, Status::Converged | Status::MaxIterations);
            ok &= monotone && honest && !r.is_empty();
            detail.push(format!(
                "{name}: {:?} after {} passes, monotone {monotone}",
                sol.status,
                r.len()
            ));
        }
        Ok((ok, detail.join("; ")))
    })();
    h.record("picard orthogonal endowment", outcome);
}

fn cole_hopf(h: &mut Harness) {
    let s = spec(
        flat(&[0.2], 1, 0),
        UtilityModel::power(0.5).unwrap(),
        1.0,
        Endowment::None,
    );
    let outcome = (|| {
        let fine = sample_for(&s, &numerics(128, 20_000, 0)).map_err(err)?;
        let mut rms = Vec::new();
        let mut terminal_exact = true;
        let mut hamiltonian: f64 = 0.0;
        for factor in [8, 4, 2, 1] {
            let b = fine.coarsen(factor).map_err(err)?;
            let sol = solve_on(&b, &s, &numerics(128 / factor, 20_000, 0)).map_err(err)?;
            let checks = cole_hopf_check(&sol, &s, 3.0).map_err(err)?;
            for c in &checks {
                match c.name.as_str() {
                    "cole_hopf.terminal" => terminal_exact &= c.statistic == 0.0,
                    "cole_hopf.hamiltonian" => hamiltonian = hamiltonian.max(c.statistic),
                    _ => {}
                }
            }
            rms.push((b.grid().dt(), cole_hopf_residual_rms(&sol, &s).map_err(err)?));
        }
        // least-squares slope of log rms against log dt
        let pts: Vec<(f64, f64)> = rms.iter().map(|(dt, r)| (dt.ln(), r.ln())).collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let order = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let list: Vec<String> = rms.iter().map(|(_, r)| format!("{r:.3e}")).collect();
        Ok((
            terminal_exact && order >= 0.4 && hamiltonian <= 1e-10,
            format!(
                "terminal exact {terminal_exact}; residual RMS N=16..128 [{}], order {order:.3} (>= 0.4); \
                 Hamiltonian {hamiltonian:.2e} (<= 1e-10)",
                list.join(", ")
            ),
        ))
    })();
    h.record("cole-hopf equivalence", outcome);
}

fn strategy_identity(h: &mut Harness) {
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for (name, s, sol) in &h.solutions {
        let u = &s.utility;
        let g = sol.bundle.grid();
        let d = s.market.dim();
        let theta = s.market.theta_on_grid(g.n_steps());
        for k in 0..g.n_steps() {
            for i in 0..s.market.d1() {
                let th = theta[k * d + i];
                for j in 0..sol.bundle.n_paths() {
                    let (x, y) = (sol.x.get(k, j), sol.y.get(k, j));
                    let (pi, z) = (sol.pi_star[i].get(k, j), sol.z[i].get(k, j));
                    let (gap, scale) = match u.domain() {
                        Domain::RealLine => {
                            let p = x + y;
                            let a = th * u.u1(p) / u.u2(p);
                            (pi + z + a, pi.abs() + z.abs() + a.abs())
                        }
                        Domain::HalfLine => {
                            let a = pi * x * u.u2(x) / u.u1(x);
                            (a + z + th, a.abs() + z.abs() + th.abs())
                        }
                    };
                    worst = worst.max(gap.abs() / scale.max(1.0));
                }
            }
        }
        names.push(name.clone());
    }
    h.record(
        "strategy identity",
        Ok((
            worst <= 1e-12 && names.len() >= 8,
            format!(
                "max scaled residual {worst:.2e} (<= 1e-12) over {} solver outputs",
                names.len()
            ),
        )),
    );
}

const DETERMINISM_CONFIGS: [&str; 2] = [
    r#"
[market]
d1 = 1
theta = { kind = "constant", values = [0.2] }

[utility]
family = "mixture_exp"
alpha1 = 1.0
alpha2 = 2.0

[problem]
x0 = 0.0

[numerics]
n_steps = 16
n_paths = 5000
seed = 4
"#,
    r#"
[market]
d1 = 1
d2 = 1
theta = { kind = "constant", values = [0.2, 0.0] }

[utility]
family = "power"
gamma = 0.5

[problem]
x0 = 10.0
endowment = { kind = "affine_tanh", component = 1, level = 1.0, scale = 0.5 }

[numerics]
n_steps = 16
n_paths = 5000
seed = 4
"#,
];

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["solve", "verify"] {
        let mut files: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timing.json")
            .map(|p| {
                (
                    format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        out.extend(files);
    }
    out
}

fn determinism(h: &mut Harness) {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcome = (|| {
        let mut files = 0;
        for src in DETERMINISM_CONFIGS {
            let mut runs = Vec::new();
            for threads in [1, 4, hw] {
                let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| e.to_string())?;
                pool.install(|| -> Result<(), String> {
                    for (sub, verify) in [("solve", false), ("verify", true)] {
                        let mut cfg = LoadedConfig::parse(src).map_err(err)?;
                        cfg.apply(&Overrides {
                            out: Some(tmp.path().join(sub)),
                            ..Overrides::default()
                        })
                        .map_err(err)?;
                        if verify {
                            cmd_verify(&cfg).map_err(err)?;
                        } else {
                            cmd_solve(&cfg).map_err(err)?;
                        }
                    }
                    Ok(())
                })?;
                runs.push(artifacts(tmp.path()));
            }
            if runs[0] != runs[1] || runs[0] != runs[2] {
                return Ok((false, "artifacts differ across thread counts".to_string()));
            }
            files += runs[0].len();
        }
        Ok((
            true,
            format!("{files} artifacts byte-identical across threads {{1, 4, {hw}}}"),
        ))
    })();
    h.record("determinism", outcome);
}

fn main() {
    let mut h = Harness {
        failures: 0,
        solutions: Vec::new(),
    };
    let clock = Instant::now();
    merton_recovery(&mut h);
    fixed_point_mixture(&mut h);
    martingale_identities(&mut h);
    first_order(&mut h);
    duality(&mut h);
    power_endowment_terminal(&mut h);
    picard(&mut h);
    cole_hopf(&mut h);
    strategy_identity(&mut h);
    determinism(&mut h);
    println!(
        "acceptance: {} failed, {:.1}s",
        h.failures,
        clock.elapsed().as_secs_f64()
    );
    if h.failures > 0 {
        std::process::exit(1);
    }
}
