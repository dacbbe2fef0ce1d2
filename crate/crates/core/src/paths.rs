//! Brownian path generation, stochastic exponentials, Euler–Maruyama and the
//! two wealth conventions.
//!
//! Storage is node-major: the values of all paths at node `k` are contiguous,
//! which is the access pattern of both the forward sweeps and the per-node
//! regressions. Every path draws from its own ChaCha20 stream keyed by
//! `(seed, path)`, so a bundle with `M` paths is a prefix of one with `M' > M`
//! and results do not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketModel;

/// Layout tag written into exported metadata.
pub const STREAM_LAYOUT: &str = "chacha20-per-path-v1";

/// Uniform grid `t_k = k T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { n_steps, horizon })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.t(k)).collect()
    }
}

/// Brownian increments and levels for `n_paths` paths of dimension `dim`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    n_paths: usize,
    dim: usize,
    seed: u64,
    increments: Vec<f64>,
    levels: Vec<f64>,
}

fn alloc(len: usize) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|_| Error::Allocation { requested: len })?;
    v.resize(len, 0.0);
    Ok(v)
}

/// Draws a reproducible Brownian bundle.
pub fn sample_brownian(grid: TimeGrid, n_paths: usize, dim: usize, seed: u64) -> Result<PathBundle> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 paths, got {n_paths}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidDimension(
            "Brownian dimension must be positive".into(),
        ));
    }
    let n = grid.n_steps();
    let len = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(n_paths))
        .ok_or(Error::Allocation {
            requested: usize::MAX,
        })?;
    let mut increments = alloc(len)?;
    let sd = grid.dt().sqrt();

    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            (0..n * dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * sd
                })
                .collect()
        })
        .collect();
    for (p, draws) in per_path.iter().enumerate() {
        for (j, v) in draws.iter().enumerate() {
            increments[j * n_paths + p] = *v;
        }
    }
    drop(per_path);

    PathBundle::from_increments(grid, n_paths, dim, seed, increments)
}

impl PathBundle {
    /// Builds a bundle from node-major increments `[(k * dim + c) * M + p]`.
    pub fn from_increments(
        grid: TimeGrid,
        n_paths: usize,
        dim: usize,
        seed: u64,
        increments: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_steps();
        if increments.len() != n * dim * n_paths {
            return Err(Error::InvalidDimension(format!(
                "expected {} increments, got {}",
                n * dim * n_paths,
                increments.len()
            )));
        }
        let mut levels = alloc((n + 1) * dim * n_paths)?;
        let m = n_paths;
        for k in 0..n {
            for c in 0..dim {
                let (head, tail) = levels.split_at_mut((k + 1) * dim * m);
                let prev = &head[(k * dim + c) * m..(k * dim + c + 1) * m];
                let next = &mut tail[c * m..(c + 1) * m];
                let inc = &increments[(k * dim + c) * m..(k * dim + c + 1) * m];
                for ((w, a), b) in next.iter_mut().zip(prev).zip(inc) {
                    *w = a + b;
                }
            }
        }
        Ok(Self {
            grid,
            n_paths,
            dim,
            seed,
            increments,
            levels,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `Delta W^c_k` across paths.
    pub fn dw(&self, k: usize, c: usize) -> &[f64] {
        let m = self.n_paths;
        let o = (k * self.dim + c) * m;
        &self.increments[o..o + m]
    }

    /// `W^c_{t_k}` across paths.
    pub fn w(&self, k: usize, c: usize) -> &[f64] {
        let m = self.n_paths;
        let o = (k * self.dim + c) * m;
        &self.levels[o..o + m]
    }

    /// Terminal levels `W^c_T` across paths.
    pub fn w_terminal(&self, c: usize) -> &[f64] {
        self.w(self.grid.n_steps(), c)
    }

    /// Bundle made of the listed Brownian components, in the given order.
    pub fn select(&self, components: &[usize]) -> Result<Self> {
        if components.is_empty() || components.iter().any(|&c| c >= self.dim) {
            return Err(Error::InvalidDimension(format!(
                "components {components:?} not available in dimension {}",
                self.dim
            )));
        }
        let n = self.grid.n_steps();
        let m = self.n_paths;
        let dim = components.len();
        let mut inc = alloc(n * dim * m)?;
        for k in 0..n {
            for (j, &c) in components.iter().enumerate() {
                inc[(k * dim + j) * m..(k * dim + j + 1) * m].copy_from_slice(self.dw(k, c));
            }
        }
        Self::from_increments(self.grid, m, dim, self.seed, inc)
    }

    /// Same paths on a grid with `N / factor` steps (increments summed), so
    /// refinement studies use common random numbers.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let n = self.grid.n_steps();
        if factor == 0 || !n.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {n} steps by a factor {factor}"
            )));
        }
        let grid = TimeGrid::new(n / factor, self.grid.horizon())?;
        let m = self.n_paths;
        let mut inc = alloc(grid.n_steps() * self.dim * m)?;
        for k in 0..grid.n_steps() {
            for c in 0..self.dim {
                let dst = &mut inc[(k * self.dim + c) * m..(k * self.dim + c + 1) * m];
                for j in 0..factor {
                    for (d, s) in dst.iter_mut().zip(self.dw(k * factor + j, c)) {
                        *d += s;
                    }
                }
            }
        }
        Self::from_increments(grid, m, self.dim, self.seed, inc)
    }

    /// The first `n_paths` paths.
    pub fn head(&self, n_paths: usize) -> Result<Self> {
        if n_paths == 0 || n_paths > self.n_paths {
            return Err(Error::InvalidArgument(format!(
                "cannot take {n_paths} of {} paths",
                self.n_paths
            )));
        }
        let n = self.grid.n_steps();
        let mut inc = alloc(n * self.dim * n_paths)?;
        for k in 0..n {
            for c in 0..self.dim {
                let dst = (k * self.dim + c) * n_paths;
                inc[dst..dst + n_paths].copy_from_slice(&self.dw(k, c)[..n_paths]);
            }
        }
        Self::from_increments(self.grid, n_paths, self.dim, self.seed, inc)
    }
}

/// Grid-aligned scalar process, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePaths {
    n_nodes: usize,
    n_paths: usize,
    values: Vec<f64>,
}

impl StatePaths {
    pub fn zeros(n_nodes: usize, n_paths: usize) -> Self {
        Self {
            n_nodes,
            n_paths,
            values: vec![0.0; n_nodes * n_paths],
        }
    }

    pub fn constant(n_nodes: usize, n_paths: usize, v: f64) -> Self {
        Self {
            n_nodes,
            n_paths,
            values: vec![v; n_nodes * n_paths],
        }
    }

    pub fn from_values(n_nodes: usize, n_paths: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_nodes * n_paths {
            return Err(Error::InvalidDimension(format!(
                "expected {} values, got {}",
                n_nodes * n_paths,
                values.len()
            )));
        }
        Ok(Self {
            n_nodes,
            n_paths,
            values,
        })
    }

    /// Builds a process node by node from `f(k, p)`.
    pub fn from_fn(n_nodes: usize, n_paths: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; n_nodes * n_paths];
        values
            .par_chunks_mut(n_paths)
            .enumerate()
            .for_each(|(k, row)| row.iter_mut().enumerate().for_each(|(p, v)| *v = f(k, p)));
        Self {
            n_nodes,
            n_paths,
            values,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn get(&self, k: usize, p: usize) -> f64 {
        self.values[k * self.n_paths + p]
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> &[f64] {
        self.node(self.n_nodes - 1)
    }

    /// Cross-path mean and (sample) standard deviation at node `k`.
    pub fn node_stats(&self, k: usize) -> (f64, f64) {
        mean_std(self.node(k))
    }

    /// Applies `f` elementwise.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            n_nodes: self.n_nodes,
            n_paths: self.n_paths,
            values: self.values.par_iter().map(|v| f(*v)).collect(),
        }
    }

    /// Keeps nodes `0, factor, 2 factor, ...`.
    pub fn thin(&self, factor: usize) -> Self {
        let nodes: Vec<usize> = (0..self.n_nodes).step_by(factor.max(1)).collect();
        let mut values = Vec::with_capacity(nodes.len() * self.n_paths);
        for k in &nodes {
            values.extend_from_slice(self.node(*k));
        }
        Self {
            n_nodes: nodes.len(),
            n_paths: self.n_paths,
            values,
        }
    }
}

/// Sample mean and standard deviation (denominator `n - 1`).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    // Shifted by the first value so constant samples give their value exactly.
    let shift = v.first().copied().unwrap_or(0.0);
    let mean = shift + v.iter().map(|x| x - shift).sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let (m, s) = mean_std(v);
    (m, s / (v.len() as f64).sqrt())
}

/// Advances `state` through all steps with `step(k, p, x_k) -> x_{k+1}`,
/// path-parallel within each step. Non-finite values abort with context.
pub(crate) fn forward_sweep(
    bundle: &PathBundle,
    x0: f64,
    step: impl Fn(usize, usize, f64) -> f64 + Sync,
) -> Result<StatePaths> {
    let m = bundle.n_paths();
    let n = bundle.grid().n_steps();
    let mut out = StatePaths::constant(n + 1, m, x0);
    for k in 0..n {
        let (head, tail) = out.values.split_at_mut((k + 1) * m);
        let prev = &head[k * m..];
        let next = &mut tail[..m];
        next.par_iter_mut()
            .zip(prev.par_iter())
            .enumerate()
            .for_each(|(p, (x1, x))| *x1 = step(k, p, *x));
        if let Some(p) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integration { path: p, step: k });
        }
    }
    Ok(out)
}

/// Discrete `E(int a dW)`: node `k` holds
/// `exp(sum_{j<k} a(t_j) dW_j - 1/2 sum_{j<k} |a(t_j)|^2 dt)` over the
/// components selected by `mask`.
pub fn stochastic_exponential(
    bundle: &PathBundle,
    integrand: impl Fn(f64) -> Vec<f64>,
    mask: &[bool],
) -> Result<StatePaths> {
    let d = bundle.dim();
    if mask.len() != d {
        return Err(Error::InvalidDimension(format!(
            "mask has {} entries for a {d}-dimensional bundle",
            mask.len()
        )));
    }
    let grid = *bundle.grid();
    let dt = grid.dt();
    let a: Vec<Vec<f64>> = (0..grid.n_steps())
        .map(|k| {
            let mut v = integrand(grid.t(k));
            v.resize(d, 0.0);
            for (x, keep) in v.iter_mut().zip(mask) {
                if !keep {
                    *x = 0.0;
                }
            }
            v
        })
        .collect();
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("integrand is not finite".into()));
    }
    let mut log = StatePaths::zeros(grid.n_nodes(), bundle.n_paths());
    accumulate_log_exponential(bundle, &a, dt, &mut log);
    Ok(log.map(f64::exp))
}

fn accumulate_log_exponential(bundle: &PathBundle, a: &[Vec<f64>], dt: f64, log: &mut StatePaths) {
    let m = bundle.n_paths();
    for (k, ak) in a.iter().enumerate() {
        let half = 0.5 * ak.iter().map(|v| v * v).sum::<f64>() * dt;
        let (head, tail) = log.values.split_at_mut((k + 1) * m);
        let prev = &head[k * m..];
        let next = &mut tail[..m];
        next.copy_from_slice(prev);
        for (c, ac) in ak.iter().enumerate() {
            if *ac != 0.0 {
                for (v, dw) in next.iter_mut().zip(bundle.dw(k, c)) {
                    *v += ac * dw;
                }
            }
        }
        next.iter_mut().for_each(|v| *v -= half);
    }
}

/// Euler–Maruyama: `x_{k+1} = x_k + b(t_k, x_k) dt + sigma(t_k, x_k) . dW_k`.
/// `diffusion` writes the `d`-vector `sigma(t, x)` into its buffer.
pub fn euler_sde(
    bundle: &PathBundle,
    drift: impl Fn(f64, f64) -> f64 + Sync,
    diffusion: impl Fn(f64, f64, &mut [f64]) + Sync,
    x0: f64,
) -> Result<StatePaths> {
    let grid = *bundle.grid();
    let dt = grid.dt();
    let d = bundle.dim();
    forward_sweep(bundle, x0, |k, p, x| {
        let t = grid.t(k);
        let mut sigma = [0.0; 8];
        let mut heap;
        let s: &mut [f64] = if d <= 8 {
            &mut sigma[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        diffusion(t, x, s);
        let mut noise = 0.0;
        for (c, sc) in s.iter().enumerate() {
            noise += sc * bundle.dw(k, c)[p];
        }
        x + drift(t, x) * dt + noise
    })
}

fn check_strategy(bundle: &PathBundle, market: &MarketModel, pi: &[StatePaths]) -> Result<()> {
    if pi.len() != market.d1() {
        return Err(Error::InvalidDimension(format!(
            "strategy has {} components, market has d1 = {}",
            pi.len(),
            market.d1()
        )));
    }
    if bundle.dim() != market.dim() {
        return Err(Error::InvalidDimension(format!(
            "bundle dimension {} differs from market dimension {}",
            bundle.dim(),
            market.dim()
        )));
    }
    let shape = (bundle.grid().n_nodes(), bundle.n_paths());
    if pi.iter().any(|c| (c.n_nodes(), c.n_paths()) != shape) {
        return Err(Error::InvalidDimension(
            "strategy is not aligned with the path bundle".into(),
        ));
    }
    Ok(())
}

/// Wealth with `pi` as money amounts: `X_{k+1} = X_k + pi_k . (dW^H_k + theta^H dt)`.
pub fn wealth_amount(
    bundle: &PathBundle,
    market: &MarketModel,
    pi: &[StatePaths],
    x0: f64,
) -> Result<StatePaths> {
    check_strategy(bundle, market, pi)?;
    let grid = *bundle.grid();
    let dt = grid.dt();
    let theta = market.theta_on_grid(grid.n_steps());
    let d = market.dim();
    forward_sweep(bundle, x0, |k, p, x| {
        let mut dx = 0.0;
        for (i, pi_i) in pi.iter().enumerate() {
            dx += pi_i.get(k, p) * (bundle.dw(k, i)[p] + theta[k * d + i] * dt);
        }
        x + dx
    })
}

/// Wealth with `pi` as proportions, exact multiplicative update
/// `X_{k+1} = X_k exp(pi . dW^H - |pi|^2 dt / 2 + pi . theta^H dt)`.
pub fn wealth_proportion(
    bundle: &PathBundle,
    market: &MarketModel,
    pi: &[StatePaths],
    x0: f64,
) -> Result<StatePaths> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::Domain {
            what: "wealth_proportion",
            x: x0,
        });
    }
    check_strategy(bundle, market, pi)?;
    let grid = *bundle.grid();
    let dt = grid.dt();
    let theta = market.theta_on_grid(grid.n_steps());
    let d = market.dim();
    forward_sweep(bundle, x0, |k, p, x| {
        let mut e = 0.0;
        for (i, pi_i) in pi.iter().enumerate() {
            let q = pi_i.get(k, p);
            e += q * bundle.dw(k, i)[p] - 0.5 * q * q * dt + q * theta[k * d + i] * dt;
        }
        x * e.exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{build_market, Theta};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n, 1.0).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_brownian(grid(1), 2, 1, 42).unwrap();
        let b = sample_brownian(grid(1), 2, 1, 42).unwrap();
        assert_eq!(a.increments, b.increments);
        let c = sample_brownian(grid(1), 2, 1, 43).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn levels_start_at_zero_and_telescope() {
        let b = sample_brownian(grid(4), 1000, 2, 7).unwrap();
        for c in 0..2 {
            assert!(b.w(0, c).iter().all(|v| *v == 0.0));
            for k in 0..4 {
                for p in 0..1000 {
                    assert_eq!(b.w(k + 1, c)[p], b.w(k, c)[p] + b.dw(k, c)[p]);
                }
            }
        }
    }

    #[test]
    fn bundle_is_prefix_of_larger_bundle() {
        let small = sample_brownian(grid(8), 10, 2, 3).unwrap();
        let large = sample_brownian(grid(8), 25, 2, 3).unwrap();
        for k in 0..8 {
            for c in 0..2 {
                assert_eq!(small.dw(k, c), &large.dw(k, c)[..10]);
            }
        }
    }

    #[test]
    fn increment_moments() {
        let n = 8;
        let m = 10_000;
        let b = sample_brownian(grid(n), m, 2, 11).unwrap();
        let dt = 1.0 / n as f64;
        for k in 0..n {
            for c in 0..2 {
                let (mean, sd) = mean_std(b.dw(k, c));
                assert!(mean.abs() <= 5.0 * (dt / m as f64).sqrt());
                let var = sd * sd;
                assert!(var >= 0.8 * dt && var <= 1.2 * dt, "var {var} dt {dt}");
            }
        }
    }

    #[test]
    fn too_few_paths_rejected() {
        assert!(sample_brownian(grid(4), 1, 1, 0).is_err());
        assert!(sample_brownian(grid(4), 10, 0, 0).is_err());
    }

    #[test]
    fn coarsening_preserves_terminal_levels() {
        let b = sample_brownian(grid(16), 50, 1, 5).unwrap();
        let c = b.coarsen(4).unwrap();
        assert_eq!(c.grid().n_steps(), 4);
        for (x, y) in b.w_terminal(0).iter().zip(c.w_terminal(0)) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(b.coarsen(3).is_err());
    }

    #[test]
    fn head_keeps_leading_paths() {
        let b = sample_brownian(grid(4), 20, 2, 5).unwrap();
        let h = b.head(7).unwrap();
        assert_eq!(h.n_paths(), 7);
        for k in 0..4 {
            for c in 0..2 {
                assert_eq!(h.dw(k, c), &b.dw(k, c)[..7]);
            }
        }
        assert!(b.head(21).is_err());
    }

    #[test]
    fn stochastic_exponential_zero_integrand() {
        let b = sample_brownian(grid(4), 10, 1, 1).unwrap();
        let e = stochastic_exponential(&b, |_| vec![0.0], &[true]).unwrap();
        assert!(e.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn stochastic_exponential_one_step() {
        let g = TimeGrid::new(1, 0.25).unwrap();
        let b = PathBundle::from_increments(g, 2, 1, 0, vec![0.1, 0.1]).unwrap();
        let e = stochastic_exponential(&b, |_| vec![-0.2], &[true]).unwrap();
        assert_relative_eq!(e.get(1, 0), (-0.025f64).exp(), epsilon = 1e-15);
        assert_eq!(e.get(0, 0), 1.0);
    }

    #[test]
    fn stochastic_exponential_has_unit_mean() {
        let b = sample_brownian(grid(64), 100_000, 1, 9).unwrap();
        let e = stochastic_exponential(&b, |_| vec![-0.2], &[true]).unwrap();
        let (mean, se) = mean_se(e.terminal());
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
        assert!(e.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn euler_trivial_cases() {
        let b = sample_brownian(grid(16), 20, 2, 2).unwrap();
        let x = euler_sde(&b, |_, _| 0.0, |_, _, s| s.fill(0.0), 1.5).unwrap();
        assert!(x.values().iter().all(|v| *v == 1.5));
        let x = euler_sde(
            &b,
            |_, _| 0.0,
            |_, _, s| {
                s.fill(0.0);
                s[0] = 1.0;
            },
            0.0,
        )
        .unwrap();
        for p in 0..20 {
            assert!((x.get(16, p) - b.w_terminal(0)[p]).abs() < 1e-14);
        }
    }

    #[test]
    fn euler_geometric_mean() {
        let (mu, sigma, x0) = (0.1, 0.3, 2.0);
        let b = sample_brownian(grid(64), 100_000, 1, 21).unwrap();
        let x = euler_sde(&b, |_, x| mu * x, |_, x, s| s[0] = sigma * x, x0).unwrap();
        let (mean, se) = mean_se(x.terminal());
        // Euler mean is x0 (1 + mu dt)^N, within O(dt) of the lognormal mean.
        let target = x0 * (mu * 1.0f64).exp();
        let bias = x0 * ((mu * 1.0f64).exp() - (1.0 + mu / 64.0f64).powi(64));
        assert!(
            (mean - target).abs() <= 3.0 * se + bias.abs(),
            "{mean} vs {target}"
        );
    }

    #[test]
    fn euler_reports_blow_up() {
        let b = sample_brownian(grid(4), 4, 1, 2).unwrap();
        let r = euler_sde(&b, |_, x| 1.0 / (x - x), |_, _, s| s[0] = 0.0, 1.0);
        assert!(matches!(r, Err(Error::Integration { step: 0, .. })));
    }

    #[test]
    fn wealth_amount_examples() {
        let market = build_market(1, 0, Theta::constant([0.2]), 1.0).unwrap();
        let g = TimeGrid::new(1, 0.5).unwrap();
        let b = PathBundle::from_increments(g, 2, 1, 0, vec![0.1, -0.1]).unwrap();
        let pi = vec![StatePaths::constant(2, 2, 2.0)];
        let x = wealth_amount(&b, &market, &pi, 1.0).unwrap();
        assert_relative_eq!(x.get(1, 0), 1.4, epsilon = 1e-15);

        let b = sample_brownian(grid(32), 50_000, 1, 4).unwrap();
        let zero = vec![StatePaths::zeros(33, 50_000)];
        let x = wealth_amount(&b, &market, &zero, 3.0).unwrap();
        assert!(x.values().iter().all(|v| *v == 3.0));

        let pi = vec![StatePaths::constant(33, 50_000, 0.7)];
        let x = wealth_amount(&b, &market, &pi, 1.0).unwrap();
        let (mean, se) = mean_se(x.terminal());
        assert!((mean - (1.0 + 0.7 * 0.2)).abs() <= 3.0 * se);
    }

    #[test]
    fn wealth_proportion_lognormal() {
        let market = build_market(1, 0, Theta::constant([0.2]), 1.0).unwrap();
        let m = 50_000;
        let b = sample_brownian(grid(32), m, 1, 8).unwrap();
        let q = 0.2 / 0.5;
        let pi = vec![StatePaths::constant(33, m, q)];
        let x = wealth_proportion(&b, &market, &pi, 2.0).unwrap();
        assert!(x.values().iter().all(|v| *v > 0.0));
        let logs: Vec<f64> = x.terminal().iter().map(|v| v.ln()).collect();
        let (mean, se) = mean_se(&logs);
        let target = 2.0f64.ln() + q * 0.2 - 0.5 * q * q;
        assert!((mean - target).abs() <= 3.0 * se);

        let zero = vec![StatePaths::zeros(33, m)];
        let x = wealth_proportion(&b, &market, &zero, 2.0).unwrap();
        assert!(x.values().iter().all(|v| *v == 2.0));
        assert!(wealth_proportion(&b, &market, &zero, 0.0).is_err());
    }

    #[test]
    fn proportion_wealth_matches_stochastic_exponential() {
        let market = build_market(1, 0, Theta::function(1, |t| vec![0.1 + 0.1 * t]), 1.0).unwrap();
        let b = sample_brownian(grid(16), 200, 1, 13).unwrap();
        let q = |t: f64| 0.5 - 0.3 * t;
        let pi = vec![StatePaths::from_fn(17, 200, |k, _| q(k as f64 / 16.0))];
        let x = wealth_proportion(&b, &market, &pi, 1.5).unwrap();
        let e = stochastic_exponential(&b, |t| vec![q(t)], &[true]).unwrap();
        let dt = 1.0 / 16.0;
        let mut drift = 0.0f64;
        for k in 0..=16 {
            for p in 0..200 {
                let expected = 1.5 * e.get(k, p) * drift.exp();
                assert_relative_eq!(x.get(k, p), expected, max_relative = 1e-12);
            }
            let t = k as f64 / 16.0;
            drift += q(t) * (0.1 + 0.1 * t) * dt;
        }
    }

    proptest! {
        #[test]
        fn levels_are_cumulative_sums(seed in 0u64..1000, n in 1usize..12, d in 1usize..3) {
            let b = sample_brownian(grid(n), 3, d, seed).unwrap();
            for c in 0..d {
                for p in 0..3 {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += b.dw(k, c)[p];
                    }
                    prop_assert!((s - b.w_terminal(c)[p]).abs() < 1e-12);
                }
            }
        }
    }
}
