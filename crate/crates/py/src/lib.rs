//! Python bindings: utility models, and the solve, verify and benchmark
//! commands driven by a TOML configuration string.

use fbsde_core::app::{self, BenchmarkOptions, LoadedConfig, Overrides};
use fbsde_core::diagnostics::Provenance;
use fbsde_core::fbsde::{FbsdeSolution, NumericsConfig};
use fbsde_core::paths::StatePaths;
use fbsde_core::utility::{Domain, UtilityModel};
use fbsde_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(fbsde, FbsdeError, PyException);

fn to_py(e: Error) -> PyErr {
    FbsdeError::new_err(e.to_string())
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| FbsdeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn rows(s: &StatePaths) -> Vec<Vec<f64>> {
    (0..s.n_nodes()).map(|k| s.node(k).to_vec()).collect()
}

/// A utility function with its derivatives.
#[pyclass(frozen, name = "Utility", module = "fbsde")]
struct PyUtility {
    inner: UtilityModel,
}

#[pymethods]
impl PyUtility {
    #[staticmethod]
    fn exponential(alpha: f64) -> PyResult<Self> {
        Ok(Self {
            inner: UtilityModel::exponential(alpha).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn power(gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: UtilityModel::power(gamma).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn log() -> PyResult<Self> {
        Ok(Self {
            inner: UtilityModel::log().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn quadratic(b: f64) -> PyResult<Self> {
        Ok(Self {
            inner: UtilityModel::quadratic(b).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn mixture_exp(alpha1: f64, alpha2: f64) -> PyResult<Self> {
        Ok(Self {
            inner: UtilityModel::mixture_exp(alpha1, alpha2).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn mixture_power(gamma1: f64, gamma2: f64) -> PyResult<Self> {
        Ok(Self {
            inner: UtilityModel::mixture_power(gamma1, gamma2).map_err(to_py)?,
        })
    }

    /// `"real_line"` or `"half_line"`.
    #[getter]
    fn domain(&self) -> &'static str {
        match self.inner.domain() {
            Domain::RealLine => "real_line",
            Domain::HalfLine => "half_line",
        }
    }

    fn u(&self, x: f64) -> f64 {
        self.inner.u0(x)
    }

    fn u1(&self, x: f64) -> f64 {
        self.inner.u1(x)
    }

    fn u2(&self, x: f64) -> f64 {
        self.inner.u2(x)
    }

    fn u3(&self, x: f64) -> f64 {
        self.inner.u3(x)
    }

    fn inverse_marginal(&self, y: f64) -> f64 {
        self.inner.inverse_marginal(y)
    }

    fn risk_tolerance(&self, x: f64) -> PyResult<f64> {
        self.inner.risk_tolerance(x).map_err(to_py)
    }

    fn convex_conjugate(&self, y: f64) -> PyResult<f64> {
        self.inner.convex_conjugate(y).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Utility({:?})", self.inner.family())
    }
}

/// Solver output. Path arrays are lists over time nodes of lists over paths.
#[pyclass(frozen, name = "Solution", module = "fbsde")]
struct PySolution {
    inner: Option<FbsdeSolution>,
    meta: app::Meta,
    exit_code: i32,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn status(&self) -> String {
        format!("{:?}", self.meta.status)
    }

    #[getter]
    fn exit_code(&self) -> i32 {
        self.exit_code
    }

    #[getter]
    fn y0(&self) -> Option<f64> {
        self.meta.y0
    }

    #[getter]
    fn m_star(&self) -> Option<f64> {
        self.meta.m_star
    }

    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.meta)
    }

    fn x(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.solved()?.x))
    }

    fn y(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.solved()?.y))
    }

    #[pyo3(signature = (component = 0))]
    fn z(&self, component: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self.solved()?;
        s.z.get(component)
            .map(rows)
            .ok_or_else(|| FbsdeError::new_err(format!("no Z component {component}")))
    }

    #[pyo3(signature = (component = 0))]
    fn pi(&self, component: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self.solved()?;
        s.pi_star
            .get(component)
            .map(rows)
            .ok_or_else(|| FbsdeError::new_err(format!("no strategy component {component}")))
    }

    fn times(&self) -> PyResult<Vec<f64>> {
        let g = self.solved()?.bundle.grid();
        Ok((0..g.n_nodes()).map(|k| g.t(k)).collect())
    }
}

impl PySolution {
    fn solved(&self) -> PyResult<&FbsdeSolution> {
        self.inner
            .as_ref()
            .ok_or_else(|| FbsdeError::new_err(format!("no solution: status {:?}", self.meta.status)))
    }
}

fn load(
    config: &str,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
) -> PyResult<LoadedConfig> {
    let mut cfg = LoadedConfig::parse(config).map_err(to_py)?;
    cfg.apply(&Overrides {
        seed,
        paths,
        steps,
        out: None,
    })
    .map_err(to_py)?;
    // Artifacts are written only by the command-line tool.
    cfg.config.output.dir = None;
    Ok(cfg)
}

/// Solves the problem described by a TOML configuration string.
#[pyfunction]
#[pyo3(signature = (config, *, seed = None, paths = None, steps = None))]
fn solve(
    py: Python<'_>,
    config: &str,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
) -> PyResult<PySolution> {
    let cfg = load(config, seed, paths, steps)?;
    let out = py.detach(|| app::cmd_solve(&cfg)).map_err(to_py)?;
    Ok(PySolution {
        inner: out.solution,
        meta: out.meta,
        exit_code: out.exit_code,
    })
}

/// Solves and runs the verification suite; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (config, *, seed = None, paths = None, steps = None))]
fn verify<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed, paths, steps)?;
    let out = py.detach(|| app::cmd_verify(&cfg)).map_err(to_py)?;
    json_to_py(py, &out.report)
}

/// Runs the built-in benchmark cases; returns a report dict.
#[pyfunction]
#[pyo3(signature = (*, tolerance = 0.05, seed = None, paths = None, steps = None))]
fn benchmark<'py>(
    py: Python<'py>,
    tolerance: f64,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let base = NumericsConfig::default();
    let numerics = NumericsConfig {
        seed: seed.unwrap_or(base.seed),
        n_paths: paths.unwrap_or(base.n_paths),
        n_steps: steps.unwrap_or(base.n_steps),
        ..base
    };
    numerics.validate().map_err(to_py)?;
    let options = BenchmarkOptions { tolerance, numerics };
    let table = py.detach(|| app::cmd_benchmark(&options)).map_err(to_py)?;
    let n = &options.numerics;
    let report = table.to_report(Provenance {
        version: app::VERSION.to_string(),
        config: None,
        config_sha256: None,
        seed: n.seed,
        n_steps: n.n_steps,
        n_paths: n.n_paths,
    });
    json_to_py(py, &report)
}

#[pymodule]
fn fbsde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", app::VERSION)?;
    m.add("FbsdeError", m.py().get_type::<FbsdeError>())?;
    m.add_class::<PyUtility>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
