//! Python bindings for the fractional obstacle solver.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fracobstacle::fespace::FeSpace;
use fracobstacle::fraclap;
use fracobstacle::harness::{self, ExperimentConfig};
use fracobstacle::mesh::{DomainId, MeshHierarchy};
use fracobstacle::rates::{self, CaseId, CaseSpec};

fn to_py(e: fracobstacle::Error) -> PyErr {
    match e {
        fracobstacle::Error::Config(msg) => PyValueError::new_err(msg),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn config_from(options: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let mut pairs = Vec::new();
    if let Some(d) = options {
        for (k, v) in d.iter() {
            pairs.push((k.str()?.to_string(), v.str()?.to_string()));
        }
    }
    ExperimentConfig::from_pairs(&pairs).map_err(to_py)
}

/// Sinc/Dunford–Taylor approximation of the integral fractional Laplacian
/// on a uniformly refined mesh.
#[pyclass]
struct SincScheme {
    inner: fraclap::SincScheme,
}

#[pymethods]
impl SincScheme {
    #[new]
    #[pyo3(signature = (domain, level, s, k=0.2, truncation=5.0))]
    fn new(domain: &str, level: usize, s: f64, k: f64, truncation: f64) -> PyResult<Self> {
        let domain: DomainId = domain.parse().map_err(to_py)?;
        let hier = MeshHierarchy::build(domain, level).map_err(to_py)?;
        let space = FeSpace::on_base(Arc::clone(hier.finest()));
        let inner = fraclap::SincScheme::build(s, k, truncation, space).map_err(to_py)?;
        Ok(SincScheme { inner })
    }

    #[getter]
    fn dofs(&self) -> usize {
        self.inner.base_dofs()
    }

    /// `(N⁻, N⁺)`.
    #[getter]
    fn node_counts(&self) -> (usize, usize) {
        (self.inner.n_minus(), self.inner.n_plus())
    }

    fn dof_coords(&self) -> Vec<(f64, f64)> {
        self.inner.base().dof_coords().into_iter().map(|p| (p[0], p[1])).collect()
    }

    /// Fractional part of the stiffness matrix applied to `v`.
    fn apply(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        check_len(&v, self.inner.base_dofs())?;
        self.inner.apply_fractional(&v).map_err(to_py)
    }

    fn form(&self, v: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
        check_len(&v, self.inner.base_dofs())?;
        check_len(&w, self.inner.base_dofs())?;
        self.inner.form(&v, &w).map_err(to_py)
    }

    #[pyo3(signature = (v, iota=0.0))]
    fn energy_norm(&self, v: Vec<f64>, iota: f64) -> PyResult<f64> {
        check_len(&v, self.inner.base_dofs())?;
        self.inner.energy_norm(iota, &v).map_err(to_py)
    }

    /// JSON summary of nodes and extension systems.
    fn summary(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.summary()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

fn check_len(v: &[f64], n: usize) -> PyResult<()> {
    if v.len() != n {
        return Err(PyValueError::new_err(format!("expected {n} entries, got {}", v.len())));
    }
    Ok(())
}

/// Solves the obstacle problem of an experiment configuration on one level.
/// Keys of `options` are those of the CLI (`case`, `s`, `domain`, ...).
#[pyfunction]
#[pyo3(signature = (level, options=None))]
fn solve_obstacle<'py>(
    py: Python<'py>,
    level: usize,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from(options)?;
    let hier = MeshHierarchy::build(cfg.domain, level).map_err(to_py)?;
    let ls = harness::solve_level(&cfg, &hier, level).map_err(to_py)?;
    let out = PyDict::new(py);
    let coords: Vec<(f64, f64)> =
        ls.problem.operator.scheme().base().dof_coords().into_iter().map(|p| (p[0], p[1])).collect();
    out.set_item("coords", coords)?;
    out.set_item("u", ls.solution.u.clone())?;
    out.set_item("multiplier", ls.solution.lambda.clone())?;
    out.set_item("obstacle", ls.problem.psi.clone())?;
    out.set_item("active", ls.solution.active.clone())?;
    out.set_item("h", ls.h)?;
    let report = serde_json::to_string(&ls.solution.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    out.set_item("report", report)?;
    Ok(out)
}

/// Runs a level sweep and returns the rate table and the JSON report.
#[pyfunction]
#[pyo3(signature = (options=None, write=false))]
fn run_case<'py>(py: Python<'py>, options: Option<&Bound<'py, PyDict>>, write: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from(options)?;
    let output = harness::run_case(&cfg).map_err(to_py)?;
    if write {
        harness::write_artifacts(&output, &cfg.out).map_err(to_py)?;
    }
    let out = PyDict::new(py);
    let rows: Vec<(usize, f64, usize, f64, f64)> =
        output.table.rows.iter().map(|r| (r.level, r.h, r.dofs, r.energy_error, r.oroc)).collect();
    out.set_item("rows", rows)?;
    out.set_item("mean_oroc", output.report.mean_oroc)?;
    out.set_item("designated_oroc", output.report.designated_oroc.as_ref().map(|d| (d.from, d.to, d.value)))?;
    out.set_item("predicted_rate", output.report.predicted_rate.clone())?;
    out.set_item("csv", output.table.to_csv())?;
    let report = serde_json::to_string(&output.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    out.set_item("report", report)?;
    Ok(out)
}

/// Predicted energy-norm convergence exponent, e.g. `"0.5-"`.
#[pyfunction]
#[pyo3(signature = (case, s, beta_nonzero=None, r=1.0))]
fn predicted_rate(case: &str, s: f64, beta_nonzero: Option<bool>, r: f64) -> PyResult<String> {
    let case: CaseId = case.parse().map_err(to_py)?;
    let spec = CaseSpec {
        case,
        iota: if case == CaseId::C { 1.0 } else { 0.0 },
        s,
        beta_nonzero: beta_nonzero.unwrap_or(case == CaseId::B),
        r,
    };
    Ok(rates::predicted_rate(&spec).map_err(to_py)?.to_string())
}

/// `(N⁻, N⁺)` for the sinc step `k`.
#[pyfunction]
fn node_counts(s: f64, k: f64) -> (usize, usize) {
    fraclap::node_counts(s, k)
}

#[pymodule]
fn fracobstacle_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SincScheme>()?;
    m.add_function(wrap_pyfunction!(solve_obstacle, m)?)?;
    m.add_function(wrap_pyfunction!(run_case, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_rate, m)?)?;
    m.add_function(wrap_pyfunction!(node_counts, m)?)?;
    Ok(())
}
