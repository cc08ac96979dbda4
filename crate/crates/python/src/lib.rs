//! Python bindings: `import prodspec`.
//!
//! Complex arguments accept Python `complex` values; configs and results
//! cross the boundary as JSON text or plain dicts and lists.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ::prodspec::cli::{self, Command, OutputFormat};
use ::prodspec::ensembles::{build_linearization, build_product, sample_chain, EnsembleSpec, EntryLaw};
use ::prodspec::experiments::{ExperimentConfig as CoreConfig, SweepResult as CoreResult};
use ::prodspec::gamma::GammaSystem;
use ::prodspec::resolvent::{identity_suite, IdentitySample, MinorIndexSet};
use ::prodspec::{selfconsistent, spectral, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn law(name: &str) -> PyResult<EntryLaw> {
    name.parse().map_err(py_err)
}

fn chain_spec(n: usize, dim: usize, law_name: &str, seed: u64) -> PyResult<EnsembleSpec> {
    EnsembleSpec::new(n, dim, law(law_name)?, seed).map_err(py_err)
}

/// Root of the self-consistent cubic selected as `m_c(z, w)`.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct Solution {
    z: C64,
    w: C64,
    m_c: C64,
    residual: f64,
    branch_id: usize,
    admissible_roots: usize,
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!("Solution(m_c={}, residual={:e})", self.m_c, self.residual)
    }
}

#[pyfunction]
fn solve_mc(z: C64, w: C64) -> PyResult<Solution> {
    let s = selfconsistent::solve_mc(z, w).map_err(py_err)?;
    Ok(Solution {
        z: s.z,
        w: s.w,
        m_c: s.m_c,
        residual: s.residual,
        branch_id: s.branch_id,
        admissible_roots: s.admissible_roots,
    })
}

/// All three roots of the cubic, sorted by `(Re, Im)`.
#[pyfunction]
fn cubic_roots(z: C64, w: C64) -> PyResult<Vec<C64>> {
    let mut r = selfconsistent::cubic_roots(selfconsistent::cubic_coefficients(z, w)).map_err(py_err)?.to_vec();
    r.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(r)
}

/// `(λ−, λ+)`.
#[pyfunction]
fn support_endpoints(z: C64) -> (f64, f64) {
    let s = selfconsistent::support_endpoints(z);
    (s.lambda_minus, s.lambda_plus)
}

#[pyfunction]
#[pyo3(signature = (z, e, eta_probe = 1e-6))]
fn density(z: C64, e: f64, eta_probe: f64) -> PyResult<f64> {
    selfconsistent::density(z, e, eta_probe).map_err(py_err)
}

/// Factors of a sampled chain as nested lists `[factor][row][col]`.
#[pyfunction]
#[pyo3(signature = (n, dim, law = "complex-gaussian", seed = 1))]
fn sample_factors(n: usize, dim: usize, law: &str, seed: u64) -> PyResult<Vec<Vec<Vec<C64>>>> {
    let chain = sample_chain(&chain_spec(n, dim, law, seed)?).map_err(py_err)?;
    Ok(chain
        .factors()
        .iter()
        .map(|f| (0..f.nrows()).map(|i| (0..f.ncols()).map(|j| f[(i, j)]).collect()).collect())
        .collect())
}

/// Eigenvalues of the product `X_1 ⋯ X_n`.
#[pyfunction]
#[pyo3(signature = (n, dim, law = "complex-gaussian", seed = 1))]
fn product_eigenvalues(n: usize, dim: usize, law: &str, seed: u64) -> PyResult<Vec<C64>> {
    let chain = sample_chain(&chain_spec(n, dim, law, seed)?).map_err(py_err)?;
    Ok(spectral::eigenvalues(build_product(&chain).as_ref()).map_err(py_err)?.eigenvalues)
}

/// Ascending eigenvalues of `(X − z)^*(X − z)` for a sampled chain.
#[pyfunction]
#[pyo3(signature = (n, dim, z, law = "complex-gaussian", seed = 1))]
fn hermitized_spectrum(n: usize, dim: usize, z: C64, law: &str, seed: u64) -> PyResult<Vec<f64>> {
    let chain = sample_chain(&chain_spec(n, dim, law, seed)?).map_err(py_err)?;
    Ok(spectral::hermitized_spectrum(&build_linearization(&chain, z)).map_err(py_err)?.lambdas)
}

/// `‖Γ⁻¹‖` of the stability operator at `(z, w)`.
#[pyfunction]
fn gamma_inverse_norm(n: usize, z: C64, w: C64) -> PyResult<f64> {
    GammaSystem::at(n, z, w).and_then(|g| g.inverse_norm()).map_err(py_err)
}

/// Largest residual of each resolvent identity, as a dict.
#[pyfunction]
#[pyo3(signature = (n, dim, z, w, indices, t = vec![], u = vec![], law = "complex-gaussian", seed = 1))]
#[allow(clippy::too_many_arguments)]
fn resolvent_identities(
    n: usize,
    dim: usize,
    z: C64,
    w: C64,
    indices: Vec<usize>,
    t: Vec<usize>,
    u: Vec<usize>,
    law: &str,
    seed: u64,
) -> PyResult<BTreeMap<String, f64>> {
    let chain = sample_chain(&chain_spec(n, dim, law, seed)?).map_err(py_err)?;
    let sys = build_linearization(&chain, z);
    let sample = IdentitySample {
        minors: MinorIndexSet::new(t, u),
        indices,
    };
    let r = identity_suite(&sys, w, &sample).map_err(py_err)?;
    Ok(BTreeMap::from([
        ("schur_complement".into(), r.schur_complement),
        ("woodbury".into(), r.woodbury),
        ("im_identity".into(), r.im_identity),
        ("minor_difference".into(), r.minor_difference),
        ("rank_one_update".into(), r.rank_one_update),
        ("schur_expansion_g".into(), r.schur_expansion_g),
        ("schur_expansion_gc".into(), r.schur_expansion_gc),
        ("trace_minor_ratio".into(), r.trace_minor_ratio),
        ("derivative_ratio".into(), r.derivative_ratio),
    ]))
}

/// Experiment configuration; unknown keys are rejected.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct ExperimentConfig {
    inner: CoreConfig,
}

#[pymethods]
impl ExperimentConfig {
    /// Defaults, overridden by the keys of an optional JSON object.
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => CoreConfig::default(),
        };
        inner.validate().map_err(py_err)?;
        Ok(ExperimentConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("config serializes")
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn trials(&self) -> usize {
        self.inner.trials
    }

    #[getter]
    #[pyo3(name = "N_ladder")]
    fn n_ladder(&self) -> Vec<usize> {
        self.inner.n_ladder.clone()
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// Outcome of one sweep.
#[pyclass(frozen)]
struct SweepResult {
    inner: CoreResult,
}

#[pymethods]
impl SweepResult {
    #[getter]
    fn experiment(&self) -> String {
        self.inner.experiment.clone()
    }

    /// Records as `(seed, n, N, z, w, metric, value)` tuples.
    #[getter]
    #[allow(clippy::type_complexity)]
    fn records(&self) -> Vec<(u64, usize, usize, Option<C64>, Option<C64>, String, f64)> {
        self.inner
            .records
            .iter()
            .map(|r| (r.seed, r.n, r.dim, r.z, r.w, r.metric.clone(), r.value))
            .collect()
    }

    #[getter]
    fn summaries(&self) -> Vec<(String, f64)> {
        self.inner.summaries.clone()
    }

    #[getter]
    fn violations(&self) -> usize {
        self.inner.violations.len()
    }

    #[getter]
    fn errors(&self) -> Vec<String> {
        self.inner.errors.clone()
    }

    fn values(&self, metric: &str, dim: Option<usize>) -> Vec<f64> {
        self.inner.values(metric, dim)
    }

    fn to_csv(&self) -> PyResult<String> {
        cli::to_csv(&self.inner).map_err(py_err)
    }

    fn to_json(&self) -> String {
        cli::to_json(&self.inner)
    }

    /// Writes csv, json or plotdata files into `dir`; returns the paths.
    #[pyo3(signature = (dir, format = "csv"))]
    fn write(&self, dir: &str, format: &str) -> PyResult<Vec<String>> {
        let fmt = match format {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            "plotdata" => OutputFormat::Plotdata,
            other => return Err(PyValueError::new_err(format!("unknown format `{other}`"))),
        };
        let paths = cli::emit_results(&self.inner, fmt, std::path::Path::new(dir)).map_err(py_err)?;
        Ok(paths.into_iter().map(|p| p.display().to_string()).collect())
    }
}

fn command(name: &str) -> PyResult<Command> {
    let all = [
        Command::Sample,
        Command::McSolve,
        Command::Support,
        Command::Density,
        Command::Radius,
        Command::Outliers,
        Command::Concentration,
        Command::Esd,
        Command::Identities,
        Command::GammaSweep,
        Command::Compare,
        Command::Lde,
    ];
    all.into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown experiment `{name}`")))
}

/// Runs one experiment by its CLI name (`"radius"`, `"outliers"`, ...).
#[pyfunction]
fn run(py: Python<'_>, name: &str, config: &ExperimentConfig) -> PyResult<SweepResult> {
    let cmd = command(name)?;
    let cfg = config.inner.clone();
    let inner = py.detach(move || cli::dispatch(cmd, &cfg)).map_err(py_err)?;
    Ok(SweepResult { inner })
}

#[pymodule]
#[pyo3(name = "prodspec")]
fn prodspec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Solution>()?;
    m.add_class::<ExperimentConfig>()?;
    m.add_class::<SweepResult>()?;
    m.add_function(wrap_pyfunction!(solve_mc, m)?)?;
    m.add_function(wrap_pyfunction!(cubic_roots, m)?)?;
    m.add_function(wrap_pyfunction!(support_endpoints, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(sample_factors, m)?)?;
    m.add_function(wrap_pyfunction!(product_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(hermitized_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_inverse_norm, m)?)?;
    m.add_function(wrap_pyfunction!(resolvent_identities, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
