//! Python bindings: workloads, covariance designs, mechanism runs, and
//! lower bounds, mirroring the `dpwo` command line.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dpwo::covariance::{self, CovarianceDesign, SolverOptions};
use dpwo::error::Error;
use dpwo::lower_bound;
use dpwo::mat::Mat;
use dpwo::mechanism::{self, MechanismOptions, PrivacyParams};
use dpwo::workload::{self, Histogram, MatrixFormat, QueryMatrix};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Load(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A workload of linear queries: one row per query, one column per universe
/// element.
#[pyclass(name = "Workload")]
struct PyWorkload {
    inner: QueryMatrix,
}

#[pymethods]
impl PyWorkload {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let mat = Mat::from_rows(&rows).map_err(to_py_err)?;
        Ok(PyWorkload {
            inner: QueryMatrix::new(mat).map_err(to_py_err)?,
        })
    }

    /// All interval counting queries over a line of `universe` points.
    #[staticmethod]
    fn intervals(universe: usize) -> PyResult<Self> {
        Ok(PyWorkload {
            inner: workload::gen_interval_queries(universe).map_err(to_py_err)?,
        })
    }

    /// Random 0/1 counting workload, deterministic in the seed.
    #[staticmethod]
    #[pyo3(signature = (queries, universe, density=0.5, seed=0))]
    fn random_counting(
        queries: usize,
        universe: usize,
        density: f64,
        seed: u64,
    ) -> PyResult<Self> {
        Ok(PyWorkload {
            inner: workload::gen_random_counting(queries, universe, density, seed)
                .map_err(to_py_err)?,
        })
    }

    /// Loads a workload file; JSON when the path ends in .json, CSV
    /// otherwise.
    #[staticmethod]
    fn load(path: String) -> PyResult<Self> {
        let format = if path.ends_with(".json") {
            MatrixFormat::Json
        } else {
            MatrixFormat::Csv
        };
        Ok(PyWorkload {
            inner: workload::load_matrix(&path, format).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: String) -> PyResult<()> {
        let format = if path.ends_with(".json") {
            MatrixFormat::Json
        } else {
            MatrixFormat::Csv
        };
        workload::save_matrix(&self.inner, &path, format).map_err(to_py_err)
    }

    /// `(queries, universe)` dimensions.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.num_queries(), self.inner.universe_size())
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.num_queries())
            .map(|i| self.inner.mat().row(i).to_vec())
            .collect()
    }

    fn is_full_row_rank(&self) -> PyResult<bool> {
        self.inner.is_full_row_rank().map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Workload({}x{})",
            self.inner.num_queries(),
            self.inner.universe_size()
        )
    }
}

/// An optimized noise covariance with its certificates.
#[pyclass(name = "Design")]
struct PyDesign {
    inner: CovarianceDesign,
}

#[pymethods]
impl PyDesign {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn kyfan_value(&self) -> f64 {
        self.inner.kyfan_value
    }

    #[getter]
    fn hk_value(&self) -> f64 {
        self.inner.dual.hk_value
    }

    /// Relative duality gap; near zero at optimality.
    #[getter]
    fn gap(&self) -> f64 {
        covariance::duality_gap(&self.inner)
    }

    #[getter]
    fn rescale_factor(&self) -> f64 {
        self.inner.rescale_factor
    }

    #[getter]
    fn feasibility_slack(&self) -> f64 {
        self.inner.feasibility_slack
    }

    /// The covariance as nested lists.
    fn sigma(&self) -> Vec<Vec<f64>> {
        let s = &self.inner.sigma;
        (0..s.rows()).map(|i| s.row(i).to_vec()).collect()
    }

    /// Dual simplex weights over universe elements.
    fn q(&self) -> Vec<f64> {
        self.inner.dual.q.clone()
    }

    fn save(&self, path: String) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: String, workload: &PyWorkload) -> PyResult<Self> {
        Ok(PyDesign {
            inner: CovarianceDesign::load(&path, &workload.inner).map_err(to_py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(k={}, kyfan={:.6}, gap={:.3e})",
            self.inner.k,
            self.inner.kyfan_value,
            covariance::duality_gap(&self.inner)
        )
    }
}

/// `(0.5 √ε + √(2 ln(1/δ))) / ε`, the Gaussian mechanism multiplier.
#[pyfunction]
fn noise_multiplier(epsilon: f64, delta: f64) -> PyResult<f64> {
    mechanism::noise_multiplier(epsilon, delta).map_err(to_py_err)
}

/// Optimizes the noise covariance for a workload and size bound, with
/// `k = ⌊εn⌋`.
#[pyfunction]
#[pyo3(signature = (workload, n, epsilon, max_iters=2000, tol=1e-7))]
fn optimize(
    workload: &PyWorkload,
    n: u64,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<PyDesign> {
    let opts = SolverOptions { max_iters, tol };
    Ok(PyDesign {
        inner: covariance::optimize_covariance(&workload.inner, n, epsilon, &opts)
            .map_err(to_py_err)?,
    })
}

fn output_dict<'py>(
    py: Python<'py>,
    out: &mechanism::MechanismOutput,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("final", out.final_answers.clone())?;
    d.set_item("noisy_rmse", out.noisy_rmse)?;
    d.set_item("projected_rmse", out.final_rmse)?;
    d.set_item("projector_rank", out.projector_rank)?;
    d.set_item("fw_residual", out.fw_residual)?;
    d.set_item("seed", out.seed)?;
    Ok(d)
}

/// Runs the projection mechanism once on a histogram given as a list of
/// counts with a size bound.
#[pyfunction]
#[pyo3(signature = (workload, design, counts, n, epsilon, delta, seed=0, max_iters=2000))]
#[allow(clippy::too_many_arguments)]
fn run_mechanism<'py>(
    py: Python<'py>,
    workload: &PyWorkload,
    design: &PyDesign,
    counts: Vec<u64>,
    n: u64,
    epsilon: f64,
    delta: f64,
    seed: u64,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let x = Histogram::new(counts, n).map_err(to_py_err)?;
    let pp = PrivacyParams::new(epsilon, delta).map_err(to_py_err)?;
    let opts = MechanismOptions {
        max_iters,
        tol: None,
        ..Default::default()
    };
    let out = mechanism::run_projection_mechanism(
        &workload.inner,
        &x,
        &design.inner,
        &pp,
        seed,
        &opts,
    )
    .map_err(to_py_err)?;
    output_dict(py, &out)
}

/// Runs the plain Gaussian baseline once.
#[pyfunction]
#[pyo3(signature = (workload, counts, n, epsilon, delta, seed=0))]
fn run_baseline<'py>(
    py: Python<'py>,
    workload: &PyWorkload,
    counts: Vec<u64>,
    n: u64,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let x = Histogram::new(counts, n).map_err(to_py_err)?;
    let pp = PrivacyParams::new(epsilon, delta).map_err(to_py_err)?;
    let out = mechanism::run_plain_gaussian(
        &workload.inner,
        &x,
        &pp,
        seed,
        &MechanismOptions::default(),
    )
    .map_err(to_py_err)?;
    output_dict(py, &out)
}

/// Spectral lower bound `max √(k/m) σ_min(A_S)` over column subsets of size
/// at most `k`; exhaustive for small universes, greedy otherwise.
#[pyfunction]
#[pyo3(signature = (workload, k, method="auto", max_universe=16))]
fn spec_lb<'py>(
    py: Python<'py>,
    workload: &PyWorkload,
    k: usize,
    method: &str,
    max_universe: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let a = &workload.inner;
    let report = match method {
        "brute" => lower_bound::spec_lb_bruteforce(a, k, max_universe),
        "greedy" => lower_bound::spec_lb_greedy(a, k.min(a.universe_size())),
        "auto" => {
            if a.universe_size() <= max_universe {
                lower_bound::spec_lb_bruteforce(a, k, max_universe)
            } else {
                lower_bound::spec_lb_greedy(a, k.min(a.universe_size()))
            }
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown method '{other}' (expected auto, brute, or greedy)"
            )))
        }
    }
    .map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("value", report.spec_lb_value)?;
    d.set_item("subset", report.subset.clone())?;
    d.set_item("subset_weighted_value", report.subset_weighted_value)?;
    d.set_item(
        "method",
        match report.method {
            Some(lower_bound::SubsetMethod::Bruteforce) => "bruteforce",
            Some(lower_bound::SubsetMethod::Greedy) => "greedy",
            None => "none",
        },
    )?;
    d.set_item("k", report.k)?;
    Ok(d)
}

#[pymodule]
fn dpwo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWorkload>()?;
    m.add_class::<PyDesign>()?;
    m.add_function(wrap_pyfunction!(noise_multiplier, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(run_mechanism, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(spec_lb, m)?)?;
    Ok(())
}
