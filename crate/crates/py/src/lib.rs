//! Python bindings for the level-set Monte Carlo laboratory.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use levelset_mc::density::{self, MalliavinTable as CoreTable};
use levelset_mc::laplace;
use levelset_mc::malliavin::{self, MalliavinRecord};
use levelset_mc::path::{BrownianPath, PathEnsemble};
use levelset_mc::runner::{self, RunConfig, Suite};
use levelset_mc::sde::{self, PotentialSpec};
use levelset_mc::surface::{self, SlabLadder};
use levelset_mc::{Error, RngSpec, TimeGrid};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Per-path Malliavin statistics over a freshly generated ensemble.
#[pyclass(name = "MalliavinTable")]
struct PyMalliavinTable {
    inner: CoreTable,
    dim: usize,
    steps: usize,
    seed: u64,
}

#[pymethods]
impl PyMalliavinTable {
    #[new]
    fn new(dim: usize, steps: usize, paths: usize, seed: u64) -> PyResult<Self> {
        let grid = TimeGrid::new(steps).map_err(err)?;
        let ensemble =
            PathEnsemble::new(dim, grid, paths, RngSpec::new(seed)).map_err(err)?;
        Ok(PyMalliavinTable {
            inner: CoreTable::compute(&ensemble),
            dim,
            steps,
            seed,
        })
    }

    #[getter]
    fn g(&self) -> Vec<f64> {
        self.inner.g.clone()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.gamma.clone()
    }

    #[getter]
    fn divergence(&self) -> Vec<f64> {
        self.inner.div_u.clone()
    }

    #[getter]
    fn divergence_over_gamma(&self) -> Vec<f64> {
        self.inner.div_u_over_gamma.clone()
    }

    #[getter]
    fn degenerate_count(&self) -> usize {
        self.inner.degenerate_count
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "MalliavinTable(dim={}, steps={}, paths={}, seed={})",
            self.dim,
            self.steps,
            self.inner.len(),
            self.seed
        )
    }
}

/// A shipped potential for the gradient SDE.
#[pyclass(name = "Potential")]
struct PyPotential {
    inner: PotentialSpec,
    dim: usize,
}

#[pymethods]
impl PyPotential {
    #[new]
    #[pyo3(signature = (name, a = 0.5, dim = 3))]
    fn new(name: &str, a: f64, dim: usize) -> PyResult<Self> {
        Ok(PyPotential {
            inner: PotentialSpec::by_name(name, a, dim).map_err(err)?,
            dim,
        })
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.inner.v(&x))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        let mut g = vec![0.0; x.len()];
        self.inner.grad(&x, &mut g);
        Ok(g)
    }

    fn __repr__(&self) -> String {
        format!("Potential({:?}, dim={})", self.inner.name(), self.dim)
    }
}

impl PyPotential {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.dim {
            return Err(PyValueError::new_err(format!(
                "expected {} coordinates, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }
}

fn path_from_values(values: Vec<f64>, dim: usize) -> PyResult<BrownianPath> {
    if dim == 0 || values.len() % dim != 0 || values.len() / dim < 3 {
        return Err(PyValueError::new_err(
            "values must hold dim coordinate arrays of N+1 nodes each",
        ));
    }
    let steps = values.len() / dim - 1;
    let grid = TimeGrid::new(steps).map_err(err)?;
    BrownianPath::from_values(grid, dim, values).map_err(err)
}

/// Malliavin record of a single path given coordinate-major node values.
#[pyfunction]
fn path_record(py: Python<'_>, values: Vec<f64>, dim: usize) -> PyResult<Py<PyDict>> {
    let path = path_from_values(values, dim)?;
    let rec = MalliavinRecord::compute(&path);
    let d = PyDict::new(py);
    d.set_item("g", rec.g)?;
    d.set_item("gamma", rec.gamma)?;
    d.set_item("delta_u", rec.delta_u)?;
    d.set_item("u_dot_dgamma", rec.u_dot_dgamma)?;
    d.set_item("divergence_u", rec.divergence_u())?;
    d.set_item("dgamma_max", rec.dgamma_max_norm())?;
    d.set_item("degenerate", rec.is_degenerate())?;
    if !rec.is_degenerate() {
        d.set_item(
            "delta_u_over_gamma",
            rec.delta_u_over_gamma().map_err(err)?,
        )?;
        d.set_item(
            "divergence_u_over_gamma",
            rec.divergence_u_over_gamma().map_err(err)?,
        )?;
    }
    Ok(d.into())
}

/// Node values of the deterministic test path x(t) = t e1.
#[pyfunction]
fn linear_test_path(steps: usize, dim: usize) -> PyResult<Vec<f64>> {
    let grid = TimeGrid::new(steps).map_err(err)?;
    Ok(malliavin::linear_test_path(grid, dim).values().to_vec())
}

#[pyfunction]
fn laplace_oracle(lmbda: f64, dim: usize) -> f64 {
    laplace::laplace_oracle(lmbda, dim)
}

#[pyfunction]
#[pyo3(signature = (r, dim, order = laplace::DEFAULT_STEHFEST_ORDER))]
fn invert_density(r: f64, dim: usize, order: usize) -> (f64, bool) {
    laplace::invert_density_at(r, dim, order)
}

#[pyfunction]
fn silverman_bandwidth(samples: Vec<f64>) -> f64 {
    density::silverman_bandwidth(&samples)
}

#[pyfunction]
fn kde_density(
    samples: Vec<f64>,
    r_grid: Vec<f64>,
    bandwidth: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = density::kde_density(&samples, &r_grid, bandwidth).map_err(err)?;
    Ok((c.estimate, c.stderr))
}

#[pyfunction]
fn malliavin_density(
    table: &PyMalliavinTable,
    r_grid: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = density::malliavin_density(&table.inner, &r_grid).map_err(err)?;
    Ok((c.estimate, c.stderr))
}

/// Richardson-extrapolated slab surface integral of a per-path column.
#[pyfunction]
#[pyo3(signature = (g, x, r, ladder = None))]
fn surface_integral(
    g: Vec<f64>,
    x: Vec<f64>,
    r: f64,
    ladder: Option<Vec<f64>>,
) -> PyResult<(f64, f64)> {
    let ladder = match ladder {
        Some(eps) => SlabLadder::new(eps).map_err(err)?,
        None => SlabLadder::standard(),
    };
    let est = surface::surface_integral(&g, &x, r, &ladder).map_err(err)?;
    Ok((est.extrapolated, est.extrapolated_se))
}

/// Girsanov quantities of a single driving path under a potential.
#[pyfunction]
fn girsanov_record(
    py: Python<'_>,
    potential: &PyPotential,
    values: Vec<f64>,
) -> PyResult<Py<PyDict>> {
    let path = path_from_values(values, potential.dim)?;
    let rec = sde::GirsanovRecord::compute(&potential.inner, &path);
    let d = PyDict::new(py);
    d.set_item("rho1_stochastic", rec.rho1_stochastic)?;
    d.set_item("rho1_representation", rec.rho1_representation)?;
    d.set_item("inv_rho1_of_b", rec.inv_rho1_of_b)?;
    d.set_item("g_of_u", rec.g_of_u)?;
    Ok(d.into())
}

/// Runs a verification suite and returns (name, passed, z) per check.
#[pyfunction]
#[pyo3(signature = (suite, out, dim = 3, steps = 64, paths = 4000, seed = 1, potential = "cosine", potential_a = 0.5))]
#[allow(clippy::too_many_arguments)]
fn run_suite(
    suite: &str,
    out: String,
    dim: usize,
    steps: usize,
    paths: usize,
    seed: u64,
    potential: &str,
    potential_a: f64,
) -> PyResult<Vec<(String, bool, f64)>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let config = RunConfig {
        dim,
        steps,
        paths,
        seed,
        potential: potential.into(),
        potential_a,
        out: out.into(),
        ..RunConfig::default()
    };
    let reports = runner::run(&config, suite).map_err(err)?;
    Ok(reports
        .into_iter()
        .flat_map(|r| r.checks)
        .map(|c| (c.name, c.passed, c.z))
        .collect())
}

#[pymodule]
#[pyo3(name = "levelset_mc")]
fn bindings(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMalliavinTable>()?;
    m.add_class::<PyPotential>()?;
    m.add_function(wrap_pyfunction!(path_record, m)?)?;
    m.add_function(wrap_pyfunction!(linear_test_path, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(invert_density, m)?)?;
    m.add_function(wrap_pyfunction!(silverman_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(kde_density, m)?)?;
    m.add_function(wrap_pyfunction!(malliavin_density, m)?)?;
    m.add_function(wrap_pyfunction!(surface_integral, m)?)?;
    m.add_function(wrap_pyfunction!(girsanov_record, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
