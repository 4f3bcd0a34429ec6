//! Python bindings for wsl-core. Matrices cross the boundary as nested
//! lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wsl_core::densities::{log_ratio_stable, smn_logpdf, wishart_logpdf, SmnParams, WishartParams};
use wsl_core::expansion::{error_curve, expansion_terms_from_eigenvalues, sup_error};
use wsl_core::kde::{self, KdeModel};
use wsl_core::sampling::{mc_trace_moments, trace_moment_exact, RngStream, WishartSampler};
use wsl_core::symcore::{self, SpdMatrix, SymMatrix};
use wsl_core::tvbounds;
use wsl_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Domain(_) | Error::Unsupported(_) | Error::InsufficientReplicates(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn spd(rows: Vec<Vec<f64>>) -> PyResult<SpdMatrix> {
    SpdMatrix::from_rows(&rows).map_err(py_err)
}

fn sym(rows: Vec<Vec<f64>>) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(&rows).map_err(py_err)
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Wishart(ν, S) law: density, sampling and trace moments of its residual.
#[pyclass(name = "Wishart", module = "wsl_py", frozen)]
struct PyWishart {
    inner: WishartParams,
}

#[pymethods]
impl PyWishart {
    #[new]
    fn new(nu: f64, s: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: WishartParams::new(nu, spd(s)?).map_err(py_err)?,
        })
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.nu()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn logpdf(&self, x: Vec<Vec<f64>>) -> PyResult<f64> {
        wishart_logpdf(&self.inner, &spd(x)?).map_err(py_err)
    }

    /// Log-density of the matched symmetric matrix normal.
    fn smn_logpdf(&self, x: Vec<Vec<f64>>) -> PyResult<f64> {
        smn_logpdf(&SmnParams::from(&self.inner), &sym(x)?).map_err(py_err)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let sampler = WishartSampler::new(&self.inner);
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| sampler.sample(&mut rng).sym().rows()).collect()
    }

    /// (k, exact, estimate, stderr) for k = 1..4.
    fn trace_moments(&self, n: usize, seed: u64) -> PyResult<Vec<(u32, f64, f64, f64)>> {
        let r = mc_trace_moments(&self.inner, n, seed).map_err(py_err)?;
        Ok(r.iter().map(|m| (m.k, m.exact, m.mc_estimate, m.mc_stderr)).collect())
    }

    /// (tv, tv_stderr, hellinger, hellinger_stderr) against the matched normal.
    fn distances(&self, n: usize, seed: u64) -> PyResult<(f64, f64, f64, f64)> {
        let e = tvbounds::distances_mc(&self.inner, n, seed).map_err(py_err)?;
        let h = e.hellinger();
        Ok((e.tv.estimate, e.tv.stderr, h.estimate, h.stderr))
    }

    fn __repr__(&self) -> String {
        format!("Wishart(nu={}, d={})", self.inner.nu(), self.inner.dim())
    }
}

/// Wishart asymmetric-kernel density estimator.
#[pyclass(name = "KdeModel", module = "wsl_py", frozen)]
struct PyKdeModel {
    inner: KdeModel,
}

#[pymethods]
impl PyKdeModel {
    #[new]
    fn new(data: Vec<Vec<Vec<f64>>>, bandwidth: f64) -> PyResult<Self> {
        let data = data.into_iter().map(spd).collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: KdeModel::new(data, bandwidth).map_err(py_err)?,
        })
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn eval(&self, s: Vec<Vec<f64>>) -> PyResult<f64> {
        kde::kde_eval(&self.inner, &spd(s)?).map_err(py_err)
    }
}

#[pyfunction]
fn vecp(m: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(symcore::vecp(&sym(m)?).into_values())
}

#[pyfunction]
fn unvecp(v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    Ok(symcore::unvecp_slice(&v).map_err(py_err)?.rows())
}

#[pyfunction]
fn halfvec_cov(nu: f64, s: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&symcore::halfvec_cov(nu, &spd(s)?).map_err(py_err)?))
}

#[pyfunction]
#[pyo3(name = "log_ratio_stable")]
fn py_log_ratio_stable(nu: f64, lambdas: Vec<f64>) -> PyResult<f64> {
    log_ratio_stable(nu, lambdas.len(), &lambdas).map_err(py_err)
}

/// (t_half, t_one_log, t_one_ratio) at the given eigenvalues of Δ.
#[pyfunction]
fn expansion_terms(lambdas: Vec<f64>) -> (f64, f64, f64) {
    let t = expansion_terms_from_eigenvalues(&lambdas);
    (t.t_half, t.t_one_log, t.t_one_ratio)
}

#[pyfunction]
#[pyo3(name = "sup_error", signature = (nu, d, order, budget = 10_000, seed = 1))]
fn py_sup_error(nu: f64, d: usize, order: u8, budget: usize, seed: u64) -> PyResult<f64> {
    sup_error(nu, d, order, budget, seed).map_err(py_err)
}

type CurveRow = (f64, [f64; 3], [f64; 3]);

/// Rows (nu, [E0, E1, E2], [exp0, exp1, exp2]).
#[pyfunction]
#[pyo3(name = "error_curve", signature = (d, nus, budget = 10_000, seed = 1))]
fn py_error_curve(d: usize, nus: Vec<f64>, budget: usize, seed: u64) -> PyResult<Vec<CurveRow>> {
    let c = error_curve(d, &nus, budget, seed).map_err(py_err)?;
    Ok(c.rows.iter().map(|r| (r.nu, r.e, r.exponent)).collect())
}

#[pyfunction]
#[pyo3(name = "trace_moment_exact")]
fn py_trace_moment_exact(d: usize, nu: f64, k: u32) -> PyResult<f64> {
    trace_moment_exact(d, nu, k).map_err(py_err)
}

#[pyfunction]
fn psi(k: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(kde::psi(&spd(k)?))
}

#[pyfunction]
fn r_dim(d: usize) -> f64 {
    kde::r_dim(d)
}

#[pyfunction]
fn a_b_exact(b: f64, s: Vec<Vec<f64>>) -> PyResult<f64> {
    kde::a_b_exact(b, &spd(s)?).map_err(py_err)
}

#[pyfunction]
fn a_b_asymp(b: f64, s: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(kde::a_b_asymp(b, &spd(s)?))
}

#[pyfunction]
fn variance_asymp(n: usize, b: f64, s: Vec<Vec<f64>>, f_at_s: f64) -> PyResult<f64> {
    Ok(kde::variance_asymp(n, b, &spd(s)?, f_at_s).map_err(py_err)?.leading_term)
}

#[pyfunction]
fn b_opt_mse(n: usize, s: Vec<Vec<f64>>, f_at_s: f64, g_at_s: f64) -> PyResult<f64> {
    kde::b_opt_mse(n, &spd(s)?, f_at_s, g_at_s).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (nu, d, c = tvbounds::WORKING_C))]
fn tv_bound(nu: f64, d: usize, c: f64) -> PyResult<f64> {
    tvbounds::tv_bound(nu, d, c).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (nu, d, c = tvbounds::WORKING_C))]
fn hellinger_bound(nu: f64, d: usize, c: f64) -> PyResult<f64> {
    tvbounds::hellinger_bound(nu, d, c).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (nu, s = 1.0, grid = 2000))]
fn tv_numeric_1d(nu: f64, s: f64, grid: usize) -> PyResult<f64> {
    tvbounds::tv_numeric_1d(nu, s, grid).map_err(py_err)
}

#[pymodule]
fn wsl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWishart>()?;
    m.add_class::<PyKdeModel>()?;
    m.add_function(wrap_pyfunction!(vecp, m)?)?;
    m.add_function(wrap_pyfunction!(unvecp, m)?)?;
    m.add_function(wrap_pyfunction!(halfvec_cov, m)?)?;
    m.add_function(wrap_pyfunction!(py_log_ratio_stable, m)?)?;
    m.add_function(wrap_pyfunction!(expansion_terms, m)?)?;
    m.add_function(wrap_pyfunction!(py_sup_error, m)?)?;
    m.add_function(wrap_pyfunction!(py_error_curve, m)?)?;
    m.add_function(wrap_pyfunction!(py_trace_moment_exact, m)?)?;
    m.add_function(wrap_pyfunction!(psi, m)?)?;
    m.add_function(wrap_pyfunction!(r_dim, m)?)?;
    m.add_function(wrap_pyfunction!(a_b_exact, m)?)?;
    m.add_function(wrap_pyfunction!(a_b_asymp, m)?)?;
    m.add_function(wrap_pyfunction!(variance_asymp, m)?)?;
    m.add_function(wrap_pyfunction!(b_opt_mse, m)?)?;
    m.add_function(wrap_pyfunction!(tv_bound, m)?)?;
    m.add_function(wrap_pyfunction!(hellinger_bound, m)?)?;
    m.add_function(wrap_pyfunction!(tv_numeric_1d, m)?)?;
    Ok(())
}
