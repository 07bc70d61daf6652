//! Python bindings for the agetopk simulator.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use agetopk::bound::{self, BoundConstants};
use agetopk::channel::{self, ChannelModel};
use agetopk::experiment::RunConfig;
use agetopk::rng::seeded;
use agetopk::sparsifier;
use agetopk::{AgeVector, CompressedVector, Error, GradientVector, SparseMask, Strategy};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(msg) => PyValueError::new_err(msg),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        Error::Io(err) => PyOSError::new_err(err.to_string()),
    }
}

/// Keeps the masked entries of `g`, in index order.
#[pyfunction]
fn apply_mask(indices: Vec<usize>, g: Vec<f64>) -> PyResult<Vec<f64>> {
    let mask = SparseMask::new(indices, g.len()).map_err(to_py)?;
    Ok(mask.apply(&GradientVector::new(g)).map_err(to_py)?.into_inner())
}

/// Places `y` back at `indices` in a zero vector of length `d`.
#[pyfunction]
fn scatter(indices: Vec<usize>, d: usize, y: Vec<f64>) -> PyResult<Vec<f64>> {
    let mask = SparseMask::new(indices, d).map_err(to_py)?;
    Ok(mask.scatter(&CompressedVector::new(y)).map_err(to_py)?.into_inner())
}

/// Mask chosen by `strategy` from the server's global gradient and ages.
#[pyfunction]
#[pyo3(signature = (strategy, g_global, ages, r, k, seed=0))]
fn select(strategy: &str, g_global: Vec<f64>, ages: Vec<u64>, r: usize, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    let kind = strategy.parse().map_err(to_py)?;
    let s = Strategy::normalized(kind, g_global.len(), r, k).map_err(to_py)?;
    let mask = sparsifier::select(&s, &GradientVector::new(g_global), &AgeVector::new(ages), &mut seeded(seed))
        .map_err(to_py)?;
    Ok(mask.indices().to_vec())
}

#[pyfunction]
fn gamma_of(d: usize, r: usize, k: usize, beta: f64) -> PyResult<f64> {
    Ok(sparsifier::gamma_of(d, r, k, beta).map_err(to_py)?.gamma)
}

#[pyclass(name = "Channel", frozen)]
struct PyChannel {
    inner: ChannelModel,
}

#[pymethods]
impl PyChannel {
    #[new]
    #[pyo3(signature = (fading="rayleigh", mu_h=1.0, sigma_h_sq=0.0, sigma_z_sq=0.0))]
    fn new(fading: &str, mu_h: f64, sigma_h_sq: f64, sigma_z_sq: f64) -> PyResult<Self> {
        let kind = fading.parse().map_err(to_py)?;
        let inner = ChannelModel::from_parts(kind, mu_h, sigma_h_sq, sigma_z_sq).map_err(to_py)?;
        Ok(PyChannel { inner })
    }

    #[getter]
    fn mu_h(&self) -> f64 {
        self.inner.mu_h()
    }

    #[getter]
    fn sigma_h_sq(&self) -> f64 {
        self.inner.sigma_h_sq()
    }

    #[getter]
    fn sigma_z_sq(&self) -> f64 {
        self.inner.sigma_z_sq()
    }

    /// One noisy superposition of the clients' compressed vectors.
    #[pyo3(signature = (signals, seed=0))]
    fn aggregate(&self, signals: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<f64>> {
        let k = signals.first().map_or(0, Vec::len);
        let draw = channel::sample_draw(&self.inner, signals.len(), k, &mut seeded(seed));
        let compressed: Vec<CompressedVector> = signals.into_iter().map(CompressedVector::new).collect();
        Ok(channel::aggregate(&draw, &compressed).map_err(to_py)?.into_inner())
    }

    fn __repr__(&self) -> String {
        format!(
            "Channel(fading='{}', mu_h={}, sigma_h_sq={}, sigma_z_sq={})",
            self.inner.fading(),
            self.inner.mu_h(),
            self.inner.sigma_h_sq(),
            self.inner.sigma_z_sq()
        )
    }
}

#[pyclass(name = "BoundConstants", get_all, set_all)]
struct PyBoundConstants {
    l: f64,
    g_sq: f64,
    sigma_g_sq: f64,
    mu_h: f64,
    sigma_h_sq: f64,
    sigma_z_sq: f64,
    gamma: f64,
    k: usize,
    n: usize,
    eta: f64,
    f0: f64,
    f_star: f64,
}

impl PyBoundConstants {
    fn inner(&self) -> BoundConstants {
        BoundConstants {
            l: self.l,
            g_sq: self.g_sq,
            sigma_g_sq: self.sigma_g_sq,
            mu_h: self.mu_h,
            sigma_h_sq: self.sigma_h_sq,
            sigma_z_sq: self.sigma_z_sq,
            gamma: self.gamma,
            k: self.k,
            n: self.n,
            eta: self.eta,
            f0: self.f0,
            f_star: self.f_star,
        }
    }
}

#[pymethods]
impl PyBoundConstants {
    #[new]
    #[allow(clippy::too_many_arguments)]
    fn new(
        l: f64,
        g_sq: f64,
        sigma_g_sq: f64,
        mu_h: f64,
        sigma_h_sq: f64,
        sigma_z_sq: f64,
        gamma: f64,
        k: usize,
        n: usize,
        eta: f64,
        f0: f64,
        f_star: f64,
    ) -> Self {
        PyBoundConstants { l, g_sq, sigma_g_sq, mu_h, sigma_h_sq, sigma_z_sq, gamma, k, n, eta, f0, f_star }
    }

    fn b1(&self) -> f64 {
        bound::compute_b1(&self.inner())
    }

    fn b2(&self) -> f64 {
        bound::compute_b2(&self.inner())
    }

    fn rhs(&self, rounds: usize) -> PyResult<f64> {
        bound::bound_rhs(&self.inner(), rounds).map_err(to_py)
    }
}

/// Runs a configuration given as a dict of settings and returns one dict
/// per completed round. Raises `RuntimeError` if the run diverges.
#[pyfunction]
fn run<'py>(py: Python<'py>, settings: &Bound<'py, PyDict>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = RunConfig::default();
    for (key, value) in settings.iter() {
        let key: String = key.extract()?;
        cfg.set(&key, &value.str()?.to_string()).map_err(to_py)?;
    }
    cfg.validate().map_err(to_py)?;
    let outcome = py.detach(|| agetopk::experiment::run(&cfg)).map_err(to_py)?;
    if let Some(a) = outcome.aborted {
        return Err(to_py(Error::Divergence { round: a.round, reason: a.reason }));
    }
    outcome
        .records
        .iter()
        .map(|rec| {
            let row = PyDict::new(py);
            row.set_item("round", rec.round)?;
            row.set_item("loss", rec.loss)?;
            row.set_item("grad_norm_sq", rec.grad_norm_sq)?;
            row.set_item("train_accuracy", rec.train_accuracy)?;
            row.set_item("test_accuracy", rec.test_accuracy)?;
            row.set_item("max_age", rec.max_age)?;
            row.set_item("mean_age", rec.mean_age)?;
            row.set_item("mask", rec.mask.clone())?;
            Ok(row)
        })
        .collect()
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(scatter, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_of, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PyBoundConstants>()?;
    Ok(())
}

#[pymodule]
fn agetopk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
