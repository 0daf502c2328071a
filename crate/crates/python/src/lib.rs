//! Python bindings for `fkgen`: finite-state models, exact oracles and
//! seeded particle runs.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use fkgen::oracle::{self, fixtures, AdditiveAnalysis};
use fkgen::stats::{run_replicates, Estimator, Scenario};
use fkgen::{
    EpsilonRule, FiniteStateModel, OnlineSmoother, ParticleFilter, PathFunctional, RandomStreams,
    SelectionConfig, SmootherMode,
};

fn py_err(e: fkgen::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn value_sum(fsm: &FiniteStateModel, horizon: usize, normalized: bool) -> PathFunctional<usize> {
    let v = fsm.values().to_vec();
    let f = PathFunctional::homogeneous(move |x: &usize| v[*x], horizon);
    if normalized {
        f.normalized()
    } else {
        f
    }
}

fn parse_epsilon(epsilon: &str) -> PyResult<EpsilonRule> {
    match epsilon {
        "zero" => Ok(EpsilonRule::Zero),
        "reciprocal-sup" => Ok(EpsilonRule::ReciprocalSup),
        other => other
            .parse::<f64>()
            .map(EpsilonRule::Fixed)
            .map_err(|_| PyValueError::new_err(format!("unknown epsilon rule `{other}`"))),
    }
}

fn parse_mode(mode: &str) -> PyResult<SmootherMode> {
    match mode {
        "auto" => Ok(SmootherMode::Auto),
        "dense" => Ok(SmootherMode::Dense),
        "streaming" => Ok(SmootherMode::Streaming),
        "coalesced" => Ok(SmootherMode::Coalesced),
        other => Err(PyValueError::new_err(format!(
            "unknown smoother mode `{other}`"
        ))),
    }
}

/// A Feynman-Kac model on the states `0..dim`.
#[pyclass(name = "FiniteModel", frozen)]
#[derive(Clone)]
struct PyFiniteModel {
    inner: FiniteStateModel,
}

#[pymethods]
impl PyFiniteModel {
    /// Homogeneous model from an initial law, a row-stochastic transition
    /// matrix and a potential with entries in (0, 1].
    #[new]
    #[pyo3(signature = (initial, transition, potential, horizon, values=None))]
    fn new(
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        potential: Vec<f64>,
        horizon: usize,
        values: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let d = initial.len();
        if transition.len() != d || transition.iter().any(|r| r.len() != d) {
            return Err(PyValueError::new_err(format!("transition must be {d}x{d}")));
        }
        let flat: Vec<f64> = transition.into_iter().flatten().collect();
        let mut inner = FiniteStateModel::homogeneous(
            DVector::from_vec(initial),
            DMatrix::from_row_slice(d, d, &flat),
            DVector::from_vec(potential),
            horizon,
        )
        .map_err(py_err)?;
        if let Some(v) = values {
            inner = inner.with_values(v).map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    /// One of `three-state`, `three-state-inhomogeneous`, `two-state-reversible`, `iid-toy`.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        fixtures::builtin(name)
            .map(|inner| Self { inner })
            .ok_or_else(|| PyKeyError::new_err(format!("no built-in model `{name}`")))
    }

    /// Load a `.fkm` fixture; returns the model and its pinned values.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<(Self, BTreeMap<String, Vec<f64>>)> {
        let fx = fixtures::load_fixture(&path).map_err(py_err)?;
        Ok((Self { inner: fx.model }, fx.pinned))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn with_horizon(&self, horizon: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_horizon(horizon).map_err(py_err)?,
        })
    }

    /// `eta_n` for `n = 0..=horizon`.
    fn flow(&self, horizon: usize) -> PyResult<Vec<Vec<f64>>> {
        let flow = oracle::exact_flow(&self.inner, horizon).map_err(py_err)?;
        Ok(flow
            .eta
            .iter()
            .map(|e| e.iter().copied().collect())
            .collect())
    }

    /// `gamma_n(1)` for `n = 0..=horizon`.
    fn normalizers(&self, horizon: usize) -> PyResult<Vec<f64>> {
        Ok(oracle::exact_flow(&self.inner, horizon)
            .map_err(py_err)?
            .normalizers)
    }

    /// Exact smoothed value of the sum (or mean) of state values along the path.
    #[pyo3(signature = (horizon, normalized=false))]
    fn smoothed(&self, horizon: usize, normalized: bool) -> PyResult<f64> {
        let f = value_sum(&self.inner, horizon, normalized);
        Ok(AdditiveAnalysis::new(&self.inner, horizon, &f)
            .map_err(py_err)?
            .smoothed())
    }

    /// Asymptotic variance of the backward smoother for the value sum.
    fn clt_variance(&self, horizon: usize) -> PyResult<f64> {
        oracle::clt_variance(
            &self.inner,
            horizon,
            &value_sum(&self.inner, horizon, false),
        )
        .map_err(py_err)
    }

    /// Asymptotic variance of the genealogical-tree estimator for the value sum.
    fn genealogical_clt_variance(&self, horizon: usize) -> PyResult<f64> {
        oracle::genealogical_clt_variance(
            &self.inner,
            horizon,
            &value_sum(&self.inner, horizon, false),
        )
        .map_err(py_err)
    }

    /// Limit of the normalized smoother as the horizon grows: `(mu_h, mu_h(values), eigenvalue)`.
    #[pyo3(signature = (tolerance=1e-14, max_iters=100_000))]
    fn h_process(&self, tolerance: f64, max_iters: usize) -> PyResult<(Vec<f64>, f64, f64)> {
        let hp = oracle::h_process(&self.inner, tolerance, max_iters).map_err(py_err)?;
        let limit = hp
            .mu_h
            .iter()
            .zip(self.inner.values())
            .map(|(m, v)| m * v)
            .sum();
        Ok((hp.mu_h.iter().copied().collect(), limit, hp.eigenvalue))
    }

    fn __repr__(&self) -> String {
        format!(
            "FiniteModel(dim={}, horizon={})",
            self.inner.dim(),
            self.inner.horizon()
        )
    }
}

/// Run one seeded filter with the forward-only smoother of the value sum.
/// Returns `(log_normalizers, estimates)`, one entry per epoch.
#[pyfunction]
#[pyo3(signature = (model, n_particles, horizon, seed=0, normalized=false, epsilon="zero", smoother="auto"))]
fn smooth(
    model: &PyFiniteModel,
    n_particles: usize,
    horizon: usize,
    seed: u64,
    normalized: bool,
    epsilon: &str,
    smoother: &str,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let fsm = &model.inner;
    let selection = SelectionConfig::with_epsilon(parse_epsilon(epsilon)?);
    let mut filter = ParticleFilter::start(fsm, n_particles, selection, RandomStreams::new(seed))
        .map_err(py_err)?;
    let functional = value_sum(fsm, horizon, normalized);
    let mut online =
        OnlineSmoother::new(filter.current(), functional, parse_mode(smoother)?).map_err(py_err)?;
    let mut log_z = vec![filter.current().log_normalizer];
    let mut estimates = vec![online.estimate(filter.current()).map_err(py_err)?];
    for _ in 0..horizon {
        let prev = filter.advance().map_err(py_err)?;
        online
            .advance(&prev, filter.current(), fsm)
            .map_err(py_err)?;
        log_z.push(filter.current().log_normalizer);
        estimates.push(online.estimate(filter.current()).map_err(py_err)?);
    }
    Ok((log_z, estimates))
}

/// Independent replicates at the final horizon, keyed by estimator name
/// (`normalizer`, `log-normalizer`, `smoothed`, `unnormalized-smoothed`,
/// `genealogical`, `empirical`). Results do not depend on `threads`.
#[pyfunction]
#[pyo3(signature = (model, n_particles, horizon, replicates, seed=0, estimators=None, normalized=false, epsilon="zero", threads=None))]
#[allow(clippy::too_many_arguments)]
fn replicates(
    py: Python<'_>,
    model: &PyFiniteModel,
    n_particles: usize,
    horizon: usize,
    replicates: usize,
    seed: u64,
    estimators: Option<Vec<String>>,
    normalized: bool,
    epsilon: &str,
    threads: Option<usize>,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let fsm = &model.inner;
    let names = estimators.unwrap_or_else(|| vec!["smoothed".into(), "genealogical".into()]);
    let ests = names
        .iter()
        .map(|n| {
            Estimator::parse(n)
                .ok_or_else(|| PyValueError::new_err(format!("unknown estimator `{n}`")))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let values = fsm.values().to_vec();
    let scenario = Scenario::new("python", fsm, n_particles, horizon)
        .with_functional(value_sum(fsm, horizon, normalized))
        .with_test_function(std::sync::Arc::new(move |x: &usize| values[*x]))
        .with_selection(SelectionConfig::with_epsilon(parse_epsilon(epsilon)?));
    let batch = py
        .allow_threads(|| run_replicates(&scenario, &ests, replicates, seed, threads))
        .map_err(py_err)?;
    Ok(ests
        .iter()
        .map(|e| {
            (
                e.as_str().to_string(),
                batch.values(*e).unwrap_or_default().to_vec(),
            )
        })
        .collect())
}

/// Run the `fkgen` command line with the given arguments; returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    fkgen::cli::run_from(std::iter::once("fkgen".to_string()).chain(args))
}

#[pymodule]
fn fkgen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFiniteModel>()?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(replicates, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
