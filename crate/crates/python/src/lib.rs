//! Python bindings, importable as `mnl_bandit`.

use std::path::PathBuf;

use mnl_bandit::assortment;
use mnl_bandit::estimation::{self, ConfidenceConfig, MleOptions, SampleLog};
use mnl_bandit::harness;
use mnl_bandit::model::{self, Assortment, Choice, ChoiceOutcome, ContextSlate, MnlParameter};
use mnl_bandit::nalgebra::DVector;
use mnl_bandit::policies::{policy_factory, Algorithm, Policy, PolicyConfig};
use mnl_bandit::rng::stream;
use mnl_bandit::MnlError;
use pyo3::exceptions::{PyOSError, PyOverflowError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: MnlError) -> PyErr {
    match e.root() {
        MnlError::Io(_) => PyOSError::new_err(e.to_string()),
        MnlError::TooLarge { .. } => PyOverflowError::new_err(e.to_string()),
        MnlError::Protocol(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn slate(round: usize, features: Vec<Vec<f64>>, revenues: Option<Vec<f64>>) -> PyResult<ContextSlate> {
    let n = features.len();
    let features = features.into_iter().map(DVector::from_vec).collect();
    ContextSlate::unbounded(round, features, revenues.unwrap_or_else(|| vec![1.0; n])).map_err(to_py)
}

fn assortment_of(items: Vec<usize>, n_items: usize) -> PyResult<Assortment> {
    let k = items.len().max(1);
    Assortment::new(items, k, n_items).map_err(to_py)
}

/// MNL choice probabilities for `assortment`: one per offered item in
/// sorted order, then the outside option.
#[pyfunction]
fn choice_probabilities(features: Vec<Vec<f64>>, theta: Vec<f64>, assortment: Vec<usize>) -> PyResult<Vec<f64>> {
    let s = slate(1, features, None)?;
    let a = assortment_of(assortment, s.n_items())?;
    let theta = MnlParameter::from_slice(&theta).map_err(to_py)?;
    model::choice_probabilities(&s, &a, &theta).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (features, theta, assortment, revenues=None))]
fn expected_revenue(
    features: Vec<Vec<f64>>,
    theta: Vec<f64>,
    assortment: Vec<usize>,
    revenues: Option<Vec<f64>>,
) -> PyResult<f64> {
    let s = slate(1, features, revenues)?;
    let a = assortment_of(assortment, s.n_items())?;
    let theta = MnlParameter::from_slice(&theta).map_err(to_py)?;
    model::expected_revenue(&s, &a, &theta).map_err(to_py)
}

/// Revenue-maximizing assortment of at most `capacity` items.
#[pyfunction]
fn argmax_assortment(utilities: Vec<f64>, revenues: Vec<f64>, capacity: usize) -> PyResult<Vec<usize>> {
    Ok(assortment::argmax_assortment(&utilities, &revenues, capacity).map_err(to_py)?.items().to_vec())
}

/// Brute-force maximizer over every assortment (small instances only).
#[pyfunction]
fn enumerate_oracle(utilities: Vec<f64>, revenues: Vec<f64>, capacity: usize) -> PyResult<Vec<usize>> {
    Ok(assortment::enumerate_oracle(&utilities, &revenues, capacity).map_err(to_py)?.items().to_vec())
}

#[pyfunction]
fn radius_ucb(t: usize, d: usize, kappa: f64) -> PyResult<f64> {
    estimation::radius_ucb(t, d, kappa).map_err(to_py)
}

#[pyfunction]
fn radius_online(t: usize, d: usize, k: usize, kappa: f64, t0: usize) -> PyResult<f64> {
    estimation::radius_online(t, d, k, kappa, t0).map_err(to_py)
}

#[pyfunction]
fn radius_dbl(tau: usize, n_items: usize, kappa: f64) -> PyResult<f64> {
    estimation::radius_dbl(tau, n_items, kappa).map_err(to_py)
}

#[pyfunction]
fn radius_sup(horizon: usize, n_items: usize, kappa: f64) -> PyResult<f64> {
    estimation::radius_sup(horizon, n_items, kappa).map_err(to_py)
}

#[pyfunction]
fn dbl_sampling_budget(tau: usize, n_items: usize, d: usize, k: usize, sigma0: f64, kappa: f64) -> PyResult<f64> {
    estimation::dbl_sampling_budget(tau, n_items, d, k, sigma0, kappa).map_err(to_py)
}

/// Maximum-likelihood fit. `rounds[t]` lists the feature vectors of the
/// items offered in round `t`; `chosen[t]` is the position of the chosen
/// item within that list, or `None` for the outside option.
///
/// Returns `(theta_hat, gradient_norm, iterations, converged)`.
#[pyfunction]
#[pyo3(signature = (rounds, chosen, init=None))]
fn mle_fit(
    rounds: Vec<Vec<Vec<f64>>>,
    chosen: Vec<Option<usize>>,
    init: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, f64, usize, bool)> {
    if rounds.len() != chosen.len() {
        return Err(PyValueError::new_err("rounds and chosen must have the same length"));
    }
    let dim = rounds.iter().flatten().next().map(Vec::len).ok_or_else(|| PyValueError::new_err("no observations"))?;
    let mut log = SampleLog::new(dim);
    for (t, (features, pick)) in rounds.into_iter().zip(chosen).enumerate() {
        let n = features.len();
        let s = slate(t + 1, features, None)?;
        let a = Assortment::new((0..n).collect(), n, n).map_err(to_py)?;
        let choice = pick.map_or(Choice::Outside, Choice::Item);
        let outcome = ChoiceOutcome::new(&a, choice).map_err(to_py)?;
        log.push(&s, &a, &outcome).map_err(to_py)?;
    }
    let init = match init {
        Some(v) => MnlParameter::from_slice(&v).map_err(to_py)?,
        None => MnlParameter::zeros(dim),
    };
    let report = estimation::mle_fit(&log, &init, &MleOptions::default()).map_err(to_py)?;
    Ok((report.theta_hat.values().as_slice().to_vec(), report.gradient_norm, report.iterations, report.converged))
}

/// A bandit policy driven step by step from Python.
#[pyclass(name = "Policy", unsendable)]
struct PyPolicy {
    inner: Box<dyn Policy>,
    n_items: usize,
    round: usize,
    pending: Option<(ContextSlate, Assortment)>,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (algorithm, n_items, dim, horizon, capacity, kappa=0.25, sigma0=0.2, delta=0.05, seed=0, radius_scale=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        algorithm: &str,
        n_items: usize,
        dim: usize,
        horizon: usize,
        capacity: usize,
        kappa: f64,
        sigma0: f64,
        delta: f64,
        seed: u64,
        radius_scale: f64,
    ) -> PyResult<Self> {
        let algorithm: Algorithm = algorithm.parse().map_err(to_py)?;
        let confidence = ConfidenceConfig::new(kappa, sigma0, delta).map_err(to_py)?;
        let mut config = PolicyConfig::new(algorithm, horizon, capacity, confidence);
        config.radius_scale = radius_scale;
        let rng = stream(seed, algorithm.tag(), 0);
        let inner = policy_factory(&config, n_items, dim, rng).map_err(to_py)?;
        Ok(Self { inner, n_items, round: 0, pending: None })
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.inner.algorithm().tag()
    }

    #[getter]
    fn parameter_updates(&self) -> usize {
        self.inner.parameter_updates()
    }

    /// Current estimate of the utility parameter, if any.
    #[getter]
    fn estimate(&self) -> Option<Vec<f64>> {
        self.inner.estimate().map(|t| t.values().as_slice().to_vec())
    }

    /// Offers an assortment for this round's item features.
    #[pyo3(signature = (features, revenues=None))]
    fn select(&mut self, features: Vec<Vec<f64>>, revenues: Option<Vec<f64>>) -> PyResult<Vec<usize>> {
        if features.len() != self.n_items {
            return Err(PyValueError::new_err(format!("expected {} items", self.n_items)));
        }
        let s = slate(self.round + 1, features, revenues)?;
        let offer = self.inner.select(&s).map_err(to_py)?;
        self.round += 1;
        let items = offer.items().to_vec();
        self.pending = Some((s, offer));
        Ok(items)
    }

    /// Reports the user's choice: an offered item index, or `None` for no
    /// purchase.
    #[pyo3(signature = (chosen=None))]
    fn update(&mut self, chosen: Option<usize>) -> PyResult<()> {
        let (s, offer) = self.pending.take().ok_or_else(|| PyRuntimeError::new_err("update called before select"))?;
        let choice = chosen.map_or(Choice::Outside, Choice::Item);
        let outcome = ChoiceOutcome::new(&offer, choice).map_err(to_py)?;
        self.inner.update(&s, &offer, &outcome).map_err(to_py)
    }
}

/// Validates a JSON config and returns the resolved spec as JSON.
#[pyfunction]
fn resolve_config(config_json: &str) -> PyResult<String> {
    Ok(harness::parse_config_str(config_json).map_err(to_py)?.to_json())
}

/// Runs the experiment described by a JSON config and returns one summary
/// dict per algorithm.
#[pyfunction]
#[pyo3(signature = (config_json, output_dir=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_json: &str,
    output_dir: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut spec = harness::parse_config_str(config_json).map_err(to_py)?;
    if let Some(dir) = output_dir {
        spec.output_dir = dir;
    }
    let report = py.detach(|| harness::run_experiment(&spec)).map_err(to_py)?;
    report
        .summaries
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("algorithm", s.algorithm.tag())?;
            d.set_item("T", s.horizon)?;
            d.set_item("replications", s.replications)?;
            d.set_item("mean_final_regret", s.mean_final_regret)?;
            d.set_item("std_final_regret", s.std_final_regret)?;
            d.set_item("mean_runtime_s", s.mean_runtime_s)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "mnl_bandit")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(choice_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(expected_revenue, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_assortment, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(radius_ucb, m)?)?;
    m.add_function(wrap_pyfunction!(radius_online, m)?)?;
    m.add_function(wrap_pyfunction!(radius_dbl, m)?)?;
    m.add_function(wrap_pyfunction!(radius_sup, m)?)?;
    m.add_function(wrap_pyfunction!(dbl_sampling_budget, m)?)?;
    m.add_function(wrap_pyfunction!(mle_fit, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyPolicy>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
