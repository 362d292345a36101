//! Python module `netflow`.
//!
//! Build with `cargo build -p netflow-py --release --features extension-module`
//! and copy `libnetflow.so` to `netflow.so` somewhere on `sys.path`.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use netflow_core::config::RunConfig;
use netflow_core::dglm::{self, FilterOutput, ModelForm, ModelSpec, Observation, PredictorMoments};
use netflow_core::evaluation::mape_values;
use netflow_core::gravity;
use netflow_core::network::{recouple_log_rates, EdgeKey};
use netflow_core::pipeline::{self, Command};
use netflow_core::retro::{backward_mean_recursion, backward_sample};
use netflow_core::simulate::{build_truth, simulate_panel, ScenarioSpec};
use netflow_core::{special, Error};
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        4 => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A Poisson DGLM: regression vector, transition matrix, discount and
/// normal prior on the initial state.
#[pyclass(name = "ModelSpec", module = "netflow", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// Built-in form ("level", "llgm" or "quadratic") with prior mean
    /// (level, 0, ...) and diagonal prior covariance `variance`.
    #[new]
    #[pyo3(signature = (form = "llgm", level = 0.0, variance = 0.1, discount = 0.9))]
    fn new(form: &str, level: f64, variance: f64, discount: f64) -> PyResult<Self> {
        let form: ModelForm = form.parse().map_err(py_err)?;
        let inner = ModelSpec::builtin(form, level, variance, discount).map_err(py_err)?;
        Ok(PyModelSpec { inner })
    }

    /// Arbitrary model from explicit F, G, δ, m₀ and C₀.
    #[staticmethod]
    fn custom(
        regression: Vec<f64>,
        transition: Vec<Vec<f64>>,
        discount: f64,
        prior_mean: Vec<f64>,
        prior_cov: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        let p = regression.len();
        let square = |m: Vec<Vec<f64>>, what: &str| -> PyResult<DMatrix<f64>> {
            if m.len() != p || m.iter().any(|r| r.len() != p) {
                return Err(PyValueError::new_err(format!("{what} must be {p}x{p}")));
            }
            Ok(DMatrix::from_row_iterator(p, p, m.into_iter().flatten()))
        };
        let inner = ModelSpec::new(
            DVector::from_vec(regression),
            square(transition, "transition")?,
            discount,
            DVector::from_vec(prior_mean),
            square(prior_cov, "prior_cov")?,
        )
        .map_err(py_err)?;
        Ok(PyModelSpec { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.discount
    }

    #[getter]
    fn regression(&self) -> Vec<f64> {
        self.inner.regression.iter().copied().collect()
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.transition)
    }

    #[getter]
    fn prior_mean(&self) -> Vec<f64> {
        self.inner.prior_mean.iter().copied().collect()
    }

    #[getter]
    fn prior_cov(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.prior_cov)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec(dim={}, discount={})",
            self.inner.dim(),
            self.inner.discount
        )
    }
}

/// Forward filter output. Per-time sequences are indexed t − 1.
#[pyclass(name = "FilterResult", module = "netflow", frozen)]
struct PyFilterResult {
    spec: ModelSpec,
    output: FilterOutput,
}

impl PyFilterResult {
    fn collect(&self, pick: impl Fn(&dglm::FilterStep) -> f64) -> Vec<f64> {
        self.output.steps.iter().map(pick).collect()
    }
}

#[pymethods]
impl PyFilterResult {
    fn __len__(&self) -> usize {
        self.output.len()
    }

    /// One-step-ahead predictor mean of λₜ.
    #[getter]
    fn f(&self) -> Vec<f64> {
        self.collect(|s| s.prior_moments.f)
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.collect(|s| s.prior_moments.q)
    }

    /// Matched prior gamma shape.
    #[getter]
    fn r(&self) -> Vec<f64> {
        self.collect(|s| s.prior_gamma.r)
    }

    #[getter]
    fn c(&self) -> Vec<f64> {
        self.collect(|s| s.prior_gamma.c)
    }

    #[getter]
    fn forecast_mean(&self) -> Vec<f64> {
        self.collect(|s| s.predictive.mean())
    }

    /// Equal-tailed 95% predictive interval per time.
    #[getter]
    fn forecast_interval(&self) -> Vec<(u64, u64)> {
        self.output
            .steps
            .iter()
            .map(|s| s.predictive.interval(0.95))
            .collect()
    }

    /// Posterior mean of the rate φₜ.
    #[getter]
    fn rate_mean(&self) -> Vec<f64> {
        self.output.filtered_rate_means()
    }

    #[getter]
    fn log_density(&self) -> Vec<f64> {
        self.collect(|s| s.log_predictive_density)
    }

    /// Posterior state mean vectors.
    #[getter]
    fn state_mean(&self) -> Vec<Vec<f64>> {
        self.output
            .steps
            .iter()
            .map(|s| s.posterior.mean.iter().copied().collect())
            .collect()
    }

    #[getter]
    fn repairs(&self) -> usize {
        self.output.repairs
    }
}

/// (r, c) of the gamma whose log has mean f and variance q.
#[pyfunction]
fn gamma_match(f: f64, q: f64) -> PyResult<(f64, f64)> {
    let g = dglm::gamma_match(PredictorMoments { f, q }).map_err(py_err)?;
    Ok((g.r, g.c))
}

/// (f, q) = (ψ(r) − ln c, ψ′(r)).
#[pyfunction]
fn gamma_log_moments(r: f64, c: f64) -> PyResult<(f64, f64)> {
    let m = dglm::GammaBelief::new(r, c).map_err(py_err)?.log_moments();
    Ok((m.f, m.q))
}

#[pyfunction]
fn digamma(x: f64) -> f64 {
    special::digamma(x)
}

#[pyfunction]
fn trigamma(x: f64) -> f64 {
    special::trigamma(x)
}

#[pyfunction]
#[pyo3(signature = (spec, counts, exposures = None))]
fn filter_series(
    spec: &PyModelSpec,
    counts: Vec<u64>,
    exposures: Option<Vec<f64>>,
) -> PyResult<PyFilterResult> {
    let exposures = exposures.unwrap_or_else(|| vec![1.0; counts.len()]);
    if exposures.len() != counts.len() {
        return Err(PyValueError::new_err(
            "counts and exposures differ in length",
        ));
    }
    let obs: Vec<Observation> = counts
        .into_iter()
        .zip(exposures)
        .map(|(x, m)| Observation::new(x, m))
        .collect();
    let output = dglm::filter_series(&spec.inner, &obs).map_err(py_err)?;
    Ok(PyFilterResult {
        spec: spec.inner.clone(),
        output,
    })
}

/// Backward-sampled log-rate trajectories, indexed [sample][t − 1].
#[pyfunction]
fn backward_sample_log_rates(
    result: &PyFilterResult,
    n_samples: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let ens = backward_sample(&result.output, &result.spec, n_samples, seed).map_err(py_err)?;
    Ok(ens.log_rates(&result.spec))
}

/// Closed-form mean of the backward-sampled states, indexed [t − 1][k].
#[pyfunction]
#[pyo3(signature = (result, discount = None))]
fn backward_mean(result: &PyFilterResult, discount: Option<f64>) -> PyResult<Vec<Vec<f64>>> {
    let d = discount.unwrap_or(result.spec.discount);
    let means = backward_mean_recursion(&result.output, &result.spec, d).map_err(py_err)?;
    Ok(means.iter().map(|m| m.iter().copied().collect()).collect())
}

/// (baseline, origin, destination, affinity rows)
type Components = (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Gravity decomposition of a row-major I×(I+1) log-rate array:
/// (baseline, origin[I], destination[I+1], affinity rows).
#[pyfunction]
fn decompose(nodes: usize, log_rates: Vec<f64>) -> PyResult<Components> {
    let g = gravity::decompose(nodes, &log_rates).map_err(py_err)?;
    let affinity = (1..=nodes)
        .map(|i| (0..=nodes).map(|j| g.affinity(i, j)).collect())
        .collect();
    Ok((
        g.baseline,
        g.origin.clone(),
        g.destination.clone(),
        affinity,
    ))
}

/// Transition probabilities from one origin's log rates.
#[pyfunction]
fn recouple(log_rates: Vec<f64>) -> PyResult<Vec<f64>> {
    recouple_log_rates(&log_rates).map_err(py_err)
}

/// Two-sided credible value of sampled log affinities.
#[pyfunction]
fn credible_value(log_affinities: Vec<f64>) -> f64 {
    gravity::credible_value(&log_affinities)
}

/// Simulates the built-in day scenario. Returns (flows, occupancy) as
/// lists of (t, origin, destination, count) and (t, node, count) rows,
/// flows sparse and t = 0 the pre-series bin.
#[pyfunction]
#[pyo3(signature = (nodes = 10, seed = 1, length = None))]
#[allow(clippy::type_complexity)]
fn simulate(
    nodes: usize,
    seed: u64,
    length: Option<usize>,
) -> PyResult<(Vec<(usize, usize, usize, u64)>, Vec<(i64, usize, u64)>)> {
    let mut spec = ScenarioSpec::default_day(nodes, seed);
    if let Some(len) = length {
        spec.len = len;
    }
    let truth = build_truth(&spec).map_err(py_err)?;
    let sim = simulate_panel(truth, &spec).map_err(py_err)?;
    let panel = &sim.panel;
    let mut flows = Vec::new();
    for t in 0..=panel.len() {
        for i in 0..=nodes {
            for j in 0..=nodes {
                if i == 0 && j == 0 {
                    continue;
                }
                let x = panel.flow(EdgeKey::new(i, j), t);
                if x > 0 {
                    flows.push((t, i, j, x));
                }
            }
        }
    }
    let occupancy = (-1..=panel.len() as i64)
        .flat_map(|t| (1..=nodes).map(move |i| (t, i, panel.occupancy(i, t))))
        .collect();
    Ok((flows, occupancy))
}

/// (MAPE, number of zero counts excluded).
#[pyfunction]
fn mape(observed: Vec<u64>, means: Vec<f64>) -> PyResult<(f64, usize)> {
    let m = mape_values(&observed, &means).map_err(py_err)?;
    Ok((m.value, m.excluded))
}

/// Runs one pipeline stage and returns the written file names.
#[pyfunction]
#[pyo3(signature = (command, config = None, workers = 1, seed = None, out = None))]
fn run_pipeline(
    command: &str,
    config: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> PyResult<Vec<String>> {
    let cmd: Command = command.parse().map_err(py_err)?;
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(py_err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    let done = pipeline::run_pipeline(cmd, &cfg, workers).map_err(py_err)?;
    Ok(done.manifest.outputs.into_iter().map(|o| o.file).collect())
}

#[pymodule]
fn netflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyFilterResult>()?;
    m.add_function(wrap_pyfunction!(gamma_match, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_log_moments, m)?)?;
    m.add_function(wrap_pyfunction!(digamma, m)?)?;
    m.add_function(wrap_pyfunction!(trigamma, m)?)?;
    m.add_function(wrap_pyfunction!(filter_series, m)?)?;
    m.add_function(wrap_pyfunction!(backward_sample_log_rates, m)?)?;
    m.add_function(wrap_pyfunction!(backward_mean, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(recouple, m)?)?;
    m.add_function(wrap_pyfunction!(credible_value, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn spec_constructors() {
        let s = PyModelSpec::new("llgm", 1.0, 0.1, 0.9).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.transition(), vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        let c = PyModelSpec::custom(vec![1.0], vec![vec![1.0]], 0.95, vec![0.0], vec![vec![1.0]])
            .unwrap();
        assert_eq!(c.dim(), 1);
    }

    #[test]
    fn filter_and_sample() {
        let s = PyModelSpec::new("level", 2.0, 0.1, 0.9).unwrap();
        let res = filter_series(&s, vec![5, 7, 9, 6], None).unwrap();
        assert_eq!(res.__len__(), 4);
        let draws = backward_sample_log_rates(&res, 8, 3).unwrap();
        assert_eq!((draws.len(), draws[0].len()), (8, 4));
        assert_eq!(backward_mean(&res, None).unwrap().len(), 4);
    }
}
