use std::path::PathBuf;

use cocoa::augment::{self as aug, AugmentSpec};
use cocoa::contrastive::Epsilon;
use cocoa::data::{self, FactualSample, Treatment};
use cocoa::estimators::{self, BaseLearnerSpec, MetaLearner};
use cocoa::experiment::{self as exp, ExperimentConfig};
use cocoa::imputers::{self, KernelKind, KernelSpec, NeighborSet};
use cocoa::metrics;
use cocoa::synthetic::{self, Assignment, LinearGenSpec};
use cocoa::theory::{self, BoundCheckConfig};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: cocoa::Error) -> PyErr {
    match e {
        cocoa::Error::InvalidSpec(_) | cocoa::Error::DimensionMismatch { .. } | cocoa::Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        cocoa::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into plain Python dicts and lists.
fn to_object<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn treatment(t: u8) -> PyResult<Treatment> {
    Treatment::from_u8(t).ok_or_else(|| PyValueError::new_err("treatment must be 0 or 1"))
}

/// Observational dataset of `(x, t, y)` rows with optional true means.
#[pyclass(module = "cocoa_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: data::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (x, t, y, mu0=None, mu1=None, name="data"))]
    fn new(
        x: Vec<Vec<f64>>,
        t: Vec<u8>,
        y: Vec<f64>,
        mu0: Option<Vec<f64>>,
        mu1: Option<Vec<f64>>,
        name: &str,
    ) -> PyResult<Self> {
        if t.len() != x.len() || y.len() != x.len() {
            return Err(PyValueError::new_err("x, t and y must have equal length"));
        }
        let d = x.first().map_or(0, Vec::len);
        let truth = match (mu0, mu1) {
            (Some(a), Some(b)) if a.len() == x.len() && b.len() == x.len() => Some((a, b)),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("mu0 and mu1 must both be given with one value per row")),
        };
        let mut samples = Vec::with_capacity(x.len());
        for (i, (row, (&ti, &yi))) in x.into_iter().zip(t.iter().zip(&y)).enumerate() {
            let s = FactualSample::new(row, treatment(ti)?, yi);
            samples.push(match &truth {
                Some((a, b)) => s.with_truth(a[i], b[i]),
                None => s,
            });
        }
        let inner = data::Dataset::new(name, d, samples).map_err(to_py)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, ground_truth=true))]
    fn load_csv(path: PathBuf, ground_truth: bool) -> PyResult<Self> {
        let inner = data::load_csv(path, ground_truth).map_err(to_py)?;
        Ok(Dataset { inner })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        data::save_csv(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.samples().iter().map(|s| s.x.clone()).collect()
    }

    #[getter]
    fn t(&self) -> Vec<u8> {
        self.inner.samples().iter().map(|s| s.t.as_u8()).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.samples().iter().map(|s| s.y).collect()
    }

    /// Per-row `(mu0, mu1)`, or `None` without ground truth.
    #[getter]
    fn truth(&self) -> Option<Vec<(f64, f64)>> {
        self.inner
            .samples()
            .iter()
            .map(|s| s.truth.map(|m| (m.mu0, m.mu1)))
            .collect()
    }

    fn group_sizes(&self) -> (usize, usize) {
        self.inner.group_sizes()
    }

    #[pyo3(signature = (train_fraction=0.7, seed=0))]
    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(Dataset, Dataset)> {
        let (a, b) = data::split(&self.inner, &data::SplitSpec { train_fraction, seed }).map_err(to_py)?;
        Ok((Dataset { inner: a }, Dataset { inner: b }))
    }

    fn __repr__(&self) -> String {
        let (c, t) = self.inner.group_sizes();
        format!("Dataset(name={:?}, n={}, d={}, control={c}, treated={t})", self.inner.name(), self.inner.len(), self.inner.d())
    }
}

#[pyfunction]
#[pyo3(signature = (n=1500, d=10, seed=0, noise_sd=0.1, nonlinear=false, rct=None))]
fn generate(n: usize, d: usize, seed: u64, noise_sd: f64, nonlinear: bool, rct: Option<f64>) -> PyResult<Dataset> {
    let mut spec = LinearGenSpec::new(n, d, seed);
    spec.noise_sd = noise_sd;
    if let Some(p) = rct {
        spec.assignment = Assignment::Randomized(p);
    }
    let inner = if nonlinear { synthetic::gen_nonlinear(&spec) } else { synthetic::gen_linear(&spec) }.map_err(to_py)?;
    Ok(Dataset { inner })
}

/// Result of one augmentation run.
#[pyclass(module = "cocoa_py", frozen, get_all)]
struct Augmentation {
    dataset: Dataset,
    alpha: f64,
    n_added: usize,
    /// Source index of every appended row, in order.
    sources: Vec<usize>,
    neighbor_counts: Vec<usize>,
}

#[pyfunction]
#[pyo3(signature = (dataset, k=5, radius=None, epsilon=None, imputer="gp", kernel="dot", seed=0, epochs=None))]
#[allow(clippy::too_many_arguments)]
fn augment(
    dataset: &Dataset,
    k: usize,
    radius: Option<f64>,
    epsilon: Option<&str>,
    imputer: &str,
    kernel: &str,
    seed: u64,
    epochs: Option<usize>,
) -> PyResult<Augmentation> {
    let mut spec = AugmentSpec {
        min_neighbors: k,
        query_radius: radius,
        imputer: imputer.parse().map_err(to_py)?,
        seed,
        ..AugmentSpec::default()
    };
    spec.kernel.kind = kernel.parse().map_err(to_py)?;
    if let Some(e) = epsilon {
        let bad = || PyValueError::new_err(format!("invalid epsilon {e:?}"));
        spec.contrastive.epsilon = match e.strip_suffix('%') {
            Some(q) => Epsilon::Percentile(q.parse().map_err(|_| bad())?),
            None => Epsilon::Absolute(e.parse().map_err(|_| bad())?),
        };
    }
    if let Some(e) = epochs {
        spec.contrastive.train.epochs = e;
    }
    let report = aug::augment(&dataset.inner, &spec).map_err(to_py)?;
    Ok(Augmentation {
        alpha: report.alpha,
        n_added: report.added.len(),
        sources: report.added.iter().map(|r| r.source_index).collect(),
        neighbor_counts: report.neighbor_counts,
        dataset: Dataset { inner: report.augmented },
    })
}

/// Fitted S- or T-learner.
#[pyclass(module = "cocoa_py", frozen)]
struct CateModel {
    inner: estimators::CateModel,
}

#[pymethods]
impl CateModel {
    #[staticmethod]
    #[pyo3(signature = (dataset, learner="t", base="ridge", seed=0))]
    fn fit(dataset: &Dataset, learner: &str, base: &str, seed: u64) -> PyResult<Self> {
        let learner: MetaLearner = learner.parse().map_err(to_py)?;
        let base = BaseLearnerSpec::by_name(base).map_err(to_py)?;
        let inner = estimators::fit(&dataset.inner, learner, &base, seed).map_err(to_py)?;
        Ok(CateModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(CateModel {
            inner: estimators::CateModel::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn predict_cate(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        x.iter().map(|row| self.inner.predict_cate(row).map_err(to_py)).collect()
    }

    fn predict_outcome(&self, x: Vec<f64>, t: u8) -> PyResult<f64> {
        self.inner.predict_outcome(&x, treatment(t)?).map_err(to_py)
    }

    fn predict_ate(&self, dataset: &Dataset) -> PyResult<f64> {
        self.inner.predict_ate(&dataset.inner).map_err(to_py)
    }

    /// Dict with `sqrt_pehe`, `ate_error` and `n_eval`.
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &Dataset) -> PyResult<Bound<'py, PyAny>> {
        let r = metrics::evaluate(&self.inner, &dataset.inner).map_err(to_py)?;
        to_object(py, &r)
    }

    #[getter]
    fn learner(&self) -> &'static str {
        self.inner.learner.name()
    }

    #[getter]
    fn base(&self) -> &str {
        &self.inner.base
    }

    fn __repr__(&self) -> String {
        format!("CateModel({}/{}, d={})", self.inner.learner.name(), self.inner.base, self.inner.d)
    }
}

#[pyfunction]
fn mmd_imbalance(dataset: &Dataset) -> PyResult<f64> {
    metrics::mmd_imbalance(&dataset.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (query, points, outcomes, kernel="dot", length_scale=1.0, jitter=1e-6))]
fn gp_impute(
    query: Vec<f64>,
    points: Vec<Vec<f64>>,
    outcomes: Vec<f64>,
    kernel: &str,
    length_scale: f64,
    jitter: f64,
) -> PyResult<f64> {
    let spec = KernelSpec {
        length_scale,
        jitter,
        ..KernelSpec::new(kernel.parse::<KernelKind>().map_err(to_py)?)
    };
    let set = NeighborSet::new(query, points.into_iter().zip(outcomes).collect());
    imputers::gp_impute(&set, &spec).map_err(to_py)
}

#[pyfunction]
fn linear_impute(query: Vec<f64>, points: Vec<Vec<f64>>, outcomes: Vec<f64>) -> PyResult<f64> {
    let set = NeighborSet::new(query, points.into_iter().zip(outcomes).collect());
    imputers::linear_impute(&set).map_err(to_py)
}

/// Runs one of `rct`, `rct_negative`, `neighbors` or `bound` and returns
/// the result dict.
#[pyfunction]
#[pyo3(signature = (which, seed=0, n=None, m=10, epsilon=0.5, trials=2000))]
fn theory_check<'py>(
    py: Python<'py>,
    which: &str,
    seed: u64,
    n: Option<usize>,
    m: usize,
    epsilon: f64,
    trials: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let r = match which {
        "rct" => theory::check_rct_consistency(n.unwrap_or(10_000), seed),
        "rct_negative" => theory::check_rct_negative_control(n.unwrap_or(10_000), seed),
        "neighbors" => theory::check_neighbor_bound(&[0.0], epsilon, m, trials, seed),
        "bound" => {
            let mut cfg = BoundCheckConfig::default();
            if let Some(n) = n {
                cfg.n = n;
            }
            theory::check_generalization_bound(&cfg, seed)
        }
        other => return Err(PyValueError::new_err(format!("unknown check {other:?}"))),
    }
    .map_err(to_py)?;
    to_object(py, &r)
}

/// Runs an experiment from TOML text and returns its result rows as dicts.
#[pyfunction]
#[pyo3(signature = (config_toml=""))]
fn run_experiment<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let outcome = py.detach(|| exp::run_experiment(&cfg)).map_err(to_py)?;
    to_object(py, &outcome.rows)
}

#[pymodule]
fn cocoa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Augmentation>()?;
    m.add_class::<CateModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_imbalance, m)?)?;
    m.add_function(wrap_pyfunction!(gp_impute, m)?)?;
    m.add_function(wrap_pyfunction!(linear_impute, m)?)?;
    m.add_function(wrap_pyfunction!(theory_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
