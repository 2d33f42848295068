//! Python bindings. Matrices cross the boundary as nested lists with one
//! sample per row; view indices are 0-based on this side.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::mvmetric as core;
use core::eval::{accuracy, EvalConfig};
use core::metric::{EuclideanMetric, MultiviewMetric, Weighting};
use core::scatter::ProblemData;
use core::solver::{self, ViewGain};

fn to_py(err: core::Error) -> PyErr {
    if err.is_usage() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

fn rows_to_view(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("ragged view matrix"));
    }
    Ok(DMatrix::from_fn(width, rows.len(), |f, i| rows[i][f]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vectors(xs: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    xs.into_iter().map(DVector::from_vec).collect()
}

fn hyper_for(
    dims: &[usize],
    d: Option<usize>,
    r: f64,
    eta: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<solver::Hyperparams> {
    let mut h = solver::Hyperparams::for_dims(dims);
    if let Some(d) = d {
        h.d = d;
    }
    h.r = r;
    h.eta = eta;
    h.max_iters = max_iters;
    h.tol = tol;
    h.validate(dims).map_err(to_py)?;
    Ok(h)
}

#[pyclass(name = "Dataset", module = "mvmetric", frozen)]
struct PyDataset {
    inner: core::MultiviewDataset,
}

#[pymethods]
impl PyDataset {
    /// Build from per-view sample-by-feature lists and integer labels.
    #[new]
    fn new(views: Vec<Vec<Vec<f64>>>, labels: Vec<i64>) -> PyResult<Self> {
        let views = views.iter().map(|v| rows_to_view(v)).collect::<PyResult<Vec<_>>>()?;
        let inner = core::MultiviewDataset::new(views, labels).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load_manifest(path: &str) -> PyResult<Self> {
        Ok(PyDataset { inner: core::dataset::load_manifest(path).map_err(to_py)? })
    }

    /// Write CSV views, labels and a manifest into `dir`; returns the manifest path.
    fn write(&self, dir: &str) -> PyResult<String> {
        let p = core::dataset::write_dataset(&self.inner, dir).map_err(to_py)?;
        Ok(p.display().to_string())
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_views(&self) -> usize {
        self.inner.n_views()
    }

    #[getter]
    fn view_dims(&self) -> Vec<usize> {
        self.inner.view_dims()
    }

    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.inner.labels().to_vec()
    }

    /// Samples of view `v`, one row per sample.
    fn view(&self, v: usize) -> PyResult<Vec<Vec<f64>>> {
        if v >= self.inner.n_views() {
            return Err(PyValueError::new_err("view index out of range"));
        }
        Ok(matrix_rows(&self.inner.view(v).data.transpose()))
    }

    /// Per-view feature vectors of sample `i`.
    fn sample(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        if i >= self.inner.n_samples() {
            return Err(PyValueError::new_err("sample index out of range"));
        }
        Ok(self.inner.sample(i).iter().map(|x| x.iter().copied().collect()).collect())
    }

    /// Random `(train_indices, test_indices)`.
    fn split(&self, train_count: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
        let s = core::split(&self.inner, train_count, seed).map_err(to_py)?;
        Ok((s.train_indices, s.test_indices))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_samples={}, view_dims={:?})",
            self.inner.n_samples(),
            self.inner.view_dims()
        )
    }
}

#[pyclass(name = "Model", module = "mvmetric", frozen)]
struct PyModel {
    inner: core::SM2LModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: core::SM2LModel::from_json(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel { inner: core::SM2LModel::load(path).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json(None).map_err(to_py)
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }

    #[getter]
    fn view_dims(&self) -> Vec<usize> {
        self.inner.view_dims().to_vec()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.hyper().d
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.trace().converged
    }

    /// Objective value per solver iteration.
    #[getter]
    fn objectives(&self) -> Vec<f64> {
        self.inner.trace().iterations.iter().map(|r| r.objective).collect()
    }

    /// `W_v` as `D_v` rows of `d` entries.
    fn projection(&self, v: usize) -> PyResult<Vec<Vec<f64>>> {
        if v >= self.inner.n_views() {
            return Err(PyValueError::new_err("view index out of range"));
        }
        Ok(matrix_rows(&self.inner.projections().w[v]))
    }

    fn metric_matrix(&self, v: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_rows(&self.inner.metric_matrix(v).map_err(to_py)?))
    }

    fn view_distance(&self, v: usize, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner
            .view_distance(v, &DVector::from_vec(x), &DVector::from_vec(y))
            .map_err(to_py)
    }

    #[pyo3(signature = (xs, ys, weighting = "alpha-r"))]
    fn multiview_distance(&self, xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>, weighting: &str) -> PyResult<f64> {
        let weighting: Weighting = weighting.parse().map_err(to_py)?;
        self.inner
            .weighted(weighting)
            .multiview_distance(&vectors(xs), &vectors(ys))
            .map_err(to_py)
    }

    /// kNN label of `sample` (per-view vectors) against `train_indices` of `dataset`.
    #[pyo3(signature = (dataset, train_indices, sample, k = 1))]
    fn classify(&self, dataset: &PyDataset, train_indices: Vec<usize>, sample: Vec<Vec<f64>>, k: usize) -> PyResult<i64> {
        if train_indices.iter().any(|&i| i >= dataset.inner.n_samples()) {
            return Err(PyValueError::new_err("train index out of range"));
        }
        core::knn_classify(
            &self.inner,
            &dataset.inner.select_views(&train_indices),
            &dataset.inner.select_labels(&train_indices),
            &vectors(sample),
            k,
        )
        .map_err(to_py)
    }

    /// 1NN accuracy on `test_indices`.
    #[pyo3(signature = (dataset, train_indices, test_indices, k = 1))]
    fn accuracy(&self, dataset: &PyDataset, train_indices: Vec<usize>, test_indices: Vec<usize>, k: usize) -> PyResult<f64> {
        let n = dataset.inner.n_samples();
        if train_indices.iter().chain(&test_indices).any(|&i| i >= n) || test_indices.is_empty() {
            return Err(PyValueError::new_err("invalid index lists"));
        }
        accuracy(&self.inner, &dataset.inner, &train_indices, &test_indices, k).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Model(view_dims={:?}, d={}, alpha={:?})", self.inner.view_dims(), self.inner.hyper().d, self.inner.alpha())
    }
}

/// Gaussian-blob dataset; `noise_views` holds 0-based indices of pure-noise views.
#[pyfunction]
#[pyo3(signature = (classes, per_class, view_dims, noise_views = Vec::new(), seed = 0))]
fn generate_synthetic(
    classes: usize,
    per_class: usize,
    view_dims: Vec<usize>,
    noise_views: Vec<usize>,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = core::SyntheticSpec {
        classes,
        per_class,
        view_dims,
        noise_views: noise_views.into_iter().collect::<BTreeSet<_>>(),
        seed,
    };
    Ok(PyDataset { inner: core::generate_synthetic(&spec).map_err(to_py)? })
}

/// `(similar_pairs, dissimilar_pairs)` from labels.
#[pyfunction]
#[pyo3(signature = (labels, max_pairs = None, seed = 0))]
fn build_constraints(
    labels: Vec<i64>,
    max_pairs: Option<usize>,
    seed: u64,
) -> PyResult<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let c = core::build_constraints(&labels, max_pairs, seed).map_err(to_py)?;
    Ok((c.similar, c.dissimilar))
}

#[pyfunction]
#[pyo3(signature = (gains, r, floor = 1e-8))]
fn update_alpha(gains: Vec<f64>, r: f64, floor: f64) -> PyResult<Vec<f64>> {
    solver::update_alpha(&ViewGain { g: gains }, r, floor).map_err(to_py)
}

/// Train on the given training indices with all label-derived pairs.
#[pyfunction]
#[pyo3(signature = (dataset, train_indices, d = None, r = 2.0, eta = 1.0, max_iters = 50, tol = 1e-6, max_pairs = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    train_indices: Vec<usize>,
    d: Option<usize>,
    r: f64,
    eta: f64,
    max_iters: usize,
    tol: f64,
    max_pairs: Option<usize>,
    seed: u64,
) -> PyResult<PyModel> {
    let ds = &dataset.inner;
    let hyper = hyper_for(&ds.view_dims(), d, r, eta, max_iters, tol)?;
    if train_indices.iter().any(|&i| i >= ds.n_samples()) {
        return Err(PyValueError::new_err("train index out of range"));
    }
    py.detach(|| {
        let constraints = core::build_constraints(&ds.select_labels(&train_indices), max_pairs, seed)?;
        let problem = ProblemData::compute(&ds.select_views(&train_indices), &constraints, false)?;
        solver::train_on(&problem, &hyper)
    })
    .map(|inner| PyModel { inner })
    .map_err(to_py)
}

/// Repeated-split 1NN benchmark; returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (dataset, train_count, trials = 10, seed = 0, baseline = false, d = None, r = 2.0, eta = 1.0, max_iters = 50, tol = 1e-6))]
#[allow(clippy::too_many_arguments)]
fn run_benchmark(
    py: Python<'_>,
    dataset: &PyDataset,
    train_count: usize,
    trials: usize,
    seed: u64,
    baseline: bool,
    d: Option<usize>,
    r: f64,
    eta: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<String> {
    let ds = &dataset.inner;
    let hyper = hyper_for(&ds.view_dims(), d, r, eta, max_iters, tol)?;
    let mut config = EvalConfig::new(train_count, trials, seed, hyper);
    config.baseline = baseline;
    let report = py.detach(|| core::run_benchmark(ds, &config)).map_err(to_py)?;
    core::eval::report_json(&report).map_err(to_py)
}

/// 1NN accuracy of the identity metric with uniform view weights.
#[pyfunction]
#[pyo3(signature = (dataset, train_indices, test_indices, k = 1))]
fn euclidean_accuracy(dataset: &PyDataset, train_indices: Vec<usize>, test_indices: Vec<usize>, k: usize) -> PyResult<f64> {
    let n = dataset.inner.n_samples();
    if train_indices.iter().chain(&test_indices).any(|&i| i >= n) || test_indices.is_empty() {
        return Err(PyValueError::new_err("invalid index lists"));
    }
    let metric = EuclideanMetric { view_dims: dataset.inner.view_dims() };
    accuracy(&metric, &dataset.inner, &train_indices, &test_indices, k).map_err(to_py)
}

#[pymodule(name = "mvmetric")]
fn mvmetric_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(build_constraints, m)?)?;
    m.add_function(wrap_pyfunction!(update_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean_accuracy, m)?)?;
    m.add("FORMAT_VERSION", core::FORMAT_VERSION)?;
    Ok(())
}
