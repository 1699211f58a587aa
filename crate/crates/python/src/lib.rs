//! Python bindings. The compiled library is importable as `oodkit`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use oodkit::data::{self, GeneratorKind, LabeledImageSet, SyntheticSpec};
use oodkit::pipeline::{self, ExperimentConfig};
use oodkit::scoring::{self, FitOptions, Metric, Thresholds};
use oodkit::vit::EmbeddingSet;
use oodkit::{metrics, ErrorClass};

fn py_err(e: oodkit::Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => PyValueError::new_err(msg),
        ErrorClass::Io => PyIOError::new_err(msg),
        ErrorClass::Numeric => PyArithmeticError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for oodkit::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn metric(name: &str) -> PyResult<Metric> {
    name.parse().py()
}

/// Labeled image set (`.oodd`).
#[pyclass(name = "Dataset", module = "oodkit")]
#[derive(Clone)]
struct PyDataset {
    inner: LabeledImageSet,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_dataset(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    /// `(channels, height, width)`.
    #[getter]
    fn image_shape(&self) -> (usize, usize, usize) {
        let [c, h, w] = self.inner.image_dims();
        (c, h, w)
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    /// Flattened CHW pixels of image `i`.
    fn image(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.image(i).to_vec())
    }

    /// Stratified `(train, val, test)` split.
    fn split(&self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = data::split(&self.inner, [train, val, test], seed).py()?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }, PyDataset { inner: c }))
    }

    /// `(in_distribution, held_out)` with the listed classes moved out.
    fn holdout(&self, classes: Vec<usize>) -> PyResult<(Self, Self)> {
        let (id, ood) = data::holdout_classes(&self.inner, &classes).py()?;
        Ok((PyDataset { inner: id }, PyDataset { inner: ood }))
    }

    fn __repr__(&self) -> String {
        let [c, h, w] = self.inner.image_dims();
        format!(
            "Dataset({} images, {} classes, {c}x{h}x{w})",
            self.inner.len(),
            self.inner.num_classes()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (kind = "blobs", num_classes = 3, samples_per_class = 500, image_size = 32,
                    channels = 3, noise_sigma = 0.1, shift = 0.5, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    kind: &str,
    num_classes: usize,
    samples_per_class: usize,
    image_size: usize,
    channels: usize,
    noise_sigma: f64,
    shift: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = SyntheticSpec {
        kind: kind.parse::<GeneratorKind>().py()?,
        num_classes,
        samples_per_class,
        image_size,
        channels,
        noise_sigma,
        shift,
        seed,
        patterns: None,
    };
    Ok(PyDataset {
        inner: data::synthesize(&spec).py()?,
    })
}

/// Class-token embeddings with labels and optional logits (`.emb.oodt`).
#[pyclass(name = "Embeddings", module = "oodkit")]
#[derive(Clone)]
struct PyEmbeddings {
    inner: EmbeddingSet,
}

fn rows(t: &oodkit::Tensor<f64>) -> Vec<Vec<f64>> {
    let d = t.shape()[1];
    t.data().chunks_exact(d.max(1)).map(<[f64]>::to_vec).collect()
}

#[pymethods]
impl PyEmbeddings {
    #[new]
    #[pyo3(signature = (features, labels, logits = None))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<u32>, logits: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let matrix = |r: Vec<Vec<f64>>| oodkit::Tensor::from_rows(&r).py();
        let mut inner = EmbeddingSet::new(matrix(features)?, labels, "python").py()?;
        if let Some(l) = logits {
            inner = inner.with_logits(matrix(l)?).py()?;
        }
        Ok(PyEmbeddings { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEmbeddings {
            inner: EmbeddingSet::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels.clone()
    }

    #[getter]
    fn logits(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.logits.as_ref().map(rows)
    }
}

/// Trained classifier checkpoint (`model.oodt`).
#[pyclass(name = "Model", module = "oodkit")]
struct PyModel {
    inner: pipeline::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: pipeline::Model::load(&path).py()?,
        })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.config.num_classes
    }

    #[getter]
    fn hidden_size(&self) -> usize {
        self.inner.config.hidden_size
    }

    #[pyo3(signature = (dataset, batch_size = 128))]
    fn extract(&self, py: Python<'_>, dataset: &PyDataset, batch_size: usize) -> PyResult<PyEmbeddings> {
        let inner = py
            .allow_threads(|| self.inner.extract(&dataset.inner, batch_size, "python"))
            .py()?;
        Ok(PyEmbeddings { inner })
    }
}

/// Per-class Gaussian statistics (`stats.oodt`).
#[pyclass(name = "ClassStats", module = "oodkit")]
#[derive(Clone)]
struct PyClassStats {
    inner: scoring::ClassStats,
}

#[pymethods]
impl PyClassStats {
    #[staticmethod]
    #[pyo3(signature = (embeddings, metric = "mahalanobis", shared_covariance = false))]
    fn fit(embeddings: &PyEmbeddings, metric: &str, shared_covariance: bool) -> PyResult<Self> {
        let options = FitOptions {
            shared_covariance,
            ..FitOptions::metric(self::metric(metric)?)
        };
        Ok(PyClassStats {
            inner: scoring::fit_stats(&embeddings.inner, &options).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyClassStats {
            inner: scoring::ClassStats::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.means.clone()
    }

    /// `(distance, nearest_class)`; the metric defaults to the fitted one.
    #[pyo3(signature = (x, metric = None))]
    fn distance(&self, x: Vec<f64>, metric: Option<&str>) -> PyResult<(f64, usize)> {
        let m = match metric {
            Some(name) => self::metric(name)?,
            None => self.inner.metric,
        };
        scoring::distance_score(&x, &self.inner, m).py()
    }

    /// Outlier decision for one sample as a dict.
    #[pyo3(signature = (x, logits, t_distance, t_conf, metric = None))]
    fn decide(
        &self,
        py: Python<'_>,
        x: Vec<f64>,
        logits: Vec<f64>,
        t_distance: f64,
        t_conf: f64,
        metric: Option<&str>,
    ) -> PyResult<PyObject> {
        let m = match metric {
            Some(name) => self::metric(name)?,
            None => self.inner.metric,
        };
        let t = Thresholds::new(t_distance, t_conf).py()?;
        let d = scoring::decide(&x, &logits, &self.inner, &t, m).py()?;
        let out = PyDict::new_bound(py);
        out.set_item("distance", d.distance)?;
        out.set_item("nearest_class", d.nearest_class)?;
        out.set_item("confidence", d.confidence)?;
        out.set_item("predicted_class", d.predicted_class)?;
        out.set_item("is_outlier", d.is_outlier)?;
        Ok(out.into())
    }
}

/// `(max softmax probability, argmax class)`.
#[pyfunction]
fn confidence(logits: Vec<f64>) -> PyResult<(f64, usize)> {
    scoring::confidence_score(&logits).py()
}

/// `(t_distance, t_conf)` from ID validation scores.
#[pyfunction]
#[pyo3(signature = (distances, confidences, target_tpr = 0.95))]
fn calibrate_thresholds(distances: Vec<f64>, confidences: Vec<f64>, target_tpr: f64) -> PyResult<(f64, f64)> {
    let t = scoring::calibrate_thresholds(&distances, &confidences, target_tpr).py()?;
    Ok((t.t_distance, t.t_conf))
}

#[pyfunction]
fn quantile(values: Vec<f64>, q: f64) -> PyResult<f64> {
    scoring::quantile(&values, q).py()
}

/// AUROC with OOD as the positive class; higher scores mean more OOD.
#[pyfunction]
fn auroc(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> PyResult<f64> {
    metrics::auroc(&id_scores, &ood_scores).py()
}

#[pyfunction]
fn aupr(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> PyResult<f64> {
    metrics::aupr(&id_scores, &ood_scores).py()
}

/// Builds a config from a dict of flat config keys; values go through `str()`.
fn config_from(settings: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let mut kv = std::collections::BTreeMap::new();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            let value = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            kv.insert(k.extract::<String>()?, value);
        }
    }
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = kv.remove("train_profile") {
        cfg.set("train_profile", &p).py()?;
    }
    for (k, v) in kv {
        cfg.set(&k, &v).py()?;
    }
    cfg.validate().py()?;
    Ok(cfg)
}

/// Trains on `data` and writes the checkpoint and reports to `out`.
/// Returns the checkpoint path.
#[pyfunction]
#[pyo3(signature = (data, out, config = None))]
fn train(py: Python<'_>, data: PathBuf, out: PathBuf, config: Option<&Bound<'_, PyDict>>) -> PyResult<PathBuf> {
    let cfg = config_from(config)?;
    let outputs = py.allow_threads(|| pipeline::cmd_train(&cfg, &data, None, &out)).py()?;
    Ok(outputs.model)
}

/// Full split/train/extract/fit/score/eval run. Returns the evaluation rows
/// as `(score_type, auroc, aupr)`.
#[pyfunction]
#[pyo3(signature = (id_data, ood_data, out, config = None))]
fn run_pipeline(
    py: Python<'_>,
    id_data: PathBuf,
    ood_data: PathBuf,
    out: PathBuf,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<Vec<(String, f64, f64)>> {
    let mut cfg = config_from(config)?;
    cfg.id_data = Some(id_data);
    cfg.ood_data = Some(ood_data);
    let outputs = py.allow_threads(|| pipeline::run_pipeline(&cfg, &out)).py()?;
    Ok(outputs
        .rows
        .into_iter()
        .map(|r| (r.score_type, r.auroc, r.aupr))
        .collect())
}

#[pymodule]
#[pyo3(name = "oodkit")]
fn oodkit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyClassStats>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(quantile, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(aupr, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
