//! Python bindings: label spaces, text normalization, training, prediction,
//! calibration and the review and regression diagnostics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use occode::analysis::{kernel_trend, ols_hc1, score_review, ReviewSample};
use occode::calibrate::{
    calibrate_per_language, compute_metrics, grid_search_threshold, Grid, Metric, PredictionMatrix,
};
use occode::ingest::{normalize_text, CleanDataset, Transliteration};
use occode::nn::{self, Checkpoint};
use occode::textenc::{self, LanguageTag};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn langs(tags: &[String]) -> PyResult<Vec<LanguageTag>> {
    tags.iter().map(|t| t.parse::<LanguageTag>().map_err(value_err)).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let l = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != l) {
        return Err(PyValueError::new_err("ragged probability matrix"));
    }
    Array2::from_shape_vec((n, l), rows.into_iter().flatten().collect()).map_err(value_err)
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

/// Ordered set of HISCO codes the model predicts over.
#[pyclass(name = "LabelSpace", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabelSpace {
    inner: occode::LabelSpace,
}

#[pymethods]
impl PyLabelSpace {
    #[new]
    fn new(codes: Vec<String>) -> PyResult<Self> {
        let codes =
            codes.iter().map(|c| occode::HiscoCode::parse(c).map_err(value_err)).collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: occode::LabelSpace::new(codes).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: occode::LabelSpace::from_file(path).map_err(value_err)? })
    }

    #[getter]
    fn codes(&self) -> Vec<String> {
        self.inner.codes().iter().map(|c| c.to_string()).collect()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A trained model with its label space.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        nn::load_checkpoint(&path).map(|inner| Self { inner }).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_checkpoint(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn labels(&self) -> PyLabelSpace {
        PyLabelSpace { inner: self.inner.labels.clone() }
    }

    #[getter]
    fn best_val_accuracy(&self) -> f64 {
        self.inner.best_val_accuracy
    }

    /// Model hyperparameters as a dict.
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &serde_json::to_value(self.inner.config()).map_err(value_err)?)
    }

    /// Per-input list of `(code, probability)` pairs, most probable first.
    #[pyo3(signature = (texts, langs, threshold = 0.5, fallback_top1 = false))]
    fn predict(
        &self,
        py: Python<'_>,
        texts: Vec<String>,
        langs: Vec<String>,
        threshold: f64,
        fallback_top1: bool,
    ) -> PyResult<Vec<Vec<(String, f64)>>> {
        let inputs = pairs(texts, langs)?;
        let preds = py.detach(|| nn::predict(&self.inner, &inputs, threshold, fallback_top1)).map_err(value_err)?;
        Ok(preds.into_iter().map(|p| p.codes.iter().map(|c| c.to_string()).zip(p.probs).collect()).collect())
    }

    /// Full probability rows in label-space order.
    fn probabilities(&self, py: Python<'_>, texts: Vec<String>, langs: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let inputs = pairs(texts, langs)?;
        let probs = py.detach(|| nn::predict_proba(&self.inner, &inputs)).map_err(value_err)?;
        Ok(probs.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// Pooled representations, one row per input.
    fn embed(&self, py: Python<'_>, texts: Vec<String>, langs: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let inputs = pairs(texts, langs)?;
        let emb = py.detach(|| nn::embed(&self.inner, &inputs)).map_err(value_err)?;
        Ok(emb.rows().into_iter().map(|r| r.to_vec()).collect())
    }
}

fn pairs(texts: Vec<String>, tags: Vec<String>) -> PyResult<Vec<(LanguageTag, String)>> {
    if texts.len() != tags.len() {
        return Err(PyValueError::new_err("texts and langs differ in length"));
    }
    Ok(langs(&tags)?.into_iter().zip(texts).collect())
}

/// Trains a model from cleaned CSV files. `model_config` and `train_config`
/// are JSON objects overriding the defaults; returns the model and the
/// training log lines.
#[pyfunction]
#[pyo3(signature = (train_csv, val_csv, labels, model_config = None, train_config = None))]
fn train(
    py: Python<'_>,
    train_csv: PathBuf,
    val_csv: PathBuf,
    labels: &PyLabelSpace,
    model_config: Option<&str>,
    train_config: Option<&str>,
) -> PyResult<(PyModel, Vec<String>)> {
    let space = &labels.inner;
    let read = |p: &PathBuf| -> PyResult<CleanDataset> {
        let f = std::fs::File::open(p).map_err(|e| PyIOError::new_err(format!("{}: {e}", p.display())))?;
        CleanDataset::read_csv(f, space).map_err(value_err)
    };
    let (tr, va) = (read(&train_csv)?, read(&val_csv)?);
    let mut mcfg: nn::ModelConfig = serde_json::from_str(model_config.unwrap_or("{}")).map_err(value_err)?;
    mcfg.label_count = space.len();
    let tcfg: nn::TrainConfig = serde_json::from_str(train_config.unwrap_or("{}")).map_err(value_err)?;
    let out = py.detach(|| nn::train_with_log(&tr, &va, space, &mcfg, &tcfg, |_| {})).map_err(value_err)?;
    Ok((PyModel { inner: out.checkpoint }, out.log.iter().map(|e| e.to_string()).collect()))
}

/// Lowercased, transliterated, whitespace-collapsed text. `table` maps single
/// characters to replacements; the built-in table is used when omitted.
#[pyfunction(name = "normalize_text")]
#[pyo3(signature = (text, table = None))]
fn py_normalize_text(text: &str, table: Option<BTreeMap<char, String>>) -> String {
    let t = table.map_or_else(Transliteration::default, Transliteration::from_pairs);
    normalize_text(text, &t)
}

/// Model input ids: `[CLS] tag [SEP] text`, truncated or padded to `max_len`.
#[pyfunction]
fn encode(lang: &str, text: &str, max_len: usize) -> PyResult<Vec<u32>> {
    let tag: LanguageTag = lang.parse().map_err(value_err)?;
    textenc::encode(tag, text, max_len).map(|e| e.token_ids).map_err(value_err)
}

/// Micro-averaged metrics of predicted against target index sets.
#[pyfunction(name = "compute_metrics")]
fn py_compute_metrics(pred: Vec<Vec<usize>>, targets: Vec<Vec<usize>>) -> PyResult<BTreeMap<&'static str, f64>> {
    let r = compute_metrics(&pred, &targets).map_err(value_err)?;
    Ok(BTreeMap::from([
        ("accuracy", r.accuracy),
        ("precision", r.precision),
        ("recall", r.recall),
        ("f1", r.f1),
        ("n", r.n as f64),
    ]))
}

/// `(threshold, value)` maximizing `metric` over the k/100 grid.
#[pyfunction(name = "grid_search_threshold")]
fn py_grid_search(probs: Vec<Vec<f64>>, targets: Vec<Vec<usize>>, metric: &str) -> PyResult<(f64, f64)> {
    let n = probs.len();
    let pm = PredictionMatrix::new(matrix(probs)?, targets, vec![LanguageTag::Unk; n]).map_err(value_err)?;
    let m: Metric = metric.parse().map_err(value_err)?;
    grid_search_threshold(&pm, m, &Grid::default()).map_err(value_err)
}

/// Optimal thresholds per metric and language: `{metric: {lang: {threshold, value, n}}}`.
#[pyfunction]
fn calibrate(
    py: Python<'_>,
    probs: Vec<Vec<f64>>,
    targets: Vec<Vec<usize>>,
    langs: Vec<String>,
) -> PyResult<Py<PyAny>> {
    let tags = self::langs(&langs)?;
    let pm = PredictionMatrix::new(matrix(probs)?, targets, tags).map_err(value_err)?;
    json_to_py(py, &calibrate_per_language(&pm, &Grid::default()).to_json())
}

/// Agreement statistics of an annotated review CSV.
#[pyfunction(name = "score_review")]
fn py_score_review(path: PathBuf) -> PyResult<BTreeMap<&'static str, Option<f64>>> {
    let f = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let s = score_review(&ReviewSample::read_csv(f).map_err(value_err)?).map_err(value_err)?;
    Ok(BTreeMap::from([
        ("accuracy", s.accuracy),
        ("exact_agreement", s.exact_agreement),
        ("substantial_agreement", s.substantial_agreement),
        ("n_checked", Some(s.n_checked as f64)),
    ]))
}

/// Gaussian-kernel trend: dict with bandwidth, xs, ys, mark_low, mark_high.
#[pyfunction(name = "kernel_trend")]
fn py_kernel_trend(py: Python<'_>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Py<PyAny>> {
    let c = kernel_trend(&x, &y).map_err(value_err)?;
    json_to_py(py, &serde_json::to_value(c).map_err(value_err)?)
}

/// OLS with HC1 standard errors. `columns` is a list of `(name, values)`; the
/// intercept is appended as "Constant".
#[pyfunction(name = "ols_hc1")]
fn py_ols_hc1(py: Python<'_>, y: Vec<f64>, columns: Vec<(String, Vec<f64>)>) -> PyResult<Py<PyAny>> {
    let cols: Vec<(&str, Vec<f64>)> = columns.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    let r = ols_hc1(&y, &cols).map_err(value_err)?;
    json_to_py(py, &serde_json::to_value(r).map_err(value_err)?)
}

#[pymodule]
fn occode_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabelSpace>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(py_normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(py_compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(py_grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(py_score_review, m)?)?;
    m.add_function(wrap_pyfunction!(py_kernel_trend, m)?)?;
    m.add_function(wrap_pyfunction!(py_ols_hc1, m)?)?;
    Ok(())
}
