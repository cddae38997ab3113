//! Python module `lsl_probe`: data loading, training, selection and the
//! clustering metrics of the core crate.

use std::path::PathBuf;

use lsl_core::config::TrainConfig;
use lsl_core::data::{load_embeddings, load_task, EmbeddingIndex, TaskDataset};
use lsl_core::lsl::{self, LatentPosterior, Regularization};
use lsl_core::metrics::{self, Contingency};
use lsl_core::synth::{self, SynthConfig};
use lsl_core::trainer::{self, rundir, RunArtifact};
use lsl_core::Error;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Builds a config from defaults plus `key=value` overrides taken from a dict.
fn config_from(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            config.set(&key, &value).map_err(to_py)?;
        }
    }
    Ok(config)
}

/// Layer-wise token embeddings keyed by sentence id.
#[pyclass(frozen)]
struct Embeddings {
    inner: EmbeddingIndex,
}

#[pymethods]
impl Embeddings {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_embeddings(path).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(num_layers, dim)` shared by every sentence.
    fn layers_and_dim(&self) -> PyResult<(usize, usize)> {
        self.inner.layers_and_dim().map_err(to_py)
    }
}

/// Binary span-classification examples.
#[pyclass(frozen)]
struct Task {
    inner: TaskDataset,
}

#[pymethods]
impl Task {
    #[staticmethod]
    #[pyo3(signature = (path, embeddings, strict=false))]
    fn load(path: PathBuf, embeddings: &Embeddings, strict: bool) -> PyResult<Self> {
        Ok(Self {
            inner: load_task(path, &embeddings.inner, strict).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn split(&self) -> &'static str {
        self.inner.split.as_str()
    }

    #[getter]
    fn labels(&self) -> Vec<bool> {
        self.inner.examples.iter().map(|t| t.label).collect()
    }

    /// Gold subclass per example, `None` for negatives.
    #[getter]
    fn gold(&self) -> Vec<Option<String>> {
        self.inner.examples.iter().map(|t| t.gold.clone()).collect()
    }
}

/// One trained model and its dev-set posteriors.
#[pyclass(frozen)]
struct Run {
    artifact: RunArtifact,
    dev: TaskDataset,
}

#[pymethods]
impl Run {
    #[getter]
    fn dev_accuracy(&self) -> f64 {
        self.artifact.dev_accuracy
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.artifact.best_epoch
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.artifact.config.seed
    }

    #[getter]
    fn hard_classes(&self) -> Vec<usize> {
        self.artifact.dev_assignments()
    }

    #[getter]
    fn binary_probs(&self) -> Vec<f64> {
        self.artifact
            .dev_posteriors
            .iter()
            .map(|p| p.binary_prob)
            .collect()
    }

    #[getter]
    fn latent_logits(&self) -> Vec<Vec<f64>> {
        self.artifact
            .dev_posteriors
            .iter()
            .map(|p| p.latent_logits.clone())
            .collect()
    }

    #[getter]
    fn step_losses(&self) -> Vec<f64> {
        self.artifact.step_losses.clone()
    }

    /// B³, accuracy, diversity and uncertainty on gold-positive dev points.
    fn scores<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = trainer::score_run(&self.artifact, &self.dev).map_err(to_py)?;
        json_to_py(py, &s)
    }

    /// Writes the run directory used by the command-line tool.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        rundir::write_run(dir, &self.artifact, &self.dev)
            .map(|_| ())
            .map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (train, dev, embeddings, config=None))]
fn train(
    py: Python<'_>,
    train: &Task,
    dev: &Task,
    embeddings: &Embeddings,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<Run> {
    let config = config_from(config)?;
    let artifact = py
        .detach(|| trainer::train(&train.inner, &dev.inner, &embeddings.inner, &config))
        .map_err(to_py)?;
    Ok(Run {
        artifact,
        dev: dev.inner.clone(),
    })
}

/// Trains restarts with seeds `seed + k`; returns `(runs, chosen, scores)`.
#[pyfunction]
#[pyo3(signature = (train, dev, embeddings, config=None, runs=5, jobs=1))]
fn train_and_select(
    py: Python<'_>,
    train: &Task,
    dev: &Task,
    embeddings: &Embeddings,
    config: Option<&Bound<'_, PyDict>>,
    runs: usize,
    jobs: usize,
) -> PyResult<(Vec<Run>, usize, Vec<f64>)> {
    let config = config_from(config)?;
    let (artifacts, selection) = py
        .detach(|| {
            trainer::train_and_select(
                &train.inner,
                &dev.inner,
                &embeddings.inner,
                &config,
                runs,
                jobs,
            )
        })
        .map_err(to_py)?;
    let runs = artifacts
        .into_iter()
        .map(|artifact| Run {
            artifact,
            dev: dev.inner.clone(),
        })
        .collect();
    Ok((runs, selection.chosen, selection.scores))
}

/// Generates a synthetic benchmark; returns `(embeddings, train, dev, manifest)`.
/// Writes the benchmark files too when `out` is given.
#[pyfunction]
#[pyo3(signature = (out=None, **params))]
fn generate_synth<'py>(
    py: Python<'py>,
    out: Option<PathBuf>,
    params: Option<&Bound<'py, PyDict>>,
) -> PyResult<(Embeddings, Task, Task, Bound<'py, PyAny>)> {
    let config: SynthConfig = match params {
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    let bench = synth::generate(&config).map_err(to_py)?;
    if let Some(dir) = out {
        bench.write(dir).map_err(to_py)?;
    }
    let manifest = json_to_py(py, &bench.manifest)?;
    Ok((
        Embeddings {
            inner: bench.embeddings,
        },
        Task { inner: bench.train },
        Task { inner: bench.dev },
        manifest,
    ))
}

/// `(precision, recall, f1)` of `pred` against `gold`.
#[pyfunction]
#[pyo3(signature = (gold, pred, restrict_to=None))]
fn b_cubed(
    gold: Vec<String>,
    pred: Vec<usize>,
    restrict_to: Option<String>,
) -> PyResult<(f64, f64, f64)> {
    let b = metrics::b_cubed(&gold, &pred, restrict_to.as_ref()).map_err(to_py)?;
    Ok((b.precision, b.recall, b.f1))
}

type LabelMatrix = (Vec<String>, Vec<Vec<Option<f64>>>);

/// `(labels, matrix)` of gold-label nPMI; undefined cells are `None`.
#[pyfunction]
fn npmi_matrix(gold: Vec<String>, pred: Vec<usize>) -> PyResult<LabelMatrix> {
    let c = Contingency::from_assignments(&gold, &pred).map_err(to_py)?;
    let m = metrics::npmi_matrix(&c);
    Ok((m.labels, m.values))
}

#[pyfunction]
fn diversity(pred: Vec<usize>) -> PyResult<f64> {
    metrics::diversity(&pred).map_err(to_py)
}

#[pyfunction]
fn uncertainty(distributions: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::uncertainty(&distributions).map_err(to_py)
}

#[pyfunction]
fn binary_accuracy(probs: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::binary_accuracy(&probs, &labels).map_err(to_py)
}

/// Softmax distribution, hard class and marginal binary probability of one
/// latent logit vector.
#[pyfunction]
fn posterior<'py>(py: Python<'py>, latent_logits: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &LatentPosterior::from_logits(latent_logits))
}

/// Regularized loss terms of a batch of latent logit vectors.
#[pyfunction]
#[pyo3(signature = (latent_logits, labels, alpha=lsl::DEFAULT_ALPHA, beta=lsl::DEFAULT_BETA))]
fn batch_loss<'py>(
    py: Python<'py>,
    latent_logits: Vec<Vec<f64>>,
    labels: Vec<bool>,
    alpha: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let reg = Regularization::new(alpha, beta).map_err(to_py)?;
    let posteriors: Vec<LatentPosterior> = latent_logits
        .into_iter()
        .map(LatentPosterior::from_logits)
        .collect();
    let (loss, _) = lsl::loss_and_logit_grads(&posteriors, &labels, reg).map_err(to_py)?;
    let mi = lsl::mutual_information(&posteriors).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("total", loss.total)?;
    d.set_item("lsl", loss.lsl)?;
    d.set_item("batch_entropy", loss.batch_entropy)?;
    d.set_item("instance_entropy", loss.instance_entropy)?;
    d.set_item("mutual_information", mi)?;
    Ok(d.into_any())
}

/// `(chosen, scores)` for aligned hard assignments of several runs.
#[pyfunction]
fn select_consistent(assignments: Vec<Vec<usize>>) -> PyResult<(usize, Vec<f64>)> {
    let s = trainer::select_consistent(&assignments).map_err(to_py)?;
    Ok((s.chosen, s.scores))
}

#[pyfunction]
#[pyo3(signature = (results, threshold=trainer::DEFAULT_CAPACITY_THRESHOLD))]
fn choose_hidden_size(results: Vec<(usize, f64)>, threshold: f64) -> PyResult<usize> {
    trainer::choose_hidden_size(&results, threshold).map_err(to_py)
}

#[pymodule]
fn lsl_probe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Embeddings>()?;
    m.add_class::<Task>()?;
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_and_select, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    m.add_function(wrap_pyfunction!(b_cubed, m)?)?;
    m.add_function(wrap_pyfunction!(npmi_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(diversity, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(binary_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(posterior, m)?)?;
    m.add_function(wrap_pyfunction!(batch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(select_consistent, m)?)?;
    m.add_function(wrap_pyfunction!(choose_hidden_size, m)?)?;
    Ok(())
}
