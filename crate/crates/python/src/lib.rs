//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use tegraph::counterfactual::{search_trace, CounterfactualEdit, SearchLevel};
use tegraph::datagen::{generate_corpus, GeneratorConfig};
use tegraph::graph::{expand, SAMPLE_WINDOWS};
use tegraph::ingest::{load_procedure, ProcedureRecord};
use tegraph::model::{DurationClass, ModelCheckpoint, ModelKind, TrainConfig};
use tegraph::pipeline::{predict_procedure, procedure_snapshots, train_checkpoint, Sampling};
use tegraph_service::{ServiceError, Session};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn service_err(e: ServiceError) -> PyErr {
    match e {
        ServiceError::InvalidEdit(_) | ServiceError::EmptyStack | ServiceError::BadRequest(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => err(other),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value
        .py()
        .import("json")?
        .call_method1("dumps", (value,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn load_corpus(dir: &PathBuf) -> PyResult<Vec<ProcedureRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_procedure(p).map_err(err))
        .collect()
}

/// Writes a synthetic corpus to `out_dir` and returns the procedure count.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7, noise = 0.5))]
fn generate(out_dir: PathBuf, seed: u64, noise: f64) -> PyResult<usize> {
    let corpus = generate_corpus(&GeneratorConfig {
        seed,
        noise,
        ..GeneratorConfig::default()
    })
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    corpus.save(&out_dir).map_err(err)?;
    Ok(corpus.records.len())
}

/// Trains on every procedure in `corpus_dir` and saves the checkpoint.
#[pyfunction]
#[pyo3(signature = (corpus_dir, out_path, model = "te_gcn", epochs = 60, hidden = 16, depth = 3, seed = 0))]
fn train(
    py: Python<'_>,
    corpus_dir: PathBuf,
    out_path: PathBuf,
    model: &str,
    epochs: usize,
    hidden: usize,
    depth: usize,
    seed: u64,
) -> PyResult<Checkpoint> {
    let kind: ModelKind = parse(model)?;
    let records = load_corpus(&corpus_dir)?;
    let config = TrainConfig {
        kind,
        hidden,
        depth,
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: epochs,
        patience: 0,
        seed,
    };
    let ck = py.detach(|| {
        let refs: Vec<&ProcedureRecord> = records.iter().collect();
        train_checkpoint(&refs, &[], &config, Default::default(), Sampling::default())
    });
    let (ck, _) = ck.map_err(err)?;
    ck.save(&out_path).map_err(err)?;
    Ok(Checkpoint {
        inner: Arc::new(ck),
    })
}

#[pyclass(frozen)]
struct Checkpoint {
    inner: Arc<ModelCheckpoint>,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Checkpoint {
            inner: Arc::new(ModelCheckpoint::load(path).map_err(err)?),
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    /// Procedure-level prediction of a procedure file.
    #[pyo3(signature = (procedure_path, stride = 1))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        procedure_path: PathBuf,
        stride: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let record = load_procedure(procedure_path).map_err(err)?;
        let p = predict_procedure(&record, &self.inner, stride).map_err(err)?;
        to_py(py, &p)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }
}

/// What-if session over one window range of a procedure.
#[pyclass(name = "Session")]
struct PySession {
    inner: Session,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (checkpoint, procedure_path, window_start = 0, window_count = SAMPLE_WINDOWS))]
    fn new(
        checkpoint: &Checkpoint,
        procedure_path: PathBuf,
        window_start: usize,
        window_count: usize,
    ) -> PyResult<Self> {
        let record = load_procedure(procedure_path).map_err(err)?;
        let snaps = procedure_snapshots(&record, &checkpoint.inner.preprocessing);
        let end = window_start + window_count;
        if window_count == 0 || end > snaps.len() {
            return Err(PyValueError::new_err(format!(
                "windows [{window_start}, {end}) outside the procedure's {} windows",
                snaps.len()
            )));
        }
        let graph = expand(&record.procedure_id, &snaps[window_start..end]).map_err(err)?;
        let inner = Session::new(
            String::new(),
            String::new(),
            checkpoint.inner.clone(),
            graph,
        )
        .map_err(service_err)?;
        Ok(PySession { inner })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.edits.len()
    }

    fn predict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.prediction())
    }

    /// Applies an edit dict, e.g. `{"level": "topo", "member_id": "m0",
    /// "window": 3, "kind": "remove_speech"}`.
    fn apply_edit<'py>(
        &mut self,
        py: Python<'py>,
        edit: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let edit: CounterfactualEdit = from_py(edit)?;
        self.inner.apply(edit).map_err(service_err)?;
        to_py(py, &self.inner.prediction())
    }

    fn undo<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.inner.undo().map_err(service_err)?;
        to_py(py, &self.inner.prediction())
    }

    /// Counterfactual search on the current graph; does not change the session.
    #[pyo3(signature = (level = "topo", target = None))]
    fn suggest<'py>(
        &self,
        py: Python<'py>,
        level: &str,
        target: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let level: SearchLevel = parse(level)?;
        let target = match target {
            Some(t) => parse::<DurationClass>(t)?,
            None => {
                let current = self.inner.prediction().predicted_class;
                current.faster().ok_or_else(|| {
                    PyValueError::new_err(format!("no class faster than {current}"))
                })?
            }
        };
        let (g, ck) = (&self.inner.current, &self.inner.checkpoint);
        let result = py
            .detach(|| search_trace(g, ck, level, target))
            .map_err(err)?;
        to_py(py, &result)
    }

    /// Graph document of the current graph.
    fn graph<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let (lo, hi) = self.inner.current.window_range;
        to_py(py, &self.inner.graph_view(lo, hi))
    }
}

#[pymodule]
pub fn tegraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Checkpoint>()?;
    m.add_class::<PySession>()?;
    Ok(())
}
