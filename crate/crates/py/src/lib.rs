//! Python bindings. Plain data crosses the boundary as dicts, lists and
//! tuples; corpora, annotation sets, aligned mentions and models stay on
//! the Rust side as opaque classes.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use metael_core::alignment::{agreement_statistics, build_mention_groups, AlignmentMode, MentionGroup};
use metael_core::baselines::{apply_baseline as apply_policy, BaselineKind, BaselinePolicy, VoteNormalization};
use metael_core::corpus::{
    load_annotation_set, load_corpus, load_ground_truth, parse_annotation_set, parse_ground_truth, write_records,
    AnnotationRecord, AnnotationSet, Corpus, Document, EntityAnnotation, GroundTruth,
};
use metael_core::evaluation::{el_prf as prf, paired_t_test as t_test};
use metael_core::features::{build_training_stats, CandidateDictionary};
use metael_core::metael::{annotate, classifier_diagnostics, Strategy};
use metael_core::synth::{generate, write_dataset, SynthParams};
use metael_core::{Error, MetaElConfig, MetaElModel, UnifiedAnnotationSet};

create_exception!(
    metael,
    MetaElError,
    PyValueError,
    "Invalid input for a metael operation."
);

fn err(e: Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        MetaElError::new_err(e.to_string())
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| err(e.into()))
}

fn parse_mode(mode: &str) -> PyResult<AlignmentMode> {
    mode.parse().map_err(err)
}

type Record = (String, usize, String, Option<String>);

/// Runs records through the same parser as files, so validation and entity
/// canonicalization match exactly.
fn records_jsonl(records: Vec<Record>) -> PyResult<Vec<u8>> {
    let recs: Vec<AnnotationRecord> = records
        .into_iter()
        .map(|(doc, start, surface, entity)| AnnotationRecord {
            doc,
            start,
            surface,
            entity,
            system: None,
            path: None,
        })
        .collect();
    let mut buf = Vec::new();
    write_records(&mut buf, &recs).map_err(|e| PyOSError::new_err(e.to_string()))?;
    Ok(buf)
}

fn as_records(anns: &[EntityAnnotation]) -> Vec<(String, usize, String, String)> {
    anns.iter()
        .map(|a| {
            (
                a.mention.doc_id.clone(),
                a.mention.position,
                a.mention.surface.clone(),
                a.entity.as_str().to_string(),
            )
        })
        .collect()
}

/// Documents keyed by id.
#[pyclass(name = "Corpus", module = "metael", frozen)]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Builds a corpus from `(id, text)` pairs.
    #[new]
    fn new(documents: Vec<(String, String)>) -> PyResult<Self> {
        let docs = documents.into_iter().map(|(id, text)| Document { id, text }).collect();
        Ok(Self {
            inner: Corpus::new(docs).map_err(err)?,
        })
    }

    /// Reads a JSON-lines file of `{"id", "text"}` objects.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_corpus(path).map_err(err)?,
        })
    }

    fn ids(&self) -> Vec<String> {
        self.inner.documents().iter().map(|d| d.id.clone()).collect()
    }

    fn text(&self, id: &str) -> Option<String> {
        self.inner.get(id).map(|d| d.text.clone())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// One system's annotations.
#[pyclass(name = "AnnotationSet", module = "metael", frozen)]
struct PyAnnotationSet {
    inner: AnnotationSet,
}

#[pymethods]
impl PyAnnotationSet {
    /// `records` are `(doc, start, surface, entity)` tuples, validated
    /// against `corpus`.
    #[new]
    fn new(system_id: &str, records: Vec<Record>, corpus: &PyCorpus) -> PyResult<Self> {
        let buf = records_jsonl(records)?;
        let inner = parse_annotation_set(Cursor::new(buf), system_id, system_id, &corpus.inner).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf, system_id: &str, corpus: &PyCorpus) -> PyResult<Self> {
        Ok(Self {
            inner: load_annotation_set(path, system_id, &corpus.inner).map_err(err)?,
        })
    }

    #[getter]
    fn system_id(&self) -> String {
        self.inner.system_id.clone()
    }

    fn records(&self) -> Vec<(String, usize, String, String)> {
        as_records(&self.inner.annotations)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Gold annotations. Records with a `None` entity are dropped.
#[pyclass(name = "GroundTruth", module = "metael", frozen)]
struct PyGroundTruth {
    inner: GroundTruth,
}

#[pymethods]
impl PyGroundTruth {
    #[new]
    fn new(records: Vec<Record>, corpus: &PyCorpus) -> PyResult<Self> {
        let buf = records_jsonl(records)?;
        let inner = parse_ground_truth(Cursor::new(buf), "ground truth", &corpus.inner).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf, corpus: &PyCorpus) -> PyResult<Self> {
        Ok(Self {
            inner: load_ground_truth(path, &corpus.inner).map_err(err)?,
        })
    }

    fn records(&self) -> Vec<(String, usize, String, String)> {
        as_records(&self.inner.annotations)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Surface form to number of knowledge-base candidates.
#[pyclass(name = "CandidateDictionary", module = "metael", frozen)]
struct PyCandidates {
    inner: CandidateDictionary,
}

#[pymethods]
impl PyCandidates {
    #[new]
    #[pyo3(signature = (entries = None))]
    fn new(entries: Option<BTreeMap<String, u64>>) -> Self {
        let mut inner = CandidateDictionary::new();
        for (surface, count) in entries.unwrap_or_default() {
            inner.insert(&surface, count);
        }
        Self { inner }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CandidateDictionary::load(path).map_err(err)?,
        })
    }

    fn get(&self, surface: &str) -> u64 {
        self.inner.get(surface)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// System outputs (and optionally gold) aligned into one group per mention.
#[pyclass(name = "MentionGroups", module = "metael", frozen)]
struct PyGroups {
    inner: Vec<MentionGroup>,
    systems: Vec<String>,
    mode: AlignmentMode,
}

#[pymethods]
impl PyGroups {
    /// Aligns the sets; their order is the system order used downstream.
    #[staticmethod]
    #[pyo3(signature = (sets, corpus, ground_truth = None, mode = "strong"))]
    fn align(
        sets: Vec<PyRef<'_, PyAnnotationSet>>,
        corpus: &PyCorpus,
        ground_truth: Option<&PyGroundTruth>,
        mode: &str,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode)?;
        let sets: Vec<AnnotationSet> = sets.iter().map(|s| s.inner.clone()).collect();
        let inner = build_mention_groups(&sets, ground_truth.map(|g| &g.inner), mode, &corpus.inner).map_err(err)?;
        Ok(Self {
            inner,
            systems: sets.into_iter().map(|s| s.system_id).collect(),
            mode,
        })
    }

    #[getter]
    fn systems(&self) -> Vec<String> {
        self.systems.clone()
    }

    /// Recogniser-bucket agreement statistics as a dict.
    fn agreement<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = agreement_statistics(&self.inner, self.systems.len()).map_err(err)?;
        to_py(py, &report)
    }

    /// Per-system correctness on these groups, the priors some baselines use.
    fn training_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &build_training_stats(&self.inner, &self.systems).map_err(err)?)
    }

    /// The groups themselves as a list of dicts.
    fn to_list<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Unified output with the provenance of every annotation.
#[pyclass(name = "UnifiedAnnotations", module = "metael", frozen)]
struct PyUnified {
    inner: UnifiedAnnotationSet,
}

#[pymethods]
impl PyUnified {
    /// `(doc, start, surface, entity, system, path)` tuples.
    fn records(&self) -> Vec<(String, usize, String, String, String, String)> {
        self.inner
            .annotations
            .iter()
            .zip(&self.inner.provenance)
            .map(|(a, p)| {
                (
                    a.mention.doc_id.clone(),
                    a.mention.position,
                    a.mention.surface.clone(),
                    a.entity.as_str().to_string(),
                    p.system.clone(),
                    String::from(p.path),
                )
            })
            .collect()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    /// The annotations alone, for scoring or further combination.
    #[pyo3(signature = (system_id = "unified"))]
    fn to_annotation_set(&self, system_id: &str) -> PyResult<PyAnnotationSet> {
        Ok(PyAnnotationSet {
            inner: AnnotationSet::new(system_id, self.inner.annotations.clone()).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Anything that carries annotations: an AnnotationSet, GroundTruth or
/// UnifiedAnnotations.
fn annotations_of(obj: &Bound<'_, PyAny>) -> PyResult<Vec<EntityAnnotation>> {
    if let Ok(s) = obj.cast::<PyAnnotationSet>() {
        return Ok(s.get().inner.annotations.clone());
    }
    if let Ok(u) = obj.cast::<PyUnified>() {
        return Ok(u.get().inner.annotations.clone());
    }
    if let Ok(g) = obj.cast::<PyGroundTruth>() {
        return Ok(g.get().inner.annotations.clone());
    }
    Err(MetaElError::new_err(
        "expected AnnotationSet, GroundTruth or UnifiedAnnotations",
    ))
}

fn candidates_or_empty(c: Option<&PyCandidates>) -> CandidateDictionary {
    c.map(|c| c.inner.clone()).unwrap_or_default()
}

/// A trained ensemble.
#[pyclass(name = "Model", module = "metael", frozen)]
struct PyModel {
    inner: MetaElModel,
}

#[pymethods]
impl PyModel {
    /// Trains on gold-bearing groups. `config` is a dict with any of the
    /// fields of the learner configuration (features, forest, margin, ...).
    #[staticmethod]
    #[pyo3(signature = (corpus, groups, candidates = None, config = None))]
    fn train(
        py: Python<'_>,
        corpus: &PyCorpus,
        groups: &PyGroups,
        candidates: Option<&PyCandidates>,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let mut cfg: MetaElConfig = match config {
            Some(c) => from_py(c)?,
            None => MetaElConfig::default(),
        };
        cfg.alignment = groups.mode;
        let cand = candidates_or_empty(candidates);
        let inner = py
            .detach(|| metael_core::train_metael(&corpus.inner, &groups.inner, &groups.systems, &cand, &cfg))
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: MetaElModel::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MetaElModel::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn systems(&self) -> Vec<String> {
        self.inner.systems.clone()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    /// Class balance and instance counts seen during training.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.summary)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Unifies `groups` with the LOOSE or STRICT strategy.
    #[pyo3(signature = (corpus, groups, strategy = "loose", candidates = None))]
    fn annotate(
        &self,
        py: Python<'_>,
        corpus: &PyCorpus,
        groups: &PyGroups,
        strategy: &str,
        candidates: Option<&PyCandidates>,
    ) -> PyResult<PyUnified> {
        let strategy = match strategy {
            "loose" => Strategy::Loose,
            "strict" => Strategy::Strict,
            other => return Err(MetaElError::new_err(format!("unknown strategy {other:?}"))),
        };
        let cand = candidates_or_empty(candidates);
        let inner = py
            .detach(|| annotate(&self.inner, &corpus.inner, &groups.inner, &cand, strategy))
            .map_err(err)?;
        Ok(PyUnified { inner })
    }

    /// Multi-label and per-system binary scores on gold-bearing groups.
    #[pyo3(signature = (corpus, groups, candidates = None))]
    fn diagnostics<'py>(
        &self,
        py: Python<'py>,
        corpus: &PyCorpus,
        groups: &PyGroups,
        candidates: Option<&PyCandidates>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cand = candidates_or_empty(candidates);
        let d = classifier_diagnostics(&self.inner, &corpus.inner, &groups.inner, &cand).map_err(err)?;
        to_py(py, &d)
    }
}

/// Applies an unsupervised baseline. Kinds other than `random` and
/// `upper_bound` need training scores, taken from `model` or computed from
/// `train_groups`.
#[pyfunction]
#[pyo3(signature = (groups, kind, model = None, train_groups = None, seed = 1, normalization = "sum"))]
fn apply_baseline(
    groups: &PyGroups,
    kind: &str,
    model: Option<&PyModel>,
    train_groups: Option<&PyGroups>,
    seed: u64,
    normalization: &str,
) -> PyResult<PyUnified> {
    let kind: BaselineKind = kind.parse().map_err(err)?;
    let priors = match (kind.needs_priors(), model, train_groups) {
        (false, _, _) => None,
        (true, Some(m), _) => Some(m.inner.stats.clone()),
        (true, None, Some(t)) => Some(build_training_stats(&t.inner, &t.systems).map_err(err)?),
        (true, None, None) => {
            return Err(MetaElError::new_err(format!(
                "baseline {} needs a model or train_groups for its priors",
                kind.name()
            )))
        }
    };
    let mut policy = BaselinePolicy::new(kind, priors, seed);
    policy.normalization = normalization.parse::<VoteNormalization>().map_err(err)?;
    Ok(PyUnified {
        inner: apply_policy(&policy, &groups.inner).map_err(err)?,
    })
}

/// Precision, recall and F1 of `output` against the gold annotations.
#[pyfunction]
#[pyo3(signature = (output, ground_truth, mode = "strong"))]
fn el_prf<'py>(
    py: Python<'py>,
    output: &Bound<'py, PyAny>,
    ground_truth: &PyGroundTruth,
    mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let score = prf(&annotations_of(output)?, &ground_truth.inner, parse_mode(mode)?);
    to_py(py, &score)
}

/// Two-tailed paired t-test over per-split F1.
#[pyfunction]
#[pyo3(signature = (a, b, ground_truth, mode = "strong", n_splits = 20, alpha = 0.05, shuffle_seed = None))]
#[allow(clippy::too_many_arguments)]
fn paired_t_test<'py>(
    py: Python<'py>,
    a: &Bound<'py, PyAny>,
    b: &Bound<'py, PyAny>,
    ground_truth: &PyGroundTruth,
    mode: &str,
    n_splits: usize,
    alpha: f64,
    shuffle_seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let result = t_test(
        &annotations_of(a)?,
        &annotations_of(b)?,
        &ground_truth.inner,
        parse_mode(mode)?,
        n_splits,
        alpha,
        shuffle_seed,
    )
    .map_err(err)?;
    to_py(py, &result)
}

#[pyfunction]
fn canonicalize_entity(raw: &str) -> PyResult<String> {
    Ok(metael_core::canonicalize_entity(raw).map_err(err)?.into_string())
}

/// Generates a synthetic dataset. `params` is a dict of generator settings;
/// with `out_dir` the files are also written there. Returns a dict with
/// `train` and `test` (each `corpus`, `ground_truth`, `systems`),
/// `candidates` and `system_order`.
#[pyfunction]
#[pyo3(signature = (params = None, out_dir = None))]
fn synth<'py>(
    py: Python<'py>,
    params: Option<&Bound<'py, PyAny>>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let params: SynthParams = match params {
        Some(p) => from_py(p)?,
        None => SynthParams::default(),
    };
    let data = generate(&params).map_err(err)?;
    if let Some(dir) = &out_dir {
        write_dataset(&data, dir).map_err(err)?;
    }
    let out = pyo3::types::PyDict::new(py);
    for (name, split) in [("train", &data.train), ("test", &data.test)] {
        let d = pyo3::types::PyDict::new(py);
        d.set_item(
            "corpus",
            PyCorpus {
                inner: split.corpus.clone(),
            },
        )?;
        d.set_item(
            "ground_truth",
            PyGroundTruth {
                inner: split.gt.clone(),
            },
        )?;
        let systems = split
            .systems
            .iter()
            .map(|s| Py::new(py, PyAnnotationSet { inner: s.clone() }))
            .collect::<PyResult<Vec<_>>>()?;
        d.set_item("systems", systems)?;
        out.set_item(name, d)?;
    }
    out.set_item(
        "candidates",
        PyCandidates {
            inner: data.candidates.clone(),
        },
    )?;
    out.set_item("system_order", data.system_ids.clone())?;
    Ok(out.into_any())
}

#[pymodule]
fn metael(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MetaElError", m.py().get_type::<MetaElError>())?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyAnnotationSet>()?;
    m.add_class::<PyGroundTruth>()?;
    m.add_class::<PyCandidates>()?;
    m.add_class::<PyGroups>()?;
    m.add_class::<PyUnified>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(apply_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(el_prf, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize_entity, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
