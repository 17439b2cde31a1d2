//! Python bindings.
//!
//! Structured values cross the boundary as plain Python objects (dicts,
//! lists, str, int, float) using the same JSON shapes as the HTTP API.

use std::collections::BTreeSet;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;
use ska_core::agreement::ReportPhase;
use ska_core::codebook::RoundAdditions;
use ska_core::document::{export_corpus, import_corpus, CorpusDocument, ExportOptions};
use ska_core::workbench::Submission;
use ska_core::{
    AnnotatorId, ErrorClass, IngestOptions, NormalizedConcept, RoundPhase, Store, StudyConfig,
};

create_exception!(
    ska,
    SkaError,
    PyException,
    "Base class of workbench errors."
);
create_exception!(
    ska,
    ConflictError,
    SkaError,
    "Phase, conflict or incomplete-data error."
);
create_exception!(ska, ValidationError, SkaError, "Invalid input.");
create_exception!(
    ska,
    ForbiddenError,
    SkaError,
    "Unqualified or unauthorized actor."
);
create_exception!(ska, NotFoundError, SkaError, "Unknown id.");

fn err(e: ska_core::Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Conflict => ConflictError::new_err(msg),
        ErrorClass::Validation => ValidationError::new_err(msg),
        ErrorClass::Forbidden => ForbiddenError::new_err(msg),
        ErrorClass::NotFound => NotFoundError::new_err(msg),
        ErrorClass::Internal => SkaError::new_err(msg),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SkaError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| ValidationError::new_err(e.to_string()))
}

fn concepts(items: Vec<String>) -> PyResult<BTreeSet<NormalizedConcept>> {
    items
        .iter()
        .map(|s| ska_core::normalize(s).map_err(err))
        .collect()
}

/// `(value, gram_length)` of a surface string.
#[pyfunction]
fn normalize(surface: &str) -> PyResult<(String, usize)> {
    let c = ska_core::normalize(surface).map_err(err)?;
    Ok((c.value().to_owned(), c.gram_length()))
}

#[pyfunction]
fn format_percent(count: u64, total: u64) -> PyResult<String> {
    ska_core::format_percent(count, total).map_err(err)
}

/// Jaccard agreement of two surface lists after normalization.
#[pyfunction]
fn pairwise_agreement(a: Vec<String>, b: Vec<String>) -> PyResult<f64> {
    Ok(ska_core::pairwise_agreement(&concepts(a)?, &concepts(b)?))
}

/// Support level -> sorted concepts.
#[pyfunction]
fn partition_by_support(py: Python<'_>, sets: Vec<Vec<String>>) -> PyResult<Py<PyAny>> {
    let sets = sets
        .into_iter()
        .map(concepts)
        .collect::<PyResult<Vec<_>>>()?;
    let p = ska_core::partition_by_support(&sets).map_err(err)?;
    to_py(py, &p.by_support)
}

#[pyfunction]
fn ngram_distribution(py: Python<'_>, surfaces: Vec<String>) -> PyResult<Py<PyAny>> {
    let list = surfaces
        .iter()
        .map(|s| ska_core::normalize(s).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    to_py(py, &ska_core::ngram_distribution(&list))
}

/// Round after which no rules were added, given additions for rounds 1, 2, ...
#[pyfunction]
fn convergence(additions: Vec<usize>) -> Option<u32> {
    let history: Vec<RoundAdditions> = additions
        .iter()
        .enumerate()
        .map(|(i, n)| RoundAdditions {
            round: i as u32 + 1,
            added: *n,
        })
        .collect();
    ska_core::convergence_report(&history).converged_at
}

#[pyfunction]
#[pyo3(signature = (text, textbook_id = "textbook", min_section_chars = 200, title = None))]
fn ingest(
    py: Python<'_>,
    text: &str,
    textbook_id: &str,
    min_section_chars: usize,
    title: Option<String>,
) -> PyResult<Py<PyAny>> {
    let options = IngestOptions {
        textbook_id: textbook_id.into(),
        title,
        min_section_chars,
    };
    to_py(py, &ska_core::ingest_textbook(text, &options).map_err(err)?)
}

fn report_phase(s: &str) -> PyResult<ReportPhase> {
    s.parse().map_err(err)
}

/// A whole study held in memory.
#[pyclass(module = "ska")]
struct Workbench {
    inner: ska_core::Workbench,
}

#[pymethods]
impl Workbench {
    #[new]
    #[pyo3(signature = (participants = 3, qualification_threshold = 0.6, min_section_chars = 200))]
    fn new(
        participants: usize,
        qualification_threshold: f64,
        min_section_chars: usize,
    ) -> PyResult<Self> {
        let config = StudyConfig {
            participants,
            qualification_threshold,
            min_section_chars,
        };
        config.validate().map_err(err)?;
        Ok(Workbench {
            inner: ska_core::Workbench::new(config),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Workbench {
            inner: Store::new(path).load().map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Store::new(path).save(&self.inner).map_err(err)
    }

    #[pyo3(signature = (text, textbook_id = "textbook", min_section_chars = None, title = None))]
    fn ingest(
        &mut self,
        py: Python<'_>,
        text: &str,
        textbook_id: &str,
        min_section_chars: Option<usize>,
        title: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let options = IngestOptions {
            textbook_id: textbook_id.into(),
            title,
            min_section_chars: min_section_chars.unwrap_or(self.inner.config().min_section_chars),
        };
        let tb = self.inner.ingest(text, &options).map_err(err)?;
        to_py(py, tb)
    }

    fn section_body(&self, section_id: &str) -> PyResult<String> {
        Ok(self
            .inner
            .section(&section_id.into())
            .map_err(err)?
            .1
            .body()
            .to_owned())
    }

    #[pyo3(signature = (id, token, display_name = None))]
    fn register_annotator(
        &mut self,
        id: &str,
        token: String,
        display_name: Option<String>,
    ) -> PyResult<()> {
        let name = display_name.unwrap_or_else(|| id.to_owned());
        self.inner
            .register_annotator(id.into(), &name, token)
            .map_err(err)?;
        Ok(())
    }

    #[pyo3(signature = (section_id, gold, threshold = None))]
    fn set_qualification_test(
        &mut self,
        section_id: &str,
        gold: Vec<String>,
        threshold: Option<f64>,
    ) -> PyResult<()> {
        self.inner
            .set_qualification_test(section_id.into(), &gold, threshold)
            .map_err(err)?;
        Ok(())
    }

    /// Returns `(score, passed)`.
    fn qualify(&mut self, id: &str, surfaces: Vec<String>) -> PyResult<(f64, bool)> {
        let o = self.inner.qualify(&id.into(), &surfaces).map_err(err)?;
        Ok((o.score, o.passed))
    }

    /// Opens a round and returns its id.
    #[pyo3(signature = (chapter_id, participants, lead = None))]
    fn create_round(
        &mut self,
        chapter_id: &str,
        participants: Vec<String>,
        lead: Option<String>,
    ) -> PyResult<String> {
        let participants = participants.into_iter().map(AnnotatorId::from).collect();
        let round = self
            .inner
            .create_round(&chapter_id.into(), participants, lead.map(Into::into))
            .map_err(err)?;
        Ok(round.id.to_string())
    }

    fn round_status(&self, py: Python<'_>, round: &str) -> PyResult<Py<PyAny>> {
        let id = self.inner.find_round(round).map_err(err)?.id.clone();
        to_py(py, &self.inner.round_status(&id).map_err(err)?)
    }

    /// Submits `items` for `phase` and returns the round's phase afterwards.
    #[pyo3(signature = (round, actor, phase, items, expected_version = None))]
    fn submit(
        &mut self,
        round: &str,
        actor: &str,
        phase: &str,
        items: &Bound<'_, PyAny>,
        expected_version: Option<u64>,
    ) -> PyResult<String> {
        let id = self.inner.find_round(round).map_err(err)?.id.clone();
        let submission = match phase.parse::<RoundPhase>().map_err(err)? {
            RoundPhase::Annotating => Submission::Annotations(from_py(items)?),
            RoundPhase::MissedReview => Submission::ReviewDecisions(from_py(items)?),
            RoundPhase::Discussion => Submission::Resolutions(from_py(items)?),
            RoundPhase::CodebookUpdate => Submission::CodebookChanges(from_py(items)?),
            RoundPhase::Closed => {
                return Err(ValidationError::new_err(
                    "closed rounds take no submissions",
                ))
            }
        };
        let phase = self
            .inner
            .submit(&id, &actor.into(), submission, expected_version)
            .map_err(err)?;
        Ok(phase.to_string())
    }

    fn review_file(&self, py: Python<'_>, round: &str, reviewer: &str) -> PyResult<Py<PyAny>> {
        let id = self.inner.find_round(round).map_err(err)?.id.clone();
        to_py(
            py,
            &self.inner.review_file(&id, &reviewer.into()).map_err(err)?,
        )
    }

    fn disagreements(&self, py: Python<'_>, round: &str) -> PyResult<Py<PyAny>> {
        let id = self.inner.find_round(round).map_err(err)?.id.clone();
        to_py(py, &self.inner.disagreements(&id).map_err(err)?)
    }

    /// Applies codebook changes, closes the round, returns new rule ids.
    #[pyo3(signature = (round, actor, changes = None))]
    fn close_round(
        &mut self,
        round: &str,
        actor: &str,
        changes: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Vec<String>> {
        let id = self.inner.find_round(round).map_err(err)?.id.clone();
        let changes = match changes {
            Some(c) => from_py(c)?,
            None => Vec::new(),
        };
        let added = self
            .inner
            .close_round(&id, &actor.into(), changes)
            .map_err(err)?;
        Ok(added.into_iter().map(|r| r.to_string()).collect())
    }

    #[pyo3(signature = (round, phase = "before"))]
    fn agreement(&self, py: Python<'_>, round: &str, phase: &str) -> PyResult<Py<PyAny>> {
        let id = self.inner.find_round(round).map_err(err)?.id.clone();
        to_py(
            py,
            &self
                .inner
                .agreement_report(&id, report_phase(phase)?)
                .map_err(err)?,
        )
    }

    /// Statistics table as a dict, or rendered with `format="csv"` / `"text"`.
    #[pyo3(signature = (format = "json"))]
    fn stats_table(&self, py: Python<'_>, format: &str) -> PyResult<Py<PyAny>> {
        let table = self.inner.stats_table(None).map_err(err)?;
        match format {
            "json" => to_py(py, &table),
            "csv" => to_py(py, &table.to_csv().map_err(err)?),
            "text" => to_py(py, &table.to_text()),
            other => Err(ValidationError::new_err(format!(
                "unknown format {other:?}"
            ))),
        }
    }

    fn codebook(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.codebook())
    }

    fn seed_rule(&mut self, text: &str) -> PyResult<String> {
        Ok(self
            .inner
            .seed_rule(text, Vec::new())
            .map_err(err)?
            .id
            .to_string())
    }

    fn convergence(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.convergence())
    }

    /// The corpus document as a JSON string.
    #[pyo3(signature = (include_text = true, phase = None))]
    fn export(&self, include_text: bool, phase: Option<&str>) -> PyResult<String> {
        let phase_filter = phase.map(report_phase).transpose()?;
        export_corpus(
            &self.inner,
            ExportOptions {
                include_text,
                phase_filter,
            },
        )
        .to_json()
        .map_err(err)
    }

    #[staticmethod]
    fn import_json(text: &str) -> PyResult<Self> {
        let doc = CorpusDocument::from_json(text).map_err(err)?;
        Ok(Workbench {
            inner: import_corpus(&doc).map_err(err)?,
        })
    }

    fn validate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.validate().map_err(err)?)
    }
}

#[pymodule]
pub fn ska(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", ska_core::VERSION)?;
    m.add("SkaError", m.py().get_type::<SkaError>())?;
    m.add("ConflictError", m.py().get_type::<ConflictError>())?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    m.add("ForbiddenError", m.py().get_type::<ForbiddenError>())?;
    m.add("NotFoundError", m.py().get_type::<NotFoundError>())?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(format_percent, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(partition_by_support, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_class::<Workbench>()?;
    Ok(())
}
