//! Corpus documents: the JSON interchange form of a whole study.
//!
//! Exports are deterministic. Sections come in document order, annotations
//! sorted by (section, concept, annotator, phase, span), so identical state
//! always serializes to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agreement::ReportPhase;
use crate::codebook::{Codebook, CodebookRule};
use crate::config::StudyConfig;
use crate::corpus::{
    AnnotationPhase, Chapter, ConceptAnnotation, NormalizedConcept, Section, Span, Textbook,
};
use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, ChapterId, RoundId, SectionId, TextbookId};
use crate::protocol::{Annotator, QualificationTest, Round, RoundPhase};
use crate::review::{Resolution, ResolutionOutcome};
use crate::workbench::{RecordedDecision, Workbench};

pub const FORMAT_VERSION: &str = "ska-corpus/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub format_version: String,
    pub include_text: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_filter: Option<ReportPhase>,
    pub config: StudyConfig,
    pub textbooks: Vec<TextbookDoc>,
    pub annotators: Vec<Annotator>,
    #[serde(default)]
    pub qualification_test: Option<QualificationTest>,
    pub rounds: Vec<Round>,
    pub annotations: Vec<AnnotationDoc>,
    #[serde(default)]
    pub review_decisions: Vec<RecordedDecision>,
    #[serde(default)]
    pub resolutions: Vec<Resolution>,
    #[serde(default)]
    pub codebook: Vec<CodebookRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextbookDoc {
    pub id: TextbookId,
    pub title: String,
    pub chapters: Vec<ChapterDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterDoc {
    pub id: ChapterId,
    pub index: u32,
    pub title: String,
    pub sections: Vec<SectionDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionDoc {
    pub id: SectionId,
    pub heading: String,
    pub char_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    /// Consensus concepts; derived, ignored on import.
    #[serde(default)]
    pub concepts: Vec<NormalizedConcept>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub annotator_id: AnnotatorId,
    pub section_id: SectionId,
    pub round_id: RoundId,
    pub phase: AnnotationPhase,
    pub concept: NormalizedConcept,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportOptions {
    pub include_text: bool,
    pub phase_filter: Option<ReportPhase>,
}

impl ExportOptions {
    pub fn full() -> Self {
        ExportOptions {
            include_text: true,
            phase_filter: None,
        }
    }
}

impl CorpusDocument {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the version before the rest of the schema so that future
        // documents fail with a version error.
        let probe: serde_json::Value = serde_json::from_str(text)?;
        match probe.get("format_version").and_then(|v| v.as_str()) {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(Error::Version(other.to_owned())),
            None => return Err(Error::Version(String::new())),
        }
        Ok(serde_json::from_value(probe)?)
    }
}

fn phase_allowed(filter: Option<ReportPhase>, phase: AnnotationPhase) -> bool {
    !(filter == Some(ReportPhase::BeforeDiscussion) && phase == AnnotationPhase::PostDiscussion)
}

pub fn export_corpus(wb: &Workbench, options: ExportOptions) -> CorpusDocument {
    let order = wb.section_order();
    let pos = |id: &SectionId| order.get(id).copied().unwrap_or(usize::MAX);

    let textbooks = wb
        .textbooks
        .iter()
        .map(|t| TextbookDoc {
            id: t.id.clone(),
            title: t.title.clone(),
            chapters: t
                .chapters
                .iter()
                .map(|c| ChapterDoc {
                    id: c.id.clone(),
                    index: c.index,
                    title: c.title.clone(),
                    sections: c
                        .sections
                        .iter()
                        .map(|s| SectionDoc {
                            id: s.id.clone(),
                            heading: s.heading.clone(),
                            char_count: s.char_count(),
                            body: options.include_text.then(|| s.body().to_owned()),
                            concepts: consensus_for_export(wb, &s.id, options.phase_filter),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();

    let mut annotations: Vec<AnnotationDoc> = wb
        .annotations
        .iter()
        .filter(|a| phase_allowed(options.phase_filter, a.phase))
        .map(|a| AnnotationDoc {
            annotator_id: a.annotator_id.clone(),
            section_id: a.section_id.clone(),
            round_id: a.round_id.clone(),
            phase: a.phase,
            concept: a.concept.clone(),
            span: options.include_text.then_some(a.span),
            surface: options.include_text.then(|| a.surface.clone()),
        })
        .collect();
    annotations.sort_by(|x, y| {
        (
            pos(&x.section_id),
            &x.concept,
            &x.annotator_id,
            x.phase,
            x.span,
            &x.round_id,
        )
            .cmp(&(
                pos(&y.section_id),
                &y.concept,
                &y.annotator_id,
                y.phase,
                y.span,
                &y.round_id,
            ))
    });
    if !options.include_text {
        annotations.dedup();
    }

    let mut rounds = wb.rounds.clone();
    rounds.sort_by_key(|r| r.index);

    let mut review_decisions = wb.review_decisions.clone();
    review_decisions.sort_by(|x, y| {
        let key = |d: &RecordedDecision| {
            (
                d.round_id.clone(),
                d.decision.candidate.reviewer.clone(),
                pos(&d.decision.candidate.section_id),
                d.decision.candidate.concept.clone(),
            )
        };
        key(x).cmp(&key(y))
    });

    let mut resolutions = if options.phase_filter == Some(ReportPhase::BeforeDiscussion) {
        Vec::new()
    } else {
        wb.resolutions.clone()
    };
    resolutions.sort_by(|x, y| {
        (&x.round_id, pos(&x.section_id), &x.concept).cmp(&(
            &y.round_id,
            pos(&y.section_id),
            &y.concept,
        ))
    });

    CorpusDocument {
        format_version: FORMAT_VERSION.to_owned(),
        include_text: options.include_text,
        phase_filter: options.phase_filter,
        config: wb.config.clone(),
        textbooks,
        annotators: wb.annotators.values().cloned().collect(),
        qualification_test: wb.qualification_test.clone(),
        rounds,
        annotations,
        review_decisions,
        resolutions,
        codebook: wb.codebook.rules().to_vec(),
    }
}

fn consensus_for_export(
    wb: &Workbench,
    section: &SectionId,
    filter: Option<ReportPhase>,
) -> Vec<NormalizedConcept> {
    match filter {
        Some(ReportPhase::BeforeDiscussion) => {
            let Ok((chapter, _)) = wb.section(section) else {
                return Vec::new();
            };
            wb.rounds()
                .iter()
                .find(|r| r.chapter_id == chapter.id)
                .and_then(|r| {
                    wb.section_report(&r.id, section, ReportPhase::BeforeDiscussion)
                        .ok()
                })
                .and_then(|rep| rep.sections.into_iter().next())
                .map(|s| s.partition.consensus().iter().cloned().collect())
                .unwrap_or_default()
        }
        _ => wb.final_concepts(section),
    }
}

/// Rebuilds a workbench from a full export, validating every reference
/// before anything is returned. Bearer tokens are not part of documents.
pub fn import_corpus(doc: &CorpusDocument) -> Result<Workbench> {
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Version(doc.format_version.clone()));
    }
    doc.config.validate()?;
    if !doc.include_text {
        return Err(Error::Integrity(
            "document was exported without text; only full exports can be imported".into(),
        ));
    }
    let mut wb = Workbench::new(doc.config.clone());

    for t in &doc.textbooks {
        let chapters = t
            .chapters
            .iter()
            .map(|c| {
                let sections = c
                    .sections
                    .iter()
                    .map(|s| {
                        let body = s.body.clone().ok_or_else(|| {
                            Error::Integrity(format!("section {} has no body", s.id))
                        })?;
                        let section = Section::new(s.id.clone(), s.heading.clone(), body)?;
                        if section.char_count() != s.char_count {
                            return Err(Error::Integrity(format!(
                                "section {} declares {} characters but its body has {}",
                                s.id,
                                s.char_count,
                                section.char_count()
                            )));
                        }
                        Ok(section)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Chapter {
                    id: c.id.clone(),
                    index: c.index,
                    title: c.title.clone(),
                    sections,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let textbook = Textbook {
            id: t.id.clone(),
            title: t.title.clone(),
            chapters,
        };
        if wb.textbooks.iter().any(|x| x.id == textbook.id) {
            return Err(Error::Integrity(format!(
                "duplicate textbook id {}",
                textbook.id
            )));
        }
        wb.add_textbook(textbook)
            .map_err(|e| Error::Integrity(e.to_string()))?;
    }

    let mut annotators = BTreeMap::new();
    for a in &doc.annotators {
        if a.qualified && a.qualification_score.is_none() {
            return Err(Error::Integrity(format!(
                "annotator {} qualified without a score",
                a.id
            )));
        }
        if annotators.insert(a.id.clone(), a.clone()).is_some() {
            return Err(Error::Integrity(format!("duplicate annotator id {}", a.id)));
        }
    }
    wb.annotators = annotators;

    if let Some(test) = &doc.qualification_test {
        test.validate()?;
        wb.section(&test.gold_section_id).map_err(|_| {
            Error::Integrity(format!(
                "qualification test references missing section {}",
                test.gold_section_id
            ))
        })?;
    }
    wb.qualification_test = doc.qualification_test.clone();

    let mut round_ids = std::collections::BTreeSet::new();
    for r in &doc.rounds {
        r.validate()?;
        if !round_ids.insert(&r.id) {
            return Err(Error::Integrity(format!("duplicate round id {}", r.id)));
        }
    }
    wb.rounds = doc.rounds.clone();

    for a in &doc.annotations {
        let (Some(span), Some(surface)) = (a.span, a.surface.clone()) else {
            return Err(Error::Integrity(format!(
                "annotation by {} in {} has no span",
                a.annotator_id, a.section_id
            )));
        };
        let (_, section) = wb.section(&a.section_id).map_err(|_| {
            Error::Integrity(format!(
                "annotation references missing section {}",
                a.section_id
            ))
        })?;
        if !wb.annotators.contains_key(&a.annotator_id) {
            return Err(Error::Integrity(format!(
                "annotation references missing annotator {}",
                a.annotator_id
            )));
        }
        let annotation = ConceptAnnotation {
            annotator_id: a.annotator_id.clone(),
            section_id: a.section_id.clone(),
            span,
            surface,
            concept: a.concept.clone(),
            phase: a.phase,
            round_id: a.round_id.clone(),
        };
        annotation.verify(section)?;
        wb.annotations.push(annotation);
    }

    for r in &doc.resolutions {
        if r.outcome == ResolutionOutcome::Drop && !r.promoted_spans.is_empty() {
            return Err(Error::Integrity(format!(
                "dropped case ({}, {:?}) carries promotion spans",
                r.section_id,
                r.concept.value()
            )));
        }
        if let Ok(round) = wb.round(&r.round_id) {
            if round.phase() <= RoundPhase::Discussion {
                return Err(Error::Integrity(format!(
                    "round {} has resolutions before its discussion was submitted",
                    r.round_id
                )));
            }
        }
    }
    wb.review_decisions = doc.review_decisions.clone();
    wb.resolutions = doc.resolutions.clone();
    wb.codebook = Codebook::from_rules(doc.codebook.clone())?;

    let problems = wb.integrity_problems();
    if !problems.is_empty() {
        return Err(Error::Integrity(problems.join("; ")));
    }
    Ok(wb)
}
