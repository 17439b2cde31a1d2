//! The annotation study: textbooks, annotators, rounds and everything
//! recorded while rounds move through their phases.
//!
//! Every mutating operation either applies completely or leaves the
//! workbench untouched. Annotations are append-only; reports for any
//! phase are recomputed from phase provenance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agreement::{
    section_agreement, AgreementReport, ReportPhase, ReportScope, SectionAgreement,
};
use crate::codebook::{
    convergence_report, Codebook, CodebookRule, ConvergenceReport, RuleChange, RuleExample,
};
use crate::config::StudyConfig;
use crate::corpus::{
    extract_surface, ingest_textbook, locate, normalize, AnnotationPhase, Chapter,
    ConceptAnnotation, IngestOptions, NormalizedConcept, Section, Span, Textbook,
};
use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, ChapterId, RoundId, RuleId, SectionId, TextbookId};
use crate::protocol::{
    evaluate_qualification, Annotator, QualificationOutcome, QualificationTest, Round, RoundPhase,
};
use crate::review::{
    missed_candidates, MissedConceptCandidate, Resolution, ResolutionInput, ResolutionOutcome,
    ReviewDecision, ReviewDecisionInput, SectionSets, Verdict,
};
use crate::stats::CorpusStatsTable;

/// One annotation in an annotating-phase submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDraft {
    pub section_id: SectionId,
    pub start: usize,
    pub end: usize,
    /// When present, must equal the text at the span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
}

/// Phase-specific submission content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submission {
    Annotations(Vec<AnnotationDraft>),
    ReviewDecisions(Vec<ReviewDecisionInput>),
    Resolutions(Vec<ResolutionInput>),
    CodebookChanges(Vec<RuleChange>),
}

impl Submission {
    pub fn phase(&self) -> RoundPhase {
        match self {
            Submission::Annotations(_) => RoundPhase::Annotating,
            Submission::ReviewDecisions(_) => RoundPhase::MissedReview,
            Submission::Resolutions(_) => RoundPhase::Discussion,
            Submission::CodebookChanges(_) => RoundPhase::CodebookUpdate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedDecision {
    pub round_id: RoundId,
    #[serde(flatten)]
    pub decision: ReviewDecision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDelta {
    pub decision: ReviewDecision,
    pub created: Option<ConceptAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementCase {
    pub section_id: SectionId,
    pub concept: NormalizedConcept,
    pub support: usize,
    pub tagged_by: BTreeSet<AnnotatorId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStatus {
    pub id: RoundId,
    pub index: u32,
    pub chapter_id: ChapterId,
    pub phase: RoundPhase,
    pub version: u64,
    pub lead: AnnotatorId,
    pub participants: Vec<AnnotatorId>,
    /// Who still owes a submission for the current phase.
    pub pending: Vec<AnnotatorId>,
    pub submitted: BTreeMap<RoundPhase, Vec<AnnotatorId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegritySummary {
    pub textbooks: usize,
    pub sections: usize,
    pub annotators: usize,
    pub rounds: usize,
    pub annotations: usize,
    pub rules: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Workbench {
    pub(crate) config: StudyConfig,
    pub(crate) textbooks: Vec<Textbook>,
    pub(crate) annotators: BTreeMap<AnnotatorId, Annotator>,
    pub(crate) tokens: BTreeMap<AnnotatorId, String>,
    pub(crate) qualification_test: Option<QualificationTest>,
    pub(crate) rounds: Vec<Round>,
    pub(crate) annotations: Vec<ConceptAnnotation>,
    pub(crate) review_decisions: Vec<RecordedDecision>,
    pub(crate) resolutions: Vec<Resolution>,
    pub(crate) codebook: Codebook,
}

impl Workbench {
    pub fn new(config: StudyConfig) -> Self {
        Workbench {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: StudyConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Runs `f` on a copy and commits only if it succeeds.
    fn transact<T>(&mut self, f: impl FnOnce(&mut Workbench) -> Result<T>) -> Result<T> {
        let mut scratch = self.clone();
        let out = f(&mut scratch)?;
        *self = scratch;
        Ok(out)
    }

    // ---- corpus -------------------------------------------------------

    pub fn textbooks(&self) -> &[Textbook] {
        &self.textbooks
    }

    pub fn textbook(&self, id: &TextbookId) -> Result<&Textbook> {
        self.textbooks
            .iter()
            .find(|t| &t.id == id)
            .ok_or_else(|| Error::not_found("textbook", id))
    }

    pub fn ingest(&mut self, raw: &str, options: &IngestOptions) -> Result<&Textbook> {
        if self.textbooks.iter().any(|t| t.id == options.textbook_id) {
            return Err(Error::Conflict(format!(
                "textbook {} already exists",
                options.textbook_id
            )));
        }
        let textbook = ingest_textbook(raw, options)?;
        self.add_textbook(textbook)?;
        Ok(self.textbooks.last().expect("just added"))
    }

    pub(crate) fn add_textbook(&mut self, textbook: Textbook) -> Result<()> {
        textbook.validate()?;
        for (chapter, section) in textbook.sections() {
            if self.chapter(&chapter.id).is_ok() || self.section(&section.id).is_ok() {
                return Err(Error::Conflict(format!(
                    "section {} of textbook {} clashes with an existing id",
                    section.id, textbook.id
                )));
            }
        }
        self.textbooks.push(textbook);
        Ok(())
    }

    pub fn chapter(&self, id: &ChapterId) -> Result<&Chapter> {
        self.textbooks
            .iter()
            .find_map(|t| t.chapter(id))
            .ok_or_else(|| Error::not_found("chapter", id))
    }

    pub fn section(&self, id: &SectionId) -> Result<(&Chapter, &Section)> {
        self.textbooks
            .iter()
            .flat_map(|t| t.sections())
            .find(|(_, s)| &s.id == id)
            .ok_or_else(|| Error::not_found("section", id))
    }

    /// Position of a section in document order, for sorting.
    pub(crate) fn section_order(&self) -> BTreeMap<&SectionId, usize> {
        self.textbooks
            .iter()
            .flat_map(|t| t.sections())
            .enumerate()
            .map(|(i, (_, s))| (&s.id, i))
            .collect()
    }

    // ---- annotators ---------------------------------------------------

    pub fn annotators(&self) -> &BTreeMap<AnnotatorId, Annotator> {
        &self.annotators
    }

    pub fn annotator(&self, id: &AnnotatorId) -> Result<&Annotator> {
        self.annotators
            .get(id)
            .ok_or_else(|| Error::not_found("annotator", id))
    }

    /// Registers an annotator with the bearer token the caller issued.
    pub fn register_annotator(
        &mut self,
        id: AnnotatorId,
        display_name: &str,
        token: String,
    ) -> Result<&Annotator> {
        if self.annotators.contains_key(&id) {
            return Err(Error::Conflict(format!("annotator {id} already exists")));
        }
        if token.len() < 8 {
            return Err(Error::Validation(
                "annotator tokens need at least 8 characters".into(),
            ));
        }
        if self.tokens.values().any(|t| t == &token) {
            return Err(Error::Conflict("token already issued".into()));
        }
        self.tokens.insert(id.clone(), token);
        Ok(self
            .annotators
            .entry(id.clone())
            .or_insert_with(|| Annotator::new(id, display_name)))
    }

    /// Replaces an annotator's bearer token.
    pub fn reissue_token(&mut self, id: &AnnotatorId, token: String) -> Result<()> {
        self.annotator(id)?;
        if token.len() < 8 {
            return Err(Error::Validation(
                "annotator tokens need at least 8 characters".into(),
            ));
        }
        self.tokens.insert(id.clone(), token);
        Ok(())
    }

    /// Copies tokens of annotators that also exist in `previous`.
    pub fn adopt_tokens(&mut self, previous: &Workbench) {
        for id in self.annotators.keys() {
            if let Some(token) = previous.tokens.get(id) {
                self.tokens.insert(id.clone(), token.clone());
            }
        }
    }

    pub fn has_token(&self, id: &AnnotatorId) -> bool {
        self.tokens.contains_key(id)
    }

    pub fn authenticate(&self, token: &str) -> Option<&AnnotatorId> {
        self.tokens
            .iter()
            .find(|(_, t)| t.as_str() == token)
            .map(|(id, _)| id)
    }

    pub fn qualification_test(&self) -> Option<&QualificationTest> {
        self.qualification_test.as_ref()
    }

    pub fn set_qualification_test(
        &mut self,
        gold_section_id: SectionId,
        gold_surfaces: &[String],
        threshold: Option<f64>,
    ) -> Result<&QualificationTest> {
        self.section(&gold_section_id)?;
        let gold = gold_surfaces
            .iter()
            .map(|s| normalize(s))
            .collect::<Result<BTreeSet<_>>>()?;
        let test = QualificationTest::new(
            gold_section_id,
            gold,
            threshold.unwrap_or(self.config.qualification_threshold),
        )?;
        Ok(self.qualification_test.insert(test))
    }

    /// Scores an annotator's answers to the qualification test.
    pub fn qualify(
        &mut self,
        id: &AnnotatorId,
        surfaces: &[String],
    ) -> Result<QualificationOutcome> {
        let test = self
            .qualification_test
            .as_ref()
            .ok_or_else(|| Error::Validation("no qualification test configured".into()))?;
        let candidate = surfaces
            .iter()
            .map(|s| normalize(s))
            .collect::<Result<BTreeSet<_>>>()?;
        let outcome = evaluate_qualification(&candidate, test);
        let annotator = self
            .annotators
            .get_mut(id)
            .ok_or_else(|| Error::not_found("annotator", id))?;
        if annotator.qualified {
            return Err(Error::Conflict(format!(
                "annotator {id} is already qualified"
            )));
        }
        annotator.record_qualification(outcome);
        Ok(outcome)
    }

    // ---- rounds -------------------------------------------------------

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn round(&self, id: &RoundId) -> Result<&Round> {
        self.rounds
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::not_found("round", id))
    }

    /// Looks a round up by id (`r3`) or by index (`3`).
    pub fn find_round(&self, key: &str) -> Result<&Round> {
        self.rounds
            .iter()
            .find(|r| r.id.as_str() == key || key.parse::<u32>().is_ok_and(|i| i == r.index))
            .ok_or_else(|| Error::not_found("round", key))
    }

    fn round_mut(&mut self, id: &RoundId) -> Result<&mut Round> {
        self.rounds
            .iter_mut()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::not_found("round", id))
    }

    pub fn round_status(&self, id: &RoundId) -> Result<RoundStatus> {
        let r = self.round(id)?;
        Ok(RoundStatus {
            id: r.id.clone(),
            index: r.index,
            chapter_id: r.chapter_id.clone(),
            phase: r.phase(),
            version: r.version(),
            lead: r.lead.clone(),
            participants: r.participants.iter().cloned().collect(),
            pending: r.pending(r.phase()),
            submitted: r
                .submissions()
                .iter()
                .map(|(p, s)| (*p, s.iter().cloned().collect()))
                .collect(),
        })
    }

    pub fn create_round(
        &mut self,
        chapter_id: &ChapterId,
        participants: BTreeSet<AnnotatorId>,
        lead: Option<AnnotatorId>,
    ) -> Result<&Round> {
        self.chapter(chapter_id)?;
        if let Some(existing) = self.rounds.iter().find(|r| &r.chapter_id == chapter_id) {
            return Err(Error::Conflict(format!(
                "chapter {chapter_id} already has round {}",
                existing.id
            )));
        }
        let index = self.rounds.len() as u32 + 1;
        let round = Round::open(
            RoundId::new(format!("r{index}")),
            index,
            chapter_id.clone(),
            participants,
            lead,
            self.config.participants,
            &self.annotators,
        )?;
        self.rounds.push(round);
        Ok(self.rounds.last().expect("just pushed"))
    }

    fn round_sections(&self, round: &Round) -> Result<Vec<&Section>> {
        Ok(self.chapter(&round.chapter_id)?.sections.iter().collect())
    }

    fn section_in_round(&self, round: &Round, section_id: &SectionId) -> Result<&Section> {
        let (chapter, section) = self.section(section_id)?;
        if chapter.id != round.chapter_id {
            return Err(Error::Validation(format!(
                "section {section_id} is not part of chapter {} annotated in round {}",
                round.chapter_id, round.id
            )));
        }
        Ok(section)
    }

    /// Dispatches a phase submission. `expected_version`, when given, must
    /// match the round's version (compare-and-advance).
    pub fn submit(
        &mut self,
        round_id: &RoundId,
        actor: &AnnotatorId,
        submission: Submission,
        expected_version: Option<u64>,
    ) -> Result<RoundPhase> {
        self.transact(|wb| {
            let round = wb.round(round_id)?;
            round.expect_version(expected_version)?;
            let phase = submission.phase();
            round.check_submission(actor, phase)?;
            match submission {
                Submission::Annotations(drafts) => {
                    wb.add_initial_annotations(round_id, actor, &drafts)?
                }
                Submission::ReviewDecisions(decisions) => {
                    for d in &decisions {
                        wb.apply_review_decision(round_id, actor, d)?;
                    }
                }
                Submission::Resolutions(inputs) => wb.add_resolutions(round_id, &inputs)?,
                Submission::CodebookChanges(changes) => {
                    let index = wb.round(round_id)?.index;
                    wb.codebook.apply_changes(&changes, index)?;
                }
            }
            wb.round_mut(round_id)?.record_submission(actor, phase)?;
            Ok(wb.round(round_id)?.phase())
        })
    }

    pub fn submit_annotations(
        &mut self,
        round_id: &RoundId,
        annotator: &AnnotatorId,
        drafts: Vec<AnnotationDraft>,
    ) -> Result<RoundPhase> {
        self.submit(round_id, annotator, Submission::Annotations(drafts), None)
    }

    fn add_initial_annotations(
        &mut self,
        round_id: &RoundId,
        annotator: &AnnotatorId,
        drafts: &[AnnotationDraft],
    ) -> Result<()> {
        let round = self.round(round_id)?;
        let mut seen = BTreeSet::new();
        let mut created = Vec::with_capacity(drafts.len());
        for draft in drafts {
            let section = self.section_in_round(round, &draft.section_id)?;
            let span = Span::new(draft.start, draft.end)?;
            let annotation = ConceptAnnotation::locate(
                section,
                span,
                annotator.clone(),
                AnnotationPhase::Initial,
                round_id.clone(),
            )?;
            if let Some(expected) = &draft.surface {
                if expected != &annotation.surface {
                    return Err(Error::LocateMismatch {
                        expected: expected.clone(),
                        found: annotation.surface,
                    });
                }
            }
            if !seen.insert((
                annotation.section_id.clone(),
                annotation.concept.clone(),
                span,
            )) {
                return Err(Error::Validation(format!(
                    "duplicate annotation of {:?} at {span} in {}",
                    annotation.concept.value(),
                    annotation.section_id
                )));
            }
            created.push(annotation);
        }
        self.annotations.extend(created);
        Ok(())
    }

    /// Per-section concept sets of every participant.
    ///
    /// Before discussion: initial and missed-review annotations. After
    /// discussion: all annotations, minus cases the discussion dropped.
    pub fn section_sets(&self, round: &Round, phase: ReportPhase) -> Result<SectionSets> {
        let dropped: BTreeSet<(&SectionId, &NormalizedConcept)> = match phase {
            ReportPhase::BeforeDiscussion => BTreeSet::new(),
            ReportPhase::AfterDiscussion => self
                .resolutions
                .iter()
                .filter(|r| r.round_id == round.id && r.outcome == ResolutionOutcome::Drop)
                .map(|r| (&r.section_id, &r.concept))
                .collect(),
        };
        let mut out: SectionSets = self
            .round_sections(round)?
            .into_iter()
            .map(|s| {
                (
                    s.id.clone(),
                    round
                        .participants
                        .iter()
                        .map(|p| (p.clone(), BTreeSet::new()))
                        .collect(),
                )
            })
            .collect();
        let index: BTreeMap<SectionId, usize> = out
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        for a in self.annotations.iter().filter(|a| a.round_id == round.id) {
            if phase == ReportPhase::BeforeDiscussion && a.phase == AnnotationPhase::PostDiscussion
            {
                continue;
            }
            if dropped.contains(&(&a.section_id, &a.concept)) {
                continue;
            }
            let Some(&i) = index.get(&a.section_id) else {
                continue;
            };
            if let Some(set) = out[i].1.get_mut(&a.annotator_id) {
                set.insert(a.concept.clone());
            }
        }
        Ok(out)
    }

    // ---- missed-concept review ---------------------------------------

    pub fn review_file(
        &self,
        round_id: &RoundId,
        reviewer: &AnnotatorId,
    ) -> Result<Vec<MissedConceptCandidate>> {
        let round = self.round(round_id)?;
        round.require_phase(RoundPhase::MissedReview)?;
        if !round.participants.contains(reviewer) {
            return Err(Error::Authorization(format!(
                "{reviewer} is not a participant of round {round_id}"
            )));
        }
        let sets = self.section_sets(round, ReportPhase::BeforeDiscussion)?;
        missed_candidates(reviewer, &sets)
    }

    /// Applies one review decision for `reviewer` without finishing the
    /// reviewer's missed-review submission.
    pub fn apply_review_decision(
        &mut self,
        round_id: &RoundId,
        reviewer: &AnnotatorId,
        input: &ReviewDecisionInput,
    ) -> Result<ReviewDelta> {
        let round = self.round(round_id)?;
        round.require_phase(RoundPhase::MissedReview)?;
        if round.has_submitted(RoundPhase::MissedReview, reviewer) {
            return Err(Error::Conflict(format!(
                "{reviewer} already submitted the missed_review phase of round {round_id}"
            )));
        }
        let concept = normalize(&input.concept)?;
        if self.review_decisions.iter().any(|d| {
            &d.round_id == round_id
                && &d.decision.candidate.reviewer == reviewer
                && d.decision.candidate.section_id == input.section_id
                && d.decision.candidate.concept == concept
        }) {
            return Err(Error::Conflict(format!(
                "{reviewer} already decided on {:?} in {}",
                concept.value(),
                input.section_id
            )));
        }
        let candidate = self
            .review_file(round_id, reviewer)?
            .into_iter()
            .find(|c| c.section_id == input.section_id && c.concept == concept)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "{:?} in {} is not a missed-concept candidate for {reviewer}",
                    concept.value(),
                    input.section_id
                ))
            })?;
        let created = match input.verdict {
            Verdict::AcceptWithSpan(span) => {
                let (_, section) = self.section(&candidate.section_id)?;
                let surface = extract_surface(section, span)?;
                let found = normalize(&surface)
                    .map(|c| c.value().to_owned())
                    .unwrap_or_default();
                if found != concept.value() {
                    return Err(Error::LocateMismatch {
                        expected: concept.value().to_owned(),
                        found: surface,
                    });
                }
                let annotation = ConceptAnnotation::locate(
                    section,
                    span,
                    reviewer.clone(),
                    AnnotationPhase::MissedReview,
                    round_id.clone(),
                )?;
                self.annotations.push(annotation.clone());
                Some(annotation)
            }
            Verdict::Reject => None,
        };
        let decision = ReviewDecision {
            candidate,
            verdict: input.verdict,
            rationale: input.rationale.clone(),
        };
        self.review_decisions.push(RecordedDecision {
            round_id: round_id.clone(),
            decision: decision.clone(),
        });
        Ok(ReviewDelta { decision, created })
    }

    pub fn review_decisions(&self) -> &[RecordedDecision] {
        &self.review_decisions
    }

    // ---- discussion ---------------------------------------------------

    /// Cases tagged by some but not all participants before discussion.
    pub fn disagreements(&self, round_id: &RoundId) -> Result<Vec<DisagreementCase>> {
        let round = self.round(round_id)?;
        round.require_complete(RoundPhase::Annotating)?;
        round.require_complete(RoundPhase::MissedReview)?;
        let n = round.participants.len();
        let mut out = Vec::new();
        for (section_id, sets) in self.section_sets(round, ReportPhase::BeforeDiscussion)? {
            let mut tagged: BTreeMap<&NormalizedConcept, BTreeSet<AnnotatorId>> = BTreeMap::new();
            for (who, set) in &sets {
                for c in set {
                    tagged.entry(c).or_default().insert(who.clone());
                }
            }
            for (concept, tagged_by) in tagged {
                if tagged_by.len() < n {
                    out.push(DisagreementCase {
                        section_id: section_id.clone(),
                        concept: concept.clone(),
                        support: tagged_by.len(),
                        tagged_by,
                    });
                }
            }
        }
        Ok(out)
    }

    fn add_resolutions(&mut self, round_id: &RoundId, inputs: &[ResolutionInput]) -> Result<()> {
        let round = self.round(round_id)?.clone();
        let cases: BTreeMap<(SectionId, NormalizedConcept), DisagreementCase> = self
            .disagreements(round_id)?
            .into_iter()
            .map(|c| ((c.section_id.clone(), c.concept.clone()), c))
            .collect();
        let before = self.section_sets(&round, ReportPhase::BeforeDiscussion)?;
        let mut handled = BTreeSet::new();
        for input in inputs {
            let section = self.section_in_round(&round, &input.section_id)?.clone();
            let concept = normalize(&input.concept)?;
            let key = (input.section_id.clone(), concept.clone());
            let Some(case) = cases.get(&key) else {
                return Err(Error::NotADisagreement {
                    section: input.section_id.to_string(),
                    concept: concept.value().to_owned(),
                });
            };
            if !handled.insert(key) {
                return Err(Error::Conflict(format!(
                    "({}, {:?}) resolved twice",
                    input.section_id,
                    concept.value()
                )));
            }
            let mut promoted_spans = BTreeMap::new();
            if input.outcome == ResolutionOutcome::PromoteToConsensus {
                let span = match input.span {
                    Some(span) => span,
                    None => self.unique_location(&round, &section, &concept)?,
                };
                let surface = extract_surface(&section, span)?;
                if normalize(&surface).ok().as_ref() != Some(&concept) {
                    return Err(Error::LocateMismatch {
                        expected: concept.value().to_owned(),
                        found: surface,
                    });
                }
                let sets = &before
                    .iter()
                    .find(|(id, _)| id == &section.id)
                    .expect("section of round")
                    .1;
                for (who, set) in sets {
                    if !set.contains(&concept) {
                        self.annotations.push(ConceptAnnotation::locate(
                            &section,
                            span,
                            who.clone(),
                            AnnotationPhase::PostDiscussion,
                            round_id.clone(),
                        )?);
                        promoted_spans.insert(who.clone(), span);
                    }
                }
                debug_assert_eq!(
                    promoted_spans.len(),
                    round.participants.len() - case.support
                );
            }
            self.resolutions.push(Resolution {
                round_id: round_id.clone(),
                section_id: section.id.clone(),
                concept,
                outcome: input.outcome,
                new_rule_suggestions: input.new_rule_suggestions.clone(),
                promoted_spans,
            });
        }
        Ok(())
    }

    /// The single place in the section where a tagged surface of `concept`
    /// occurs, if there is exactly one.
    fn unique_location(
        &self,
        round: &Round,
        section: &Section,
        concept: &NormalizedConcept,
    ) -> Result<Span> {
        let surfaces: BTreeSet<&str> = self
            .annotations
            .iter()
            .filter(|a| {
                a.round_id == round.id && a.section_id == section.id && &a.concept == concept
            })
            .map(|a| a.surface.as_str())
            .collect();
        let surfaces: Vec<&str> = surfaces.into_iter().collect();
        match locate(section, &surfaces, concept).as_slice() {
            [span] => Ok(*span),
            spans => Err(Error::Validation(format!(
                "{:?} occurs {} times in {}; the resolution must give a span",
                concept.value(),
                spans.len(),
                section.id
            ))),
        }
    }

    pub fn resolutions(&self) -> &[Resolution] {
        &self.resolutions
    }

    // ---- agreement ----------------------------------------------------

    fn require_report_data(round: &Round, phase: ReportPhase) -> Result<()> {
        round.require_complete(RoundPhase::Annotating)?;
        round.require_complete(RoundPhase::MissedReview)?;
        if phase == ReportPhase::AfterDiscussion {
            round.require_complete(RoundPhase::Discussion)?;
        }
        Ok(())
    }

    fn section_agreements(
        &self,
        round: &Round,
        phase: ReportPhase,
    ) -> Result<Vec<SectionAgreement>> {
        Self::require_report_data(round, phase)?;
        self.section_sets(round, phase)?
            .into_iter()
            .map(|(id, sets)| section_agreement(id, &sets))
            .collect()
    }

    pub fn agreement_report(
        &self,
        round_id: &RoundId,
        phase: ReportPhase,
    ) -> Result<AgreementReport> {
        let round = self.round(round_id)?;
        let sections = self.section_agreements(round, phase)?;
        Ok(AgreementReport::aggregate(
            ReportScope::Round(round_id.clone()),
            round_id.clone(),
            phase,
            round.participants.iter().cloned().collect(),
            sections,
        ))
    }

    pub fn section_report(
        &self,
        round_id: &RoundId,
        section_id: &SectionId,
        phase: ReportPhase,
    ) -> Result<AgreementReport> {
        let round = self.round(round_id)?;
        self.section_in_round(round, section_id)?;
        let sections: Vec<_> = self
            .section_agreements(round, phase)?
            .into_iter()
            .filter(|s| &s.section_id == section_id)
            .collect();
        Ok(AgreementReport::aggregate(
            ReportScope::Section(section_id.clone()),
            round_id.clone(),
            phase,
            round.participants.iter().cloned().collect(),
            sections,
        ))
    }

    // ---- statistics ---------------------------------------------------

    /// Consensus statistics over closed rounds whose index lies in
    /// `range` (inclusive), or over all closed rounds.
    pub fn stats_table(&self, range: Option<(u32, u32)>) -> Result<CorpusStatsTable> {
        let rounds: Vec<&Round> = self
            .rounds
            .iter()
            .filter(|r| r.phase() == RoundPhase::Closed)
            .filter(|r| range.is_none_or(|(lo, hi)| (lo..=hi).contains(&r.index)))
            .collect();
        if rounds.is_empty() {
            return Err(Error::EmptyRange);
        }
        let mut before = Vec::new();
        let mut after = Vec::new();
        for round in &rounds {
            for (phase, out) in [
                (ReportPhase::BeforeDiscussion, &mut before),
                (ReportPhase::AfterDiscussion, &mut after),
            ] {
                for agreement in self.section_agreements(round, phase)? {
                    out.push(agreement.partition.consensus().clone());
                }
            }
        }
        Ok(CorpusStatsTable::from_sections(
            rounds.iter().map(|r| r.index).collect(),
            &before,
            &after,
        ))
    }

    /// Consensus concepts of a section after discussion, or before it when
    /// discussion has not happened yet. Empty while data is incomplete.
    pub fn final_concepts(&self, section_id: &SectionId) -> Vec<NormalizedConcept> {
        let Ok((chapter, _)) = self.section(section_id) else {
            return Vec::new();
        };
        let Some(round) = self.rounds.iter().find(|r| r.chapter_id == chapter.id) else {
            return Vec::new();
        };
        let phase = if round.phase() > RoundPhase::Discussion {
            ReportPhase::AfterDiscussion
        } else {
            ReportPhase::BeforeDiscussion
        };
        self.section_agreements(round, phase)
            .ok()
            .and_then(|s| s.into_iter().find(|s| &s.section_id == section_id))
            .map(|s| s.partition.consensus().iter().cloned().collect())
            .unwrap_or_default()
    }

    // ---- codebook -----------------------------------------------------

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    /// Adds a seed rule (round 0). Only allowed before any round closes.
    pub fn seed_rule(&mut self, text: &str, examples: Vec<RuleExample>) -> Result<&CodebookRule> {
        if self.rounds.iter().any(|r| r.phase() == RoundPhase::Closed) {
            return Err(Error::Conflict(
                "seed rules can only be added before the first round closes".into(),
            ));
        }
        self.codebook.add_rule(text, examples, 0)
    }

    pub fn close_round(
        &mut self,
        round_id: &RoundId,
        actor: &AnnotatorId,
        changes: Vec<RuleChange>,
    ) -> Result<Vec<RuleId>> {
        let before = self.codebook.len();
        self.submit(round_id, actor, Submission::CodebookChanges(changes), None)?;
        let index = self.round(round_id)?.index;
        Ok(self.codebook.rules()[before..]
            .iter()
            .filter(|r| r.round_introduced == index)
            .map(|r| r.id.clone())
            .collect())
    }

    pub fn convergence(&self) -> ConvergenceReport {
        let closed: Vec<u32> = self
            .rounds
            .iter()
            .filter(|r| r.phase() == RoundPhase::Closed)
            .map(|r| r.index)
            .collect();
        convergence_report(&self.codebook.additions_per_round(&closed))
    }

    // ---- integrity ----------------------------------------------------

    pub fn annotations(&self) -> &[ConceptAnnotation] {
        &self.annotations
    }

    /// Full scan of referential and derived-value invariants.
    pub fn integrity_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for t in &self.textbooks {
            if let Err(e) = t.validate() {
                problems.push(e.to_string());
            }
        }
        for a in self.annotators.values() {
            if a.qualified && a.qualification_score.is_none() {
                problems.push(format!("annotator {} is qualified without a score", a.id));
            }
        }
        let mut chapters_seen = BTreeSet::new();
        for r in &self.rounds {
            if !chapters_seen.insert(&r.chapter_id) {
                problems.push(format!("chapter {} has more than one round", r.chapter_id));
            }
            if self.chapter(&r.chapter_id).is_err() {
                problems.push(format!(
                    "round {} references missing chapter {}",
                    r.id, r.chapter_id
                ));
            }
            for p in &r.participants {
                match self.annotators.get(p) {
                    None => {
                        problems.push(format!("round {} references missing annotator {p}", r.id))
                    }
                    Some(a) if !a.qualified => {
                        problems.push(format!("round {} includes unqualified annotator {p}", r.id))
                    }
                    _ => {}
                }
            }
        }
        let mut keys = BTreeSet::new();
        for a in &self.annotations {
            let round = match self.round(&a.round_id) {
                Ok(r) => r,
                Err(_) => {
                    problems.push(format!(
                        "annotation references missing round {}",
                        a.round_id
                    ));
                    continue;
                }
            };
            match self.section(&a.section_id) {
                Err(_) => problems.push(format!(
                    "annotation references missing section {}",
                    a.section_id
                )),
                Ok((chapter, section)) => {
                    if chapter.id != round.chapter_id {
                        problems.push(format!(
                            "annotation in {} is outside chapter {} of round {}",
                            a.section_id, round.chapter_id, round.id
                        ));
                    }
                    if let Err(e) = a.verify(section) {
                        problems.push(e.to_string());
                    }
                }
            }
            match self.annotators.get(&a.annotator_id) {
                None => problems.push(format!(
                    "annotation references missing annotator {}",
                    a.annotator_id
                )),
                Some(ann) if !ann.qualified => problems.push(format!(
                    "annotation authored by unqualified annotator {}",
                    ann.id
                )),
                _ => {}
            }
            if !round.participants.contains(&a.annotator_id) {
                problems.push(format!(
                    "{} annotated in round {} without participating",
                    a.annotator_id, round.id
                ));
            }
            if !keys.insert((&a.annotator_id, &a.section_id, &a.concept, a.span)) {
                problems.push(format!(
                    "duplicate annotation by {} of {:?} at {} in {}",
                    a.annotator_id,
                    a.concept.value(),
                    a.span,
                    a.section_id
                ));
            }
        }
        for d in &self.review_decisions {
            if self.round(&d.round_id).is_err() {
                problems.push(format!(
                    "review decision references missing round {}",
                    d.round_id
                ));
            }
            if self.section(&d.decision.candidate.section_id).is_err() {
                problems.push(format!(
                    "review decision references missing section {}",
                    d.decision.candidate.section_id
                ));
            }
            if !self.annotators.contains_key(&d.decision.candidate.reviewer) {
                problems.push(format!(
                    "review decision references missing annotator {}",
                    d.decision.candidate.reviewer
                ));
            }
        }
        for r in &self.resolutions {
            if self.round(&r.round_id).is_err() {
                problems.push(format!(
                    "resolution references missing round {}",
                    r.round_id
                ));
            }
            if self.section(&r.section_id).is_err() {
                problems.push(format!(
                    "resolution references missing section {}",
                    r.section_id
                ));
            }
        }
        let closed: BTreeSet<u32> = self
            .rounds
            .iter()
            .filter(|r| r.phase() == RoundPhase::Closed)
            .map(|r| r.index)
            .collect();
        for rule in self.codebook.rules() {
            let rounds = std::iter::once(rule.round_introduced)
                .chain(rule.amendments.iter().map(|a| a.round));
            for round in rounds.filter(|r| *r > 0) {
                if !closed.contains(&round) {
                    problems.push(format!(
                        "rule {} cites round {round}, which is not closed",
                        rule.id
                    ));
                }
            }
        }
        if let Some(test) = &self.qualification_test {
            if self.section(&test.gold_section_id).is_err() {
                problems.push(format!(
                    "qualification test references missing section {}",
                    test.gold_section_id
                ));
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<IntegritySummary> {
        let problems = self.integrity_problems();
        if !problems.is_empty() {
            return Err(Error::Integrity(problems.join("; ")));
        }
        Ok(IntegritySummary {
            textbooks: self.textbooks.len(),
            sections: self.textbooks.iter().map(Textbook::section_count).sum(),
            annotators: self.annotators.len(),
            rounds: self.rounds.len(),
            annotations: self.annotations.len(),
            rules: self.codebook.len(),
        })
    }
}
