//! Round lifecycle and annotator qualification.
//!
//! A round walks one chapter through independent annotation, missed-concept
//! review, group discussion and a codebook update. The first two phases need
//! one submission from every participant; the last two are group phases
//! submitted once by the round lead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agreement::jaccard;
use crate::corpus::NormalizedConcept;
use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, ChapterId, RoundId, SectionId};

pub const DEFAULT_PARTICIPANTS: usize = 3;
pub const DEFAULT_QUALIFICATION_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotator {
    pub id: AnnotatorId,
    pub display_name: String,
    pub qualified: bool,
    pub qualification_score: Option<f64>,
}

impl Annotator {
    pub fn new(id: AnnotatorId, display_name: impl Into<String>) -> Self {
        Annotator {
            id,
            display_name: display_name.into(),
            qualified: false,
            qualification_score: None,
        }
    }

    pub fn record_qualification(&mut self, outcome: QualificationOutcome) {
        self.qualification_score = Some(outcome.score);
        self.qualified = outcome.passed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationTest {
    pub gold_section_id: SectionId,
    pub gold_concepts: BTreeSet<NormalizedConcept>,
    pub threshold: f64,
}

impl QualificationTest {
    pub fn new(
        gold_section_id: SectionId,
        gold_concepts: BTreeSet<NormalizedConcept>,
        threshold: f64,
    ) -> Result<Self> {
        let test = QualificationTest {
            gold_section_id,
            gold_concepts,
            threshold,
        };
        test.validate()?;
        Ok(test)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gold_concepts.is_empty() {
            return Err(Error::Validation(
                "qualification test has no gold concepts".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "qualification threshold {} must lie in (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualificationOutcome {
    pub score: f64,
    pub passed: bool,
}

/// Jaccard overlap with the gold concepts, compared against the threshold.
pub fn evaluate_qualification(
    candidate: &BTreeSet<NormalizedConcept>,
    test: &QualificationTest,
) -> QualificationOutcome {
    let score = jaccard(candidate, &test.gold_concepts);
    QualificationOutcome {
        score,
        passed: score >= test.threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundPhase {
    Annotating,
    MissedReview,
    Discussion,
    CodebookUpdate,
    Closed,
}

impl RoundPhase {
    pub const ALL: [RoundPhase; 5] = [
        RoundPhase::Annotating,
        RoundPhase::MissedReview,
        RoundPhase::Discussion,
        RoundPhase::CodebookUpdate,
        RoundPhase::Closed,
    ];

    pub fn next(self) -> Option<RoundPhase> {
        match self {
            RoundPhase::Annotating => Some(RoundPhase::MissedReview),
            RoundPhase::MissedReview => Some(RoundPhase::Discussion),
            RoundPhase::Discussion => Some(RoundPhase::CodebookUpdate),
            RoundPhase::CodebookUpdate => Some(RoundPhase::Closed),
            RoundPhase::Closed => None,
        }
    }

    /// Discussion and codebook update take one payload from the lead.
    pub fn is_group(self) -> bool {
        matches!(self, RoundPhase::Discussion | RoundPhase::CodebookUpdate)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoundPhase::Annotating => "annotating",
            RoundPhase::MissedReview => "missed_review",
            RoundPhase::Discussion => "discussion",
            RoundPhase::CodebookUpdate => "codebook_update",
            RoundPhase::Closed => "closed",
        }
    }
}

impl fmt::Display for RoundPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoundPhase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        RoundPhase::ALL
            .into_iter()
            .find(|p| p.as_str() == key)
            .ok_or_else(|| Error::Validation(format!("unknown round phase {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub id: RoundId,
    /// 1-based position in the study; codebook provenance refers to it.
    pub index: u32,
    pub chapter_id: ChapterId,
    pub participants: BTreeSet<AnnotatorId>,
    pub lead: AnnotatorId,
    phase: RoundPhase,
    submitted: BTreeMap<RoundPhase, BTreeSet<AnnotatorId>>,
    version: u64,
}

impl Round {
    /// Opens a round in the annotating phase.
    ///
    /// `required` is the configured participant count; every participant
    /// must be a qualified annotator in `roster`.
    pub fn open(
        id: RoundId,
        index: u32,
        chapter_id: ChapterId,
        participants: BTreeSet<AnnotatorId>,
        lead: Option<AnnotatorId>,
        required: usize,
        roster: &BTreeMap<AnnotatorId, Annotator>,
    ) -> Result<Self> {
        if participants.len() < 2 || participants.len() != required {
            return Err(Error::Arity {
                expected: required.max(2),
                got: participants.len(),
            });
        }
        for p in &participants {
            let annotator = roster
                .get(p)
                .ok_or_else(|| Error::not_found("annotator", p))?;
            if !annotator.qualified {
                return Err(Error::Unqualified(p.to_string()));
            }
        }
        let lead = match lead {
            Some(lead) if participants.contains(&lead) => lead,
            Some(lead) => {
                return Err(Error::Validation(format!(
                    "round lead {lead} is not a participant"
                )))
            }
            None => participants.iter().next().cloned().expect("non-empty"),
        };
        Ok(Round {
            id,
            index,
            chapter_id,
            participants,
            lead,
            phase: RoundPhase::Annotating,
            submitted: BTreeMap::new(),
            version: 0,
        })
    }

    pub fn phase(&self) -> RoundPhase {
        self.phase
    }

    /// Bumped on every accepted submission.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn has_submitted(&self, phase: RoundPhase, annotator: &AnnotatorId) -> bool {
        self.submitted
            .get(&phase)
            .is_some_and(|s| s.contains(annotator))
    }

    /// Who still owes a submission for `phase`.
    pub fn pending(&self, phase: RoundPhase) -> Vec<AnnotatorId> {
        if phase == RoundPhase::Closed {
            return Vec::new();
        }
        let owed: Vec<&AnnotatorId> = if phase.is_group() {
            vec![&self.lead]
        } else {
            self.participants.iter().collect()
        };
        owed.into_iter()
            .filter(|a| !self.has_submitted(phase, a))
            .cloned()
            .collect()
    }

    pub fn submissions(&self) -> &BTreeMap<RoundPhase, BTreeSet<AnnotatorId>> {
        &self.submitted
    }

    /// Fails unless the round's version equals `expected`.
    pub fn expect_version(&self, expected: Option<u64>) -> Result<()> {
        match expected {
            Some(v) if v != self.version => Err(Error::Conflict(format!(
                "round {} is at version {}, expected {v}",
                self.id, self.version
            ))),
            _ => Ok(()),
        }
    }

    /// Checks whether `annotator` may submit a `phase` payload right now.
    pub fn check_submission(&self, annotator: &AnnotatorId, phase: RoundPhase) -> Result<()> {
        if self.phase != phase || phase == RoundPhase::Closed {
            return Err(Error::Phase {
                round: self.id.to_string(),
                expected: phase,
                actual: self.phase,
            });
        }
        if !self.participants.contains(annotator) {
            return Err(Error::Authorization(format!(
                "{annotator} is not a participant of round {}",
                self.id
            )));
        }
        if phase.is_group() && annotator != &self.lead {
            return Err(Error::Authorization(format!(
                "{phase} is a group phase submitted by the round lead {}",
                self.lead
            )));
        }
        if self.has_submitted(phase, annotator) {
            return Err(Error::Conflict(format!(
                "{annotator} already submitted the {phase} phase of round {}",
                self.id
            )));
        }
        Ok(())
    }

    /// Records a submission and advances the phase once nobody is pending.
    /// Returns the new phase when the round advanced.
    pub fn record_submission(
        &mut self,
        annotator: &AnnotatorId,
        phase: RoundPhase,
    ) -> Result<Option<RoundPhase>> {
        self.check_submission(annotator, phase)?;
        self.submitted
            .entry(phase)
            .or_default()
            .insert(annotator.clone());
        self.version += 1;
        if self.pending(phase).is_empty() {
            let next = phase.next().expect("closed rounds accept no submissions");
            self.phase = next;
            return Ok(Some(next));
        }
        Ok(None)
    }

    /// Checks that the recorded submissions are consistent with the phase,
    /// for rounds loaded from outside.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Integrity(format!("round {}: {msg}", self.id)));
        if self.index == 0 {
            return fail("index must be at least 1".into());
        }
        if self.participants.len() < 2 {
            return fail("fewer than 2 participants".into());
        }
        if !self.participants.contains(&self.lead) {
            return fail(format!("lead {} is not a participant", self.lead));
        }
        for (phase, who) in &self.submitted {
            if *phase > self.phase || *phase == RoundPhase::Closed {
                return fail(format!("has {phase} submissions while in {}", self.phase));
            }
            if let Some(stranger) = who.iter().find(|a| !self.participants.contains(*a)) {
                return fail(format!("{stranger} submitted without participating"));
            }
            if phase.is_group() && who.iter().any(|a| a != &self.lead) {
                return fail(format!("{phase} submitted by someone other than the lead"));
            }
        }
        for phase in RoundPhase::ALL.into_iter().filter(|p| *p < self.phase) {
            if !self.pending(phase).is_empty() {
                return fail(format!("in {} but {phase} is incomplete", self.phase));
            }
        }
        if self.phase != RoundPhase::Closed && self.pending(self.phase).is_empty() {
            return fail(format!(
                "{} is complete but the round did not advance",
                self.phase
            ));
        }
        Ok(())
    }

    /// Fails with a phase error unless the round is in `phase`.
    pub fn require_phase(&self, phase: RoundPhase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::Phase {
                round: self.id.to_string(),
                expected: phase,
                actual: self.phase,
            });
        }
        Ok(())
    }

    /// Fails with an incomplete-data error naming the first participant
    /// who has not submitted `phase`.
    pub fn require_complete(&self, phase: RoundPhase) -> Result<()> {
        match self.pending(phase).into_iter().next() {
            Some(annotator) => Err(Error::Incomplete {
                round: self.id.to_string(),
                annotator: annotator.to_string(),
                phase,
            }),
            None => Ok(()),
        }
    }
}
