//! Missed-concept review files, review decisions and discussion outcomes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{NormalizedConcept, Span};
use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, RoundId, SectionId};

/// Concept sets of every participant, per section, in section order.
pub type SectionSets = Vec<(
    SectionId,
    BTreeMap<AnnotatorId, BTreeSet<NormalizedConcept>>,
)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissedConceptCandidate {
    pub section_id: SectionId,
    pub concept: NormalizedConcept,
    pub tagged_by: BTreeSet<AnnotatorId>,
    pub reviewer: AnnotatorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AcceptWithSpan(Span),
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub candidate: MissedConceptCandidate,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// A review decision as submitted: the candidate is named by section and
/// concept and resolved against the current review file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecisionInput {
    pub section_id: SectionId,
    pub concept: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionOutcome {
    PromoteToConsensus,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub round_id: RoundId,
    pub section_id: SectionId,
    pub concept: NormalizedConcept,
    pub outcome: ResolutionOutcome,
    #[serde(default)]
    pub new_rule_suggestions: Vec<String>,
    /// Locations given to participants who gained the concept by promotion.
    #[serde(default)]
    pub promoted_spans: BTreeMap<AnnotatorId, Span>,
}

/// A discussion outcome as submitted by the round lead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionInput {
    pub section_id: SectionId,
    pub concept: String,
    pub outcome: ResolutionOutcome,
    /// Where the promoted concept sits in the text; may be omitted when the
    /// tagged surface occurs exactly once in the section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    #[serde(default)]
    pub new_rule_suggestions: Vec<String>,
}

/// Concepts some peer tagged but `reviewer` did not, sorted by section
/// order then concept value.
pub fn missed_candidates(
    reviewer: &AnnotatorId,
    sections: &SectionSets,
) -> Result<Vec<MissedConceptCandidate>> {
    let mut out = Vec::new();
    for (section_id, sets) in sections {
        let own = sets
            .get(reviewer)
            .ok_or_else(|| Error::Authorization(format!("{reviewer} is not a participant")))?;
        let mut missing: BTreeMap<&NormalizedConcept, BTreeSet<AnnotatorId>> = BTreeMap::new();
        for (peer, set) in sets.iter().filter(|(id, _)| *id != reviewer) {
            for concept in set.difference(own) {
                missing.entry(concept).or_default().insert(peer.clone());
            }
        }
        out.extend(
            missing
                .into_iter()
                .map(|(concept, tagged_by)| MissedConceptCandidate {
                    section_id: section_id.clone(),
                    concept: concept.clone(),
                    tagged_by,
                    reviewer: reviewer.clone(),
                }),
        );
    }
    Ok(out)
}

/// `section_id,concept,tagged_by,reviewer`; `tagged_by` is `;`-joined.
pub fn candidates_to_csv(candidates: &[MissedConceptCandidate]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["section_id", "concept", "tagged_by", "reviewer"])?;
    for c in candidates {
        let tagged: Vec<&str> = c.tagged_by.iter().map(AnnotatorId::as_str).collect();
        writer.write_record([
            c.section_id.as_str(),
            c.concept.value(),
            &tagged.join(";"),
            c.reviewer.as_str(),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
