//! Submission file formats.
//!
//! Every file is either a JSON array of the HTTP item type or a CSV with a
//! header row. The format follows the file extension.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use ska_core::workbench::AnnotationDraft;
use ska_core::{ResolutionInput, ResolutionOutcome, ReviewDecisionInput, SectionId, Span, Verdict};

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} row {}", path.display(), i + 2)))
        .collect()
}

/// `section_id,start,end[,surface]`
pub fn annotations(path: &Path) -> Result<Vec<AnnotationDraft>> {
    if is_csv(path) {
        read_csv(path)
    } else {
        read_json(path)
    }
}

#[derive(Deserialize)]
struct DecisionRow {
    section_id: SectionId,
    concept: String,
    verdict: String,
    start: Option<usize>,
    end: Option<usize>,
    rationale: Option<String>,
}

fn span(start: Option<usize>, end: Option<usize>) -> Result<Option<Span>> {
    match (start, end) {
        (Some(s), Some(e)) => Ok(Some(Span::new(s, e)?)),
        (None, None) => Ok(None),
        _ => bail!("start and end must be given together"),
    }
}

/// `section_id,concept,verdict,start,end,rationale`; verdict is `accept` or `reject`.
pub fn review_decisions(path: &Path) -> Result<Vec<ReviewDecisionInput>> {
    if !is_csv(path) {
        return read_json(path);
    }
    read_csv::<DecisionRow>(path)?
        .into_iter()
        .map(|row| {
            let verdict = match row.verdict.to_ascii_lowercase().as_str() {
                "accept" => match span(row.start, row.end)? {
                    Some(s) => Verdict::AcceptWithSpan(s),
                    None => bail!(
                        "accepting {:?} in {} needs start and end",
                        row.concept,
                        row.section_id
                    ),
                },
                "reject" => Verdict::Reject,
                other => bail!("unknown verdict {other:?} (expected accept or reject)"),
            };
            Ok(ReviewDecisionInput {
                section_id: row.section_id,
                concept: row.concept,
                verdict,
                rationale: row.rationale.filter(|r| !r.is_empty()),
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct ResolutionRow {
    section_id: SectionId,
    concept: String,
    outcome: String,
    start: Option<usize>,
    end: Option<usize>,
    suggestions: Option<String>,
}

/// `section_id,concept,outcome,start,end,suggestions`; outcome is `promote`
/// or `drop`, suggestions are separated by `;`.
pub fn resolutions(path: &Path) -> Result<Vec<ResolutionInput>> {
    if !is_csv(path) {
        return read_json(path);
    }
    read_csv::<ResolutionRow>(path)?
        .into_iter()
        .map(|row| {
            let outcome = match row.outcome.to_ascii_lowercase().as_str() {
                "promote" | "promote_to_consensus" => ResolutionOutcome::PromoteToConsensus,
                "drop" => ResolutionOutcome::Drop,
                other => bail!("unknown outcome {other:?} (expected promote or drop)"),
            };
            Ok(ResolutionInput {
                section_id: row.section_id,
                concept: row.concept,
                outcome,
                span: span(row.start, row.end)?,
                new_rule_suggestions: row
                    .suggestions
                    .unwrap_or_default()
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect(),
            })
        })
        .collect()
}
