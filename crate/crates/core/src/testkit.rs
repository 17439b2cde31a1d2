//! Random study generation for property and acceptance tests.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::codebook::{RuleChange, RuleExample};
use crate::config::StudyConfig;
use crate::corpus::IngestOptions;
use crate::ids::{AnnotatorId, ChapterId, RoundId};
use crate::protocol::RoundPhase;
use crate::review::{ResolutionInput, ResolutionOutcome, ReviewDecisionInput, Verdict};
use crate::workbench::{AnnotationDraft, Workbench};

const VOCABULARY: &[&str] = &[
    "index",
    "inverted",
    "query",
    "term",
    "document",
    "posting",
    "list",
    "boolean",
    "retrieval",
    "ranking",
    "vector",
    "space",
    "model",
    "tf-idf",
    "weight",
    "cosine",
    "similarity",
    "stemming",
    "token",
    "précision",
    "recall",
    "zipf",
    "heaps",
    "law",
    "skip",
    "pointer",
    "merge",
];

#[derive(Debug, Clone, Copy)]
pub struct StudyShape {
    pub chapters: usize,
    pub sections_per_chapter: usize,
    pub words_per_section: usize,
    pub annotations_per_section: usize,
    /// Resolutions never drop cases when false.
    pub allow_drop: bool,
    /// Leave the last round at a random phase instead of closing it.
    pub leave_last_open: bool,
}

impl Default for StudyShape {
    fn default() -> Self {
        StudyShape {
            chapters: 2,
            sections_per_chapter: 2,
            words_per_section: 24,
            annotations_per_section: 5,
            allow_drop: true,
            leave_last_open: false,
        }
    }
}

pub const ANNOTATORS: [&str; 3] = ["ann", "bob", "cyd"];

pub fn random_document<R: Rng>(rng: &mut R, shape: &StudyShape) -> String {
    let mut out = String::new();
    for c in 0..shape.chapters {
        out.push_str(&format!("# Chapter {}\n", c + 1));
        for s in 0..shape.sections_per_chapter {
            out.push_str(&format!("## Section {}.{}\n", c + 1, s + 1));
            let words: Vec<&str> = (0..shape.words_per_section)
                .map(|_| *VOCABULARY.choose(rng).expect("non-empty"))
                .collect();
            let mut text = words.join(" ");
            if rng.random_bool(0.3) {
                text = capitalize_first(&text);
            }
            out.push_str(&text);
            out.push('\n');
        }
    }
    out
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Character spans of every word in `body`.
fn word_spans(body: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut i = 0;
    for ch in body.chars() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
        i += 1;
    }
    if let Some(s) = start {
        spans.push((s, i));
    }
    spans
}

/// Fresh workbench with the three qualified annotators and a textbook.
pub fn setup<R: Rng>(rng: &mut R, shape: &StudyShape) -> Workbench {
    let mut wb = Workbench::new(StudyConfig {
        min_section_chars: 0,
        ..StudyConfig::default()
    });
    let doc = random_document(rng, shape);
    wb.ingest(
        &doc,
        &IngestOptions {
            min_section_chars: 0,
            ..IngestOptions::default()
        },
    )
    .expect("generated document ingests");
    let gold_section = wb.textbooks()[0].chapters[0].sections[0].id.clone();
    wb.set_qualification_test(
        gold_section,
        &["index".to_owned(), "query".to_owned()],
        Some(0.5),
    )
    .expect("valid test");
    for (i, id) in ANNOTATORS.iter().enumerate() {
        wb.register_annotator((*id).into(), id, format!("token-{id}-{i:04}"))
            .expect("fresh annotator");
        wb.qualify(&(*id).into(), &["index".to_owned(), "query".to_owned()])
            .expect("qualification runs");
    }
    wb.seed_rule(
        "Tag domain terms that carry instructional meaning.",
        vec![RuleExample {
            concept: "inverted index".into(),
            explanation: "a core data structure".into(),
        }],
    )
    .expect("seed rule");
    wb
}

fn random_drafts<R: Rng>(
    rng: &mut R,
    wb: &Workbench,
    chapter: &ChapterId,
    count: usize,
) -> Vec<AnnotationDraft> {
    let chapter = wb.chapter(chapter).expect("chapter exists");
    let mut drafts = Vec::new();
    for section in &chapter.sections {
        let words = word_spans(section.body());
        let mut chosen = BTreeSet::new();
        for _ in 0..count {
            let len = rng.random_range(1..=3.min(words.len()));
            let first = rng.random_range(0..=words.len() - len);
            chosen.insert((words[first].0, words[first + len - 1].1));
        }
        drafts.extend(chosen.into_iter().map(|(start, end)| AnnotationDraft {
            section_id: section.id.clone(),
            start,
            end,
            surface: None,
        }));
    }
    drafts
}

/// Drives one round of `chapter` to `stop_at` (or Closed) with random
/// content. Returns the round id.
pub fn drive_round<R: Rng>(
    rng: &mut R,
    wb: &mut Workbench,
    chapter: &ChapterId,
    shape: &StudyShape,
    stop_at: RoundPhase,
) -> RoundId {
    let participants: BTreeSet<AnnotatorId> = ANNOTATORS.iter().map(|a| (*a).into()).collect();
    let round_id = wb
        .create_round(chapter, participants.clone(), None)
        .expect("round opens")
        .id
        .clone();
    if stop_at == RoundPhase::Annotating {
        return round_id;
    }
    // Annotating: every participant, random order.
    let mut order: Vec<AnnotatorId> = participants.iter().cloned().collect();
    shuffle(rng, &mut order);
    for who in &order {
        let drafts = random_drafts(rng, wb, chapter, shape.annotations_per_section);
        wb.submit_annotations(&round_id, who, drafts)
            .expect("annotations accepted");
    }
    if stop_at == RoundPhase::MissedReview {
        return round_id;
    }
    shuffle(rng, &mut order);
    for who in &order {
        let candidates = wb.review_file(&round_id, who).expect("review file");
        let mut decisions = Vec::new();
        for c in candidates {
            if rng.random_bool(0.5) {
                continue;
            }
            let verdict = if rng.random_bool(0.5) {
                let span = wb
                    .annotations()
                    .iter()
                    .find(|a| {
                        a.round_id == round_id
                            && a.section_id == c.section_id
                            && a.concept == c.concept
                    })
                    .map(|a| a.span)
                    .expect("peer annotation exists");
                Verdict::AcceptWithSpan(span)
            } else {
                Verdict::Reject
            };
            decisions.push(ReviewDecisionInput {
                section_id: c.section_id.clone(),
                concept: c.concept.value().to_owned(),
                verdict,
                rationale: None,
            });
        }
        wb.submit(
            &round_id,
            who,
            crate::workbench::Submission::ReviewDecisions(decisions),
            None,
        )
        .expect("review accepted");
    }
    if stop_at == RoundPhase::Discussion {
        return round_id;
    }
    let lead = wb.round(&round_id).expect("round").lead.clone();
    let cases = wb.disagreements(&round_id).expect("disagreements");
    let mut resolutions = Vec::new();
    for case in cases {
        if rng.random_bool(0.3) {
            continue;
        }
        let outcome = if shape.allow_drop && rng.random_bool(0.4) {
            ResolutionOutcome::Drop
        } else {
            ResolutionOutcome::PromoteToConsensus
        };
        let span = wb
            .annotations()
            .iter()
            .find(|a| {
                a.round_id == round_id
                    && a.section_id == case.section_id
                    && a.concept == case.concept
            })
            .map(|a| a.span);
        resolutions.push(ResolutionInput {
            section_id: case.section_id,
            concept: case.concept.value().to_owned(),
            outcome,
            span,
            new_rule_suggestions: Vec::new(),
        });
    }
    wb.submit(
        &round_id,
        &lead,
        crate::workbench::Submission::Resolutions(resolutions),
        None,
    )
    .expect("resolutions accepted");
    if stop_at == RoundPhase::CodebookUpdate {
        return round_id;
    }
    let changes: Vec<RuleChange> = (0..rng.random_range(0..3))
        .map(|i| RuleChange::Add {
            text: format!("Rule {i} from {round_id}"),
            examples: Vec::new(),
        })
        .collect();
    wb.close_round(&round_id, &lead, changes)
        .expect("round closes");
    round_id
}

fn shuffle<R: Rng, T>(rng: &mut R, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

/// A whole random study: setup plus one round per chapter.
pub fn random_study<R: Rng>(rng: &mut R, shape: &StudyShape) -> Workbench {
    let mut wb = setup(rng, shape);
    let chapters: Vec<ChapterId> = wb.textbooks()[0]
        .chapters
        .iter()
        .map(|c| c.id.clone())
        .collect();
    let last = chapters.len().saturating_sub(1);
    for (i, chapter) in chapters.iter().enumerate() {
        let stop_at = if shape.leave_last_open && i == last {
            *RoundPhase::ALL.choose(rng).expect("non-empty")
        } else {
            RoundPhase::Closed
        };
        drive_round(rng, &mut wb, chapter, shape, stop_at);
    }
    wb
}

/// `n` random concept sets of up to `max` concepts, keyed `a0`, `a1`, ...
pub fn random_sets<R: Rng>(
    rng: &mut R,
    n: usize,
    max: usize,
) -> BTreeMap<AnnotatorId, BTreeSet<crate::corpus::NormalizedConcept>> {
    (0..n)
        .map(|i| {
            let size = rng.random_range(0..=max);
            let set = (0..size)
                .map(|_| {
                    let id = rng.random_range(0..(max * 2).max(1));
                    crate::corpus::normalize(&format!("concept {id}")).expect("non-empty")
                })
                .collect();
            (AnnotatorId::new(format!("a{i}")), set)
        })
        .collect()
}
