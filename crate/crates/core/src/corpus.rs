//! Textbooks, sections, spans and normalized concepts.
//!
//! Offsets everywhere in this crate count Unicode scalar values (Rust
//! `char`s), never bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, ChapterId, RoundId, SectionId, TextbookId};

pub const DEFAULT_MIN_SECTION_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Textbook {
    pub id: TextbookId,
    pub title: String,
    pub chapters: Vec<Chapter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chapter {
    pub id: ChapterId,
    pub index: u32,
    pub title: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SectionRepr")]
pub struct Section {
    pub id: SectionId,
    pub heading: String,
    body: String,
    char_count: usize,
}

#[derive(Deserialize)]
struct SectionRepr {
    id: SectionId,
    heading: String,
    body: String,
    char_count: usize,
}

impl TryFrom<SectionRepr> for Section {
    type Error = Error;

    fn try_from(r: SectionRepr) -> Result<Self> {
        let section = Section::new(r.id, r.heading, r.body)?;
        if section.char_count != r.char_count {
            return Err(Error::Integrity(format!(
                "section {} declares {} characters but its body has {}",
                section.id, r.char_count, section.char_count
            )));
        }
        Ok(section)
    }
}

impl Section {
    pub fn new(id: SectionId, heading: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        if body.is_empty() {
            return Err(Error::Validation(format!("section {id} has an empty body")));
        }
        let char_count = body.chars().count();
        Ok(Section {
            id,
            heading: heading.into(),
            body,
            char_count,
        })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn char_count(&self) -> usize {
        self.char_count
    }
}

impl Textbook {
    pub fn chapter(&self, id: &ChapterId) -> Option<&Chapter> {
        self.chapters.iter().find(|c| &c.id == id)
    }

    pub fn sections(&self) -> impl Iterator<Item = (&Chapter, &Section)> {
        self.chapters
            .iter()
            .flat_map(|c| c.sections.iter().map(move |s| (c, s)))
    }

    pub fn section_count(&self) -> usize {
        self.chapters.iter().map(|c| c.sections.len()).sum()
    }

    /// Checks id uniqueness and chapter numbering.
    pub fn validate(&self) -> Result<()> {
        let mut chapter_ids = std::collections::BTreeSet::new();
        for chapter in &self.chapters {
            if chapter.index == 0 {
                return Err(Error::Integrity(format!(
                    "chapter {} has index 0",
                    chapter.id
                )));
            }
            if !chapter_ids.insert(&chapter.id) {
                return Err(Error::Integrity(format!(
                    "duplicate chapter id {}",
                    chapter.id
                )));
            }
            let mut section_ids = std::collections::BTreeSet::new();
            for section in &chapter.sections {
                if !section_ids.insert(&section.id) {
                    return Err(Error::Integrity(format!(
                        "duplicate section id {} in chapter {}",
                        section.id, chapter.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Half-open character range `[start, end)` inside a section body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Validation(format!(
                "span start {start} must be smaller than end {end}"
            )));
        }
        Ok(Span { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn check_within(&self, section: &Section) -> Result<()> {
        if self.start >= self.end || self.end > section.char_count {
            return Err(Error::SpanBounds {
                start: self.start,
                end: self.end,
                len: section.char_count,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// A concept in canonical form: NFC, lowercase, single-spaced.
///
/// Serializes as its plain string value; deserializing rejects strings
/// that are not already normalized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NormalizedConcept {
    value: String,
    gram_length: usize,
}

impl NormalizedConcept {
    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn gram_length(&self) -> usize {
        self.gram_length
    }
}

impl fmt::Display for NormalizedConcept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

impl TryFrom<String> for NormalizedConcept {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let concept = normalize(&s)?;
        if concept.value != s {
            return Err(Error::Validation(format!(
                "concept {s:?} is not normalized (expected {:?})",
                concept.value
            )));
        }
        Ok(concept)
    }
}

impl From<NormalizedConcept> for String {
    fn from(c: NormalizedConcept) -> Self {
        c.value
    }
}

pub fn normalize(surface: &str) -> Result<NormalizedConcept> {
    let composed: String = surface.nfc().collect();
    let lowered: String = composed.to_lowercase().nfc().collect();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::InvalidSurface(surface.to_owned()));
    }
    Ok(NormalizedConcept {
        value: tokens.join(" "),
        gram_length: tokens.len(),
    })
}

pub fn extract_surface(section: &Section, span: Span) -> Result<String> {
    span.check_within(section)?;
    Ok(section
        .body
        .chars()
        .skip(span.start)
        .take(span.len())
        .collect())
}

/// Every span whose text normalizes to `concept`, for candidate surfaces
/// taken verbatim from `surfaces`.
pub(crate) fn locate(
    section: &Section,
    surfaces: &[&str],
    concept: &NormalizedConcept,
) -> Vec<Span> {
    let chars: Vec<char> = section.body.chars().collect();
    let mut found = std::collections::BTreeSet::new();
    for surface in surfaces {
        let needle: Vec<char> = surface.chars().collect();
        if needle.is_empty() || needle.len() > chars.len() {
            continue;
        }
        for start in 0..=chars.len() - needle.len() {
            if chars[start..start + needle.len()] == needle[..] {
                let text: String = needle.iter().collect();
                if normalize(&text).map(|c| &c == concept).unwrap_or(false) {
                    found.insert(Span {
                        start,
                        end: start + needle.len(),
                    });
                }
            }
        }
    }
    found.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationPhase {
    Initial,
    MissedReview,
    PostDiscussion,
}

impl fmt::Display for AnnotationPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationPhase::Initial => "initial",
            AnnotationPhase::MissedReview => "missed_review",
            AnnotationPhase::PostDiscussion => "post_discussion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptAnnotation {
    pub annotator_id: AnnotatorId,
    pub section_id: SectionId,
    pub span: Span,
    pub surface: String,
    pub concept: NormalizedConcept,
    pub phase: AnnotationPhase,
    pub round_id: RoundId,
}

impl ConceptAnnotation {
    /// Builds an annotation from a span, deriving surface and concept.
    pub fn locate(
        section: &Section,
        span: Span,
        annotator_id: AnnotatorId,
        phase: AnnotationPhase,
        round_id: RoundId,
    ) -> Result<Self> {
        let surface = extract_surface(section, span)?;
        let concept = normalize(&surface)?;
        Ok(ConceptAnnotation {
            annotator_id,
            section_id: section.id.clone(),
            span,
            surface,
            concept,
            phase,
            round_id,
        })
    }

    /// Re-derives surface and concept against the section text.
    pub fn verify(&self, section: &Section) -> Result<()> {
        let surface = extract_surface(section, self.span)?;
        if surface != self.surface {
            return Err(Error::Integrity(format!(
                "annotation by {} in {} at {} records surface {:?} but the text reads {:?}",
                self.annotator_id, self.section_id, self.span, self.surface, surface
            )));
        }
        let concept = normalize(&surface)?;
        if concept != self.concept {
            return Err(Error::Integrity(format!(
                "annotation by {} in {} records concept {:?} but its surface normalizes to {:?}",
                self.annotator_id, self.section_id, self.concept.value, concept.value
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub textbook_id: TextbookId,
    pub title: Option<String>,
    pub min_section_chars: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            textbook_id: TextbookId::new("textbook"),
            title: None,
            min_section_chars: DEFAULT_MIN_SECTION_CHARS,
        }
    }
}

struct RawSection {
    heading: String,
    line: usize,
    lines: Vec<String>,
}

impl RawSection {
    fn body(&self) -> String {
        let start = self
            .lines
            .iter()
            .position(|l| !l.trim().is_empty())
            .unwrap_or(self.lines.len());
        self.lines[start..].join("\n").trim_end().to_owned()
    }
}

struct RawChapter {
    title: String,
    line: usize,
    sections: Vec<RawSection>,
}

fn heading_text(rest: &str, line: usize, what: &str) -> Result<String> {
    let text = rest.trim();
    if text.is_empty() {
        return Err(Error::Format {
            line,
            message: format!("{what} heading without a title"),
        });
    }
    Ok(text.to_owned())
}

/// Parses a Markdown-style sectioned document.
///
/// `# ` opens a chapter, `## ` opens a section, every other line is body
/// text of the current section. Body text directly under a chapter heading
/// becomes a section titled after the chapter. Leading blank lines and
/// trailing whitespace of each body are trimmed. Sections shorter than
/// `min_section_chars` are merged into the following section of the same
/// chapter (or the preceding one, for the last section).
pub fn ingest_textbook(raw: &str, options: &IngestOptions) -> Result<Textbook> {
    if raw.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut chapters: Vec<RawChapter> = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(rest) = line.strip_prefix("# ") {
            chapters.push(RawChapter {
                title: heading_text(rest, line_no, "chapter")?,
                line: line_no,
                sections: Vec::new(),
            });
        } else if let Some(rest) = line.strip_prefix("## ") {
            let heading = heading_text(rest, line_no, "section")?;
            let Some(chapter) = chapters.last_mut() else {
                return Err(Error::Format {
                    line: line_no,
                    message: "section heading before any chapter heading".into(),
                });
            };
            chapter.sections.push(RawSection {
                heading,
                line: line_no,
                lines: Vec::new(),
            });
        } else {
            let Some(chapter) = chapters.last_mut() else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::Format {
                    line: line_no,
                    message: "text before the first chapter heading".into(),
                });
            };
            match chapter.sections.last_mut() {
                Some(section) => section.lines.push(line.to_owned()),
                None if line.trim().is_empty() => {}
                None => chapter.sections.push(RawSection {
                    heading: chapter.title.clone(),
                    line: line_no,
                    lines: vec![line.to_owned()],
                }),
            }
        }
    }

    let mut out = Vec::with_capacity(chapters.len());
    for (ci, chapter) in chapters.into_iter().enumerate() {
        let index = ci as u32 + 1;
        if chapter.sections.is_empty() {
            return Err(Error::Format {
                line: chapter.line,
                message: format!("chapter {:?} has no sections", chapter.title),
            });
        }
        let merged = merge_short_sections(chapter.sections, options.min_section_chars)?;
        let chapter_id = ChapterId::new(format!("{}.ch{}", options.textbook_id, index));
        let sections = merged
            .into_iter()
            .enumerate()
            .map(|(si, (heading, body))| {
                Section::new(
                    SectionId::new(format!("{chapter_id}.s{}", si + 1)),
                    heading,
                    body,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Chapter {
            id: chapter_id,
            index,
            title: chapter.title,
            sections,
        });
    }

    Ok(Textbook {
        title: options
            .title
            .clone()
            .unwrap_or_else(|| options.textbook_id.to_string()),
        id: options.textbook_id.clone(),
        chapters: out,
    })
}

fn merge_short_sections(
    sections: Vec<RawSection>,
    min_chars: usize,
) -> Result<Vec<(String, String)>> {
    fn join(a: &str, b: &str, sep: &str) -> String {
        match (a.is_empty(), b.is_empty()) {
            (true, _) => b.to_owned(),
            (_, true) => a.to_owned(),
            _ => format!("{a}{sep}{b}"),
        }
    }

    let mut out: Vec<(String, String)> = Vec::new();
    let mut pending: Option<(String, String, usize)> = None;
    for section in sections {
        let (heading, body) = match pending.take() {
            Some((h, b, _)) => (
                format!("{h} / {}", section.heading),
                join(&b, &section.body(), "\n"),
            ),
            None => (section.heading.clone(), section.body()),
        };
        if body.is_empty() || body.chars().count() < min_chars {
            pending = Some((heading, body, section.line));
        } else {
            out.push((heading, body));
        }
    }
    if let Some((heading, body, line)) = pending {
        match out.last_mut() {
            Some(last) if !body.is_empty() => {
                last.0 = format!("{} / {heading}", last.0);
                last.1 = join(&last.1, &body, "\n");
            }
            Some(last) => last.0 = format!("{} / {heading}", last.0),
            None if body.is_empty() => {
                return Err(Error::Format {
                    line,
                    message: format!("section {heading:?} has no body text"),
                })
            }
            None => out.push((heading, body)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(min: usize) -> IngestOptions {
        IngestOptions {
            textbook_id: TextbookId::new("iir"),
            title: Some("IR".into()),
            min_section_chars: min,
        }
    }

    #[test]
    fn ingest_two_sections() {
        let tb = ingest_textbook("# C1\n## S1.1\nalpha\n## S1.2\nbeta\n", &opts(0)).unwrap();
        assert_eq!(tb.chapters.len(), 1);
        let bodies: Vec<_> = tb.chapters[0].sections.iter().map(|s| s.body()).collect();
        assert_eq!(bodies, ["alpha", "beta"]);
        assert_eq!(tb.chapters[0].sections[1].id.as_str(), "iir.ch1.s2");
        assert_eq!(tb.chapters[0].index, 1);
    }

    #[test]
    fn ingest_single_section_preserves_body() {
        let body = "First line  with  spaces\n\n  indented Ünïcödé line";
        let raw = format!("# Boolean retrieval\n## An example\n{body}\n\n\n");
        let tb = ingest_textbook(&raw, &opts(0)).unwrap();
        assert_eq!(tb.section_count(), 1);
        assert_eq!(tb.chapters[0].sections[0].body(), body);
        assert_eq!(
            tb.chapters[0].sections[0].char_count(),
            body.chars().count()
        );
    }

    #[test]
    fn short_section_merges_forward() {
        let tb = ingest_textbook("# C\n## A\nhi\n## B\nlonger body text\n", &opts(10)).unwrap();
        let s = &tb.chapters[0].sections;
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].body(), "hi\nlonger body text");
        assert_eq!(s[0].heading, "A / B");
    }

    #[test]
    fn short_trailing_section_merges_backward() {
        let tb = ingest_textbook("# C\n## A\nlonger body text\n## B\nhi\n", &opts(10)).unwrap();
        let s = &tb.chapters[0].sections;
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].body(), "longer body text\nhi");
    }

    #[test]
    fn merging_never_crosses_chapters() {
        let tb =
            ingest_textbook("# C1\n## A\nhi\n# C2\n## B\nlonger body text\n", &opts(10)).unwrap();
        assert_eq!(tb.chapters.len(), 2);
        assert_eq!(tb.chapters[0].sections[0].body(), "hi");
    }

    #[test]
    fn ingest_errors() {
        assert_eq!(ingest_textbook("  \n\n", &opts(0)), Err(Error::EmptyInput));
        assert!(matches!(
            ingest_textbook("## S\nbody\n", &opts(0)),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            ingest_textbook("\npreamble\n# C\n## S\nx\n", &opts(0)),
            Err(Error::Format { line: 2, .. })
        ));
        assert!(matches!(
            ingest_textbook("# C\n## S\nx\n#  \n", &opts(0)),
            Err(Error::Format { line: 4, .. })
        ));
        assert!(matches!(
            ingest_textbook("# C1\n## S\nx\n# C2\n", &opts(0)),
            Err(Error::Format { line: 4, .. })
        ));
        assert!(matches!(
            ingest_textbook("# C1\n## S\n\n", &opts(0)),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn chapter_intro_text_becomes_section() {
        let tb = ingest_textbook("# Intro\nsome text\n## S\nmore\n", &opts(0)).unwrap();
        let s = &tb.chapters[0].sections;
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].heading, "Intro");
        assert_eq!(s[0].body(), "some text");
    }

    #[test]
    fn deeper_headings_are_body_text() {
        let tb = ingest_textbook("# C\n## S\n### sub\ntext\n", &opts(0)).unwrap();
        assert_eq!(tb.chapters[0].sections[0].body(), "### sub\ntext");
    }

    #[test]
    fn normalize_examples() {
        let c = normalize("  Inverted  Index ").unwrap();
        assert_eq!((c.value(), c.gram_length()), ("inverted index", 2));
        let c = normalize("tf-idf").unwrap();
        assert_eq!((c.value(), c.gram_length()), ("tf-idf", 1));
        assert_eq!(
            normalize("term frequency inverse document frequency")
                .unwrap()
                .gram_length(),
            5
        );
        assert_eq!(
            normalize(" \t\n"),
            Err(Error::InvalidSurface(" \t\n".into()))
        );
        // Decomposed e + combining acute composes to é.
        assert_eq!(normalize("Cafe\u{301}").unwrap().value(), "caf\u{e9}");
    }

    #[test]
    fn extract_surface_examples() {
        let s = Section::new("s".into(), "h", "an inverted index").unwrap();
        assert_eq!(
            extract_surface(&s, Span::new(3, 17).unwrap()).unwrap(),
            "inverted index"
        );
        let s = Section::new("s".into(), "h", "abc").unwrap();
        assert_eq!(
            extract_surface(&s, Span::new(0, 3).unwrap()).unwrap(),
            "abc"
        );
        assert_eq!(
            extract_surface(&s, Span::new(2, 5).unwrap()),
            Err(Error::SpanBounds {
                start: 2,
                end: 5,
                len: 3
            })
        );
    }

    #[test]
    fn extract_surface_counts_chars_not_bytes() {
        let s = Section::new("s".into(), "h", "größe – Übersicht").unwrap();
        assert_eq!(
            extract_surface(&s, Span::new(8, 17).unwrap()).unwrap(),
            "Übersicht"
        );
    }

    #[test]
    fn concept_deserialization_requires_normal_form() {
        let c: NormalizedConcept = serde_json::from_str("\"inverted index\"").unwrap();
        assert_eq!(c.gram_length(), 2);
        assert!(serde_json::from_str::<NormalizedConcept>("\"Inverted Index\"").is_err());
    }

    #[test]
    fn locate_finds_case_variants() {
        let s = Section::new("s".into(), "h", "Inverted Index and an inverted index").unwrap();
        let c = normalize("inverted index").unwrap();
        let spans = locate(&s, &["Inverted Index", "inverted index"], &c);
        assert_eq!(
            spans,
            vec![Span { start: 0, end: 14 }, Span { start: 22, end: 36 }]
        );
    }
}
