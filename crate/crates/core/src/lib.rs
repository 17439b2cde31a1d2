//! Concept-annotation workbench.
//!
//! Textbook sections are annotated with concepts in rounds, one chapter per
//! round: participants annotate independently, review the concepts their
//! peers found, discuss the remaining disagreements and update the codebook.
//! The crate tracks that protocol and derives agreement reports, codebook
//! convergence and n-gram statistics of the consensus concepts.

pub mod agreement;
pub mod codebook;
pub mod config;
pub mod corpus;
pub mod document;
pub mod error;
pub mod ids;
pub mod protocol;
pub mod review;
pub mod stats;
pub mod store;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod workbench;

pub use agreement::{
    pairwise_agreement, partition_by_support, AgreementReport, ReportPhase, SupportPartition,
};
pub use codebook::{
    convergence_report, Codebook, CodebookRule, CodebookVersion, ConvergenceReport, RuleChange,
};
pub use config::StudyConfig;
pub use corpus::{
    extract_surface, ingest_textbook, normalize, AnnotationPhase, ConceptAnnotation, IngestOptions,
    NormalizedConcept, Section, Span, Textbook,
};
pub use document::{export_corpus, import_corpus, CorpusDocument, ExportOptions};
pub use error::{Error, ErrorClass, Result};
pub use ids::{AnnotatorId, ChapterId, RoundId, RuleId, SectionId, TextbookId};
pub use protocol::{evaluate_qualification, Annotator, QualificationTest, Round, RoundPhase};
pub use review::{
    MissedConceptCandidate, Resolution, ResolutionInput, ResolutionOutcome, ReviewDecisionInput,
    Verdict,
};
pub use stats::{format_percent, ngram_distribution, CorpusStatsTable, GramBucket, NgramStats};
pub use store::Store;
pub use workbench::{AnnotationDraft, Submission, Workbench};

/// Crate version, reported by the HTTP liveness route.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
