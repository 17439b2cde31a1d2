//! Consensus partitions and Jaccard agreement between annotators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::NormalizedConcept;
use crate::error::{Error, Result};
use crate::ids::{AnnotatorId, RoundId, SectionId};

/// `|a ∩ b| / |a ∪ b|`, and 1.0 when both sets are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn pairwise_agreement(a: &BTreeSet<NormalizedConcept>, b: &BTreeSet<NormalizedConcept>) -> f64 {
    jaccard(a, b)
}

/// Concepts keyed by how many annotators tagged them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPartition {
    pub n: usize,
    /// Keys run over `1..=n`; empty buckets are kept.
    pub by_support: BTreeMap<usize, BTreeSet<NormalizedConcept>>,
}

impl SupportPartition {
    pub fn support(&self, k: usize) -> impl Iterator<Item = &NormalizedConcept> {
        self.by_support.get(&k).into_iter().flatten()
    }

    pub fn consensus(&self) -> &BTreeSet<NormalizedConcept> {
        &self.by_support[&self.n]
    }

    /// Concepts tagged by fewer than all annotators.
    pub fn disagreements(&self) -> impl Iterator<Item = &NormalizedConcept> {
        self.by_support
            .iter()
            .filter(|(k, _)| **k < self.n)
            .flat_map(|(_, set)| set)
    }

    pub fn union_len(&self) -> usize {
        self.by_support.values().map(BTreeSet::len).sum()
    }

    pub fn support_of(&self, concept: &NormalizedConcept) -> usize {
        self.by_support
            .iter()
            .find(|(_, set)| set.contains(concept))
            .map_or(0, |(k, _)| *k)
    }

    /// `|support n| / |union|`; an empty union counts as full consensus.
    pub fn full_consensus_fraction(&self) -> f64 {
        let union = self.union_len();
        if union == 0 {
            1.0
        } else {
            self.consensus().len() as f64 / union as f64
        }
    }
}

pub fn partition_by_support(sets: &[BTreeSet<NormalizedConcept>]) -> Result<SupportPartition> {
    let n = sets.len();
    if n < 2 {
        return Err(Error::Arity {
            expected: 2,
            got: n,
        });
    }
    let mut counts: BTreeMap<&NormalizedConcept, usize> = BTreeMap::new();
    for set in sets {
        for concept in set {
            *counts.entry(concept).or_default() += 1;
        }
    }
    let mut by_support: BTreeMap<usize, BTreeSet<NormalizedConcept>> =
        (1..=n).map(|k| (k, BTreeSet::new())).collect();
    for (concept, k) in counts {
        by_support
            .get_mut(&k)
            .expect("1..=n")
            .insert(concept.clone());
    }
    Ok(SupportPartition { n, by_support })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportPhase {
    BeforeDiscussion,
    AfterDiscussion,
}

impl ReportPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportPhase::BeforeDiscussion => "before_discussion",
            ReportPhase::AfterDiscussion => "after_discussion",
        }
    }
}

impl fmt::Display for ReportPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportPhase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "before" | "before_discussion" => Ok(ReportPhase::BeforeDiscussion),
            "after" | "after_discussion" => Ok(ReportPhase::AfterDiscussion),
            _ => Err(Error::Validation(format!(
                "unknown report phase {s:?} (expected before or after)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub a: AnnotatorId,
    pub b: AnnotatorId,
    pub agreement: f64,
}

impl PairScore {
    pub fn label(&self) -> String {
        format!("{}~{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionAgreement {
    pub section_id: SectionId,
    pub partition: SupportPartition,
    pub pairwise: Vec<PairScore>,
    pub mean_pairwise: f64,
    pub full_consensus_fraction: f64,
}

/// Agreement within one section. `sets` holds one concept set per
/// annotator; pairs are emitted in annotator-id order.
pub fn section_agreement(
    section_id: SectionId,
    sets: &BTreeMap<AnnotatorId, BTreeSet<NormalizedConcept>>,
) -> Result<SectionAgreement> {
    let ordered: Vec<BTreeSet<NormalizedConcept>> = sets.values().cloned().collect();
    let partition = partition_by_support(&ordered)?;
    let ids: Vec<&AnnotatorId> = sets.keys().collect();
    let mut pairwise = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            pairwise.push(PairScore {
                a: ids[i].clone(),
                b: ids[j].clone(),
                agreement: pairwise_agreement(&sets[ids[i]], &sets[ids[j]]),
            });
        }
    }
    Ok(SectionAgreement {
        section_id,
        mean_pairwise: mean(pairwise.iter().map(|p| p.agreement)),
        full_consensus_fraction: partition.full_consensus_fraction(),
        partition,
        pairwise,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum ReportScope {
    Round(RoundId),
    Section(SectionId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub scope: ReportScope,
    pub round_id: RoundId,
    pub phase_label: ReportPhase,
    pub participants: Vec<AnnotatorId>,
    /// Number of (section, concept) cases per support level.
    pub support_counts: BTreeMap<usize, usize>,
    pub pairwise: Vec<PairScore>,
    pub mean_pairwise: f64,
    pub full_consensus_fraction: f64,
    pub sections: Vec<SectionAgreement>,
}

impl AgreementReport {
    /// Macro-averages per-section scores over the given sections.
    pub fn aggregate(
        scope: ReportScope,
        round_id: RoundId,
        phase_label: ReportPhase,
        participants: Vec<AnnotatorId>,
        sections: Vec<SectionAgreement>,
    ) -> Self {
        let n = participants.len();
        let mut support_counts: BTreeMap<usize, usize> = (1..=n).map(|k| (k, 0)).collect();
        for s in &sections {
            for (k, set) in &s.partition.by_support {
                *support_counts.entry(*k).or_default() += set.len();
            }
        }
        let mut pairwise = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&participants[i], &participants[j]);
                let agreement = mean(sections.iter().flat_map(|s| {
                    s.pairwise
                        .iter()
                        .filter(|p| &p.a == a && &p.b == b)
                        .map(|p| p.agreement)
                }));
                pairwise.push(PairScore {
                    a: a.clone(),
                    b: b.clone(),
                    agreement,
                });
            }
        }
        let union: usize = support_counts.values().sum();
        let consensus = support_counts.get(&n).copied().unwrap_or(0);
        AgreementReport {
            scope,
            round_id,
            phase_label,
            mean_pairwise: mean(pairwise.iter().map(|p| p.agreement)),
            full_consensus_fraction: if union == 0 {
                1.0
            } else {
                consensus as f64 / union as f64
            },
            participants,
            support_counts,
            pairwise,
            sections,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One CSV row per report: round, phase, the two scalar scores and one
/// column per annotator pair (`a~b`).
pub fn reports_to_csv(reports: &[AgreementReport]) -> Result<String> {
    let mut pair_labels: Vec<String> = Vec::new();
    for report in reports {
        for pair in &report.pairwise {
            let label = pair.label();
            if !pair_labels.contains(&label) {
                pair_labels.push(label);
            }
        }
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "round_id".to_owned(),
        "phase".to_owned(),
        "mean_pairwise".to_owned(),
        "full_consensus_fraction".to_owned(),
    ];
    header.extend(pair_labels.iter().cloned());
    writer.write_record(&header)?;
    for report in reports {
        let mut row = vec![
            report.round_id.to_string(),
            report.phase_label.to_string(),
            format!("{:.6}", report.mean_pairwise),
            format!("{:.6}", report.full_consensus_fraction),
        ];
        for label in &pair_labels {
            row.push(
                report
                    .pairwise
                    .iter()
                    .find(|p| &p.label() == label)
                    .map(|p| format!("{:.6}", p.agreement))
                    .unwrap_or_default(),
            );
        }
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize;

    fn set(items: &[&str]) -> BTreeSet<NormalizedConcept> {
        items.iter().map(|s| normalize(s).unwrap()).collect()
    }

    #[test]
    fn partition_examples() {
        let p =
            partition_by_support(&[set(&["a", "b"]), set(&["a", "c"]), set(&["a", "b"])]).unwrap();
        assert_eq!(p.by_support[&3], set(&["a"]));
        assert_eq!(p.by_support[&2], set(&["b"]));
        assert_eq!(p.by_support[&1], set(&["c"]));

        let p =
            partition_by_support(&[set(&["x", "y"]), set(&["x", "y"]), set(&["x", "y"])]).unwrap();
        assert_eq!(p.by_support[&3], set(&["x", "y"]));
        assert!(p.by_support[&1].is_empty() && p.by_support[&2].is_empty());

        let p = partition_by_support(&[set(&["a"]), set(&["b"]), set(&["c"])]).unwrap();
        assert_eq!(p.by_support[&1], set(&["a", "b", "c"]));
        assert_eq!(p.full_consensus_fraction(), 0.0);

        assert!(matches!(
            partition_by_support(&[set(&["a"])]),
            Err(Error::Arity { got: 1, .. })
        ));
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(
            pairwise_agreement(&set(&["a", "b"]), &set(&["a", "b"])),
            1.0
        );
        assert!(
            (pairwise_agreement(&set(&["a", "b"]), &set(&["a", "c"])) - 1.0 / 3.0).abs() < 1e-15
        );
        assert_eq!(pairwise_agreement(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn section_report_mean() {
        let sets: BTreeMap<AnnotatorId, _> = [
            ("A".into(), set(&["a", "b"])),
            ("B".into(), set(&["a", "c"])),
            ("C".into(), set(&["a", "b"])),
        ]
        .into_iter()
        .collect();
        let s = section_agreement("s1".into(), &sets).unwrap();
        assert!((s.mean_pairwise - 5.0 / 9.0).abs() < 1e-12);
        assert!((s.full_consensus_fraction - 1.0 / 3.0).abs() < 1e-12);
        let r = AgreementReport::aggregate(
            ReportScope::Round("r1".into()),
            "r1".into(),
            ReportPhase::BeforeDiscussion,
            sets.keys().cloned().collect(),
            vec![s],
        );
        assert!((r.mean_pairwise - 5.0 / 9.0).abs() < 1e-12);
        assert_eq!(r.support_counts, BTreeMap::from([(1, 1), (2, 1), (3, 1)]));
    }

    #[test]
    fn round_scores_are_macro_averages() {
        let ids: Vec<AnnotatorId> = vec!["A".into(), "B".into()];
        let s1: BTreeMap<AnnotatorId, _> =
            [(ids[0].clone(), set(&["a"])), (ids[1].clone(), set(&["a"]))]
                .into_iter()
                .collect();
        let s2: BTreeMap<AnnotatorId, _> = [
            (ids[0].clone(), set(&["a", "b", "c"])),
            (ids[1].clone(), set(&["d"])),
        ]
        .into_iter()
        .collect();
        let r = AgreementReport::aggregate(
            ReportScope::Round("r".into()),
            "r".into(),
            ReportPhase::AfterDiscussion,
            ids,
            vec![
                section_agreement("s1".into(), &s1).unwrap(),
                section_agreement("s2".into(), &s2).unwrap(),
            ],
        );
        assert_eq!(r.pairwise[0].agreement, 0.5);
        // 1 consensus case out of 5 (section, concept) cases.
        assert!((r.full_consensus_fraction - 0.2).abs() < 1e-15);
    }

    #[test]
    fn csv_summary_has_pair_columns() {
        let sets: BTreeMap<AnnotatorId, _> =
            [("A".into(), set(&["a"])), ("B".into(), set(&["a", "b"]))]
                .into_iter()
                .collect();
        let r = AgreementReport::aggregate(
            ReportScope::Round("r1".into()),
            "r1".into(),
            ReportPhase::BeforeDiscussion,
            sets.keys().cloned().collect(),
            vec![section_agreement("s".into(), &sets).unwrap()],
        );
        let csv = reports_to_csv(&[r]).unwrap();
        assert_eq!(
            csv,
            "round_id,phase,mean_pairwise,full_consensus_fraction,A~B\n\
             r1,before_discussion,0.500000,0.500000,0.500000\n"
        );
    }
}
