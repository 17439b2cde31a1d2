use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ska_core::agreement::{jaccard, ReportPhase};
use ska_core::codebook::RoundAdditions;
use ska_core::testkit::{self, StudyShape};
use ska_core::*;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "Index",
        "inverted",
        "QUERY",
        "tf-idf",
        "Précision",
        "e\u{301}te\u{301}",
        "ß",
        "term",
        "ﬁle",
    ])
    .prop_map(str::to_owned)
}

fn surface() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(word(), 1..6),
        prop::sample::select(vec![" ", "  ", "\t", "\n "]),
    )
        .prop_map(|(words, sep)| format!(" {} ", words.join(sep)))
}

fn concept_sets(
    n: std::ops::Range<usize>,
) -> impl Strategy<Value = Vec<BTreeSet<NormalizedConcept>>> {
    prop::collection::vec(prop::collection::btree_set(0u8..12, 0..8), n).prop_map(|sets| {
        sets.into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|i| normalize(&format!("concept {i}")).unwrap())
                    .collect()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in surface()) {
        let once = normalize(&s).unwrap();
        let twice = normalize(once.value()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.gram_length(), once.value().split(' ').count());
        prop_assert!(!once.value().contains("  "));
    }

    #[test]
    fn partition_is_sound(sets in concept_sets(2..6)) {
        let p = partition_by_support(&sets).unwrap();
        let union: BTreeSet<_> = sets.iter().flatten().cloned().collect();
        let mut seen = BTreeSet::new();
        for k in 1..=sets.len() {
            for c in p.support(k) {
                prop_assert_eq!(sets.iter().filter(|s| s.contains(c)).count(), k);
                prop_assert!(seen.insert(c.clone()), "concept in two buckets");
            }
        }
        prop_assert_eq!(&seen, &union);
        let fcf = p.full_consensus_fraction();
        prop_assert!((0.0..=1.0).contains(&fcf));
        if union.is_empty() {
            prop_assert_eq!(fcf, 1.0);
        }
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(sets in concept_sets(2..3)) {
        let (a, b) = (&sets[0], &sets[1]);
        let ab = jaccard(a, b);
        prop_assert_eq!(ab, jaccard(b, a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(a, a), 1.0);
    }

    #[test]
    fn percentages_sum_near_100(counts in prop::collection::vec(0u64..5000, 5)) {
        let total: u64 = counts.iter().sum();
        prop_assume!(total > 0);
        let sum: f64 = counts
            .iter()
            .map(|&c| format_percent(c, total).unwrap().trim_end_matches('%').parse::<f64>().unwrap())
            .sum();
        prop_assert!((sum - 100.0).abs() <= 0.025 + 1e-9, "sum {}", sum);
    }

    #[test]
    fn codebook_grows_monotonically(adds in prop::collection::vec(0usize..4, 1..10)) {
        let mut cb = Codebook::new();
        let mut sizes = vec![cb.len()];
        for (i, n) in adds.iter().enumerate() {
            let round = i as u32 + 1;
            let changes: Vec<RuleChange> = (0..*n)
                .map(|k| RuleChange::Add { text: format!("rule {round}.{k}"), examples: vec![] })
                .collect();
            cb.apply_changes(&changes, round).unwrap();
            sizes.push(cb.len());
            for r in 0..=round {
                let v = cb.version_at(r);
                prop_assert!(v.rules.iter().all(|rule| rule.round_introduced <= r));
            }
        }
        prop_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        let history: Vec<RoundAdditions> = adds
            .iter()
            .enumerate()
            .map(|(i, n)| RoundAdditions { round: i as u32 + 1, added: *n })
            .collect();
        let report = convergence_report(&history);
        let expected = adds.iter().rposition(|n| *n > 0).map(|i| i as u32 + 1).unwrap_or(0);
        let has_later = (expected as usize) < adds.len();
        prop_assert_eq!(report.converged_at, has_later.then_some(expected));
    }
}

fn study_config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(study_config())]

    #[test]
    fn review_files_cover_exactly_the_peer_gap(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = StudyShape { chapters: 1, ..StudyShape::default() };
        let mut wb = testkit::setup(&mut rng, &shape);
        let chapter = wb.textbooks()[0].chapters[0].id.clone();
        let round = testkit::drive_round(&mut rng, &mut wb, &chapter, &shape, RoundPhase::MissedReview);
        let r = wb.round(&round).unwrap().clone();
        let sets = wb.section_sets(&r, ReportPhase::BeforeDiscussion).unwrap();
        for reviewer in &r.participants {
            let file = wb.review_file(&round, reviewer).unwrap();
            let got: BTreeSet<(SectionId, NormalizedConcept)> =
                file.iter().map(|c| (c.section_id.clone(), c.concept.clone())).collect();
            let mut expected = BTreeSet::new();
            for (section, by_annotator) in &sets {
                let own = &by_annotator[reviewer];
                for (other, set) in by_annotator {
                    if other != reviewer {
                        expected.extend(set.difference(own).map(|c| (section.clone(), c.clone())));
                    }
                }
            }
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn export_is_deterministic_and_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = StudyShape { leave_last_open: true, ..StudyShape::default() };
        let wb = testkit::random_study(&mut rng, &shape);
        let first = export_corpus(&wb, ExportOptions::full()).to_json().unwrap();
        prop_assert_eq!(&first, &export_corpus(&wb, ExportOptions::full()).to_json().unwrap());
        let back = import_corpus(&CorpusDocument::from_json(&first).unwrap()).unwrap();
        prop_assert_eq!(&first, &export_corpus(&back, ExportOptions::full()).to_json().unwrap());
        prop_assert!(back.integrity_problems().is_empty());
    }

    #[test]
    fn promotion_never_lowers_consensus(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = StudyShape { chapters: 1, allow_drop: false, ..StudyShape::default() };
        let mut wb = testkit::setup(&mut rng, &shape);
        let chapter = wb.textbooks()[0].chapters[0].id.clone();
        let round = testkit::drive_round(&mut rng, &mut wb, &chapter, &shape, RoundPhase::CodebookUpdate);
        let before = wb.agreement_report(&round, ReportPhase::BeforeDiscussion).unwrap();
        let after = wb.agreement_report(&round, ReportPhase::AfterDiscussion).unwrap();
        let consensus = |r: &AgreementReport| -> BTreeMap<SectionId, BTreeSet<NormalizedConcept>> {
            r.sections.iter().map(|s| (s.section_id.clone(), s.partition.consensus().clone())).collect()
        };
        let (b, a) = (consensus(&before), consensus(&after));
        for (section, set) in &b {
            prop_assert!(set.is_subset(&a[section]));
        }
        prop_assert!(after.full_consensus_fraction + 1e-12 >= before.full_consensus_fraction);
    }
}
