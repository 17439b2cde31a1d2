//! N-gram length distributions of consensus concepts.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::corpus::NormalizedConcept;
use crate::error::{Error, Result};

/// Gram-length buckets; lengths of five and above share the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GramBucket {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "5+6")]
    FivePlus,
}

impl GramBucket {
    pub const ALL: [GramBucket; 5] = [
        GramBucket::One,
        GramBucket::Two,
        GramBucket::Three,
        GramBucket::Four,
        GramBucket::FivePlus,
    ];

    pub fn of(gram_length: usize) -> GramBucket {
        match gram_length {
            0 | 1 => GramBucket::One,
            2 => GramBucket::Two,
            3 => GramBucket::Three,
            4 => GramBucket::Four,
            _ => GramBucket::FivePlus,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GramBucket::One => "1",
            GramBucket::Two => "2",
            GramBucket::Three => "3",
            GramBucket::Four => "4",
            GramBucket::FivePlus => "5+6",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for GramBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// `100 * count / total` rounded half-up to two decimals, with a `%` suffix.
///
/// Computed in integer arithmetic so that ties round exactly.
pub fn format_percent(count: u64, total: u64) -> Result<String> {
    if total == 0 {
        return Err(Error::DivisionDomain);
    }
    if count > total {
        return Err(Error::Validation(format!(
            "count {count} exceeds total {total}"
        )));
    }
    // hundredths of a percent = round(10000 * count / total), ties up
    let scaled = (20_000 * count as u128 + total as u128) / (2 * total as u128);
    Ok(format!("{}.{:02}%", scaled / 100, scaled % 100))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub bucket: GramBucket,
    pub count: u64,
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramStats {
    pub buckets: Vec<BucketCount>,
    pub total: u64,
    /// Concepts longer than six tokens, counted inside `5+6`.
    pub over_six: u64,
}

impl NgramStats {
    pub fn count(&self, bucket: GramBucket) -> u64 {
        self.buckets[bucket.index()].count
    }

    pub fn percent(&self, bucket: GramBucket) -> &str {
        &self.buckets[bucket.index()].percent
    }
}

pub fn ngram_distribution<'a, I>(concepts: I) -> NgramStats
where
    I: IntoIterator<Item = &'a NormalizedConcept>,
{
    let mut counts = [0u64; 5];
    let mut over_six = 0;
    for concept in concepts {
        counts[GramBucket::of(concept.gram_length()).index()] += 1;
        if concept.gram_length() > 6 {
            over_six += 1;
        }
    }
    if over_six > 0 {
        tracing::warn!(
            over_six,
            "concepts longer than six tokens counted under 5+6"
        );
    }
    let total: u64 = counts.iter().sum();
    let buckets = GramBucket::ALL
        .into_iter()
        .map(|bucket| {
            let count = counts[bucket.index()];
            BucketCount {
                bucket,
                count,
                percent: if total == 0 {
                    "0.00%".to_owned()
                } else {
                    format_percent(count, total).expect("count <= total")
                },
            }
        })
        .collect();
    NgramStats {
        buckets,
        total,
        over_six,
    }
}

/// Distinct values of a concept multiset.
pub fn unique<'a, I>(concepts: I) -> BTreeSet<NormalizedConcept>
where
    I: IntoIterator<Item = &'a NormalizedConcept>,
{
    concepts.into_iter().cloned().collect()
}

/// Occurrence and unique distributions before and after discussion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStatsTable {
    pub rounds: Vec<u32>,
    pub occurrences_before: NgramStats,
    pub unique_before: NgramStats,
    pub occurrences_after: NgramStats,
    pub unique_after: NgramStats,
}

impl CorpusStatsTable {
    /// Builds the table from per-section consensus lists.
    pub fn from_sections(
        rounds: Vec<u32>,
        before: &[BTreeSet<NormalizedConcept>],
        after: &[BTreeSet<NormalizedConcept>],
    ) -> Self {
        let occ_before: Vec<&NormalizedConcept> = before.iter().flatten().collect();
        let occ_after: Vec<&NormalizedConcept> = after.iter().flatten().collect();
        CorpusStatsTable {
            rounds,
            occurrences_before: ngram_distribution(occ_before.iter().copied()),
            unique_before: ngram_distribution(&unique(occ_before.iter().copied())),
            occurrences_after: ngram_distribution(occ_after.iter().copied()),
            unique_after: ngram_distribution(&unique(occ_after.iter().copied())),
        }
    }

    fn columns(&self) -> [&NgramStats; 4] {
        [
            &self.occurrences_before,
            &self.unique_before,
            &self.occurrences_after,
            &self.unique_after,
        ]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record([
            "grams",
            "concepts_before",
            "concepts_before_pct",
            "unique_before",
            "unique_before_pct",
            "concepts_after",
            "concepts_after_pct",
            "unique_after",
            "unique_after_pct",
        ])?;
        for bucket in GramBucket::ALL {
            let mut row = vec![bucket.label().to_owned()];
            for col in self.columns() {
                row.push(col.count(bucket).to_string());
                row.push(col.percent(bucket).to_owned());
            }
            writer.write_record(&row)?;
        }
        let mut row = vec!["all".to_owned()];
        for col in self.columns() {
            row.push(col.total.to_string());
            row.push(String::new());
        }
        writer.write_record(&row)?;
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned plain-text rendering: one row per bucket plus `all grams`.
    pub fn to_text(&self) -> String {
        let header = [
            "Characteristic",
            "Concepts (before)",
            "Unique (before)",
            "Concepts (after)",
            "Unique (after)",
        ];
        let mut rows: Vec<[String; 5]> = Vec::new();
        for bucket in GramBucket::ALL {
            let cell = |s: &NgramStats| format!("{} ({})", s.count(bucket), s.percent(bucket));
            let [a, b, c, d] = self.columns();
            rows.push([
                format!("{}-grams", bucket.label()),
                cell(a),
                cell(b),
                cell(c),
                cell(d),
            ]);
        }
        let [a, b, c, d] = self.columns();
        rows.push([
            "all grams".to_owned(),
            a.total.to_string(),
            b.total.to_string(),
            c.total.to_string(),
            d.total.to_string(),
        ]);
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &rows {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &cells);
        }
        let over: u64 = self.columns().iter().map(|c| c.over_six).sum();
        if over > 0 {
            let _ = writeln!(
                out,
                "note: {over} concept(s) longer than 6 grams counted under 5+6"
            );
        }
        out
    }
}
