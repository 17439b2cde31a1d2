//! Versioned annotation rules.
//!
//! Rules are only ever added or amended. Round 0 holds the seed rules set
//! up before the first round; every later rule carries the index of the
//! round whose closure introduced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::RuleId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleExample {
    pub concept: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Amendment {
    pub round: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookRule {
    pub id: RuleId,
    pub text: String,
    #[serde(default)]
    pub examples: Vec<RuleExample>,
    pub round_introduced: u32,
    #[serde(default)]
    pub amendments: Vec<Amendment>,
}

impl CodebookRule {
    /// Text in force after `round` closed, if the rule existed by then.
    pub fn text_as_of(&self, round: u32) -> Option<&str> {
        if self.round_introduced > round {
            return None;
        }
        Some(
            self.amendments
                .iter()
                .rev()
                .find(|a| a.round <= round)
                .map_or(self.text.as_str(), |a| a.text.as_str()),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "rule {} has empty text",
                self.id
            )));
        }
        let mut last = self.round_introduced;
        for a in &self.amendments {
            if a.round <= last {
                return Err(Error::Validation(format!(
                    "rule {} amendment rounds must strictly increase past {last}, got {}",
                    self.id, a.round
                )));
            }
            if a.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "rule {} amended to empty text",
                    self.id
                )));
            }
            last = a.round;
        }
        Ok(())
    }
}

/// A change requested when a round closes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleChange {
    Add {
        text: String,
        #[serde(default)]
        examples: Vec<RuleExample>,
    },
    Amend {
        rule_id: RuleId,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveRule {
    pub id: RuleId,
    pub text: String,
    pub round_introduced: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookVersion {
    pub as_of_round: u32,
    pub rules: Vec<EffectiveRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Codebook {
    rules: Vec<CodebookRule>,
}

impl Codebook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a codebook from stored rules, checking their invariants.
    pub fn from_rules(rules: Vec<CodebookRule>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for rule in &rules {
            rule.validate()?;
            if !seen.insert(&rule.id) {
                return Err(Error::Integrity(format!("duplicate rule id {}", rule.id)));
            }
        }
        Ok(Codebook { rules })
    }

    pub fn rules(&self) -> &[CodebookRule] {
        &self.rules
    }

    pub fn rule(&self, id: &RuleId) -> Option<&CodebookRule> {
        self.rules.iter().find(|r| &r.id == id)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn next_id(&self) -> RuleId {
        RuleId::new(format!("R{}", self.rules.len() + 1))
    }

    pub fn add_rule(
        &mut self,
        text: impl Into<String>,
        examples: Vec<RuleExample>,
        round_index: u32,
    ) -> Result<&CodebookRule> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation("rule text must not be empty".into()));
        }
        self.rules.push(CodebookRule {
            id: self.next_id(),
            text,
            examples,
            round_introduced: round_index,
            amendments: Vec::new(),
        });
        Ok(self.rules.last().expect("just pushed"))
    }

    pub fn amend_rule(
        &mut self,
        id: &RuleId,
        text: impl Into<String>,
        round_index: u32,
    ) -> Result<&CodebookRule> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation(
                "amended rule text must not be empty".into(),
            ));
        }
        let rule = self
            .rules
            .iter_mut()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::not_found("rule", id))?;
        let last = rule
            .amendments
            .last()
            .map_or(rule.round_introduced, |a| a.round);
        if round_index <= last {
            return Err(Error::Validation(format!(
                "rule {id} was last changed in round {last}; amendments must come from a later round"
            )));
        }
        rule.amendments.push(Amendment {
            round: round_index,
            text,
        });
        Ok(rule)
    }

    /// Validates a batch of changes against a copy, then applies all or none.
    pub fn apply_changes(
        &mut self,
        changes: &[RuleChange],
        round_index: u32,
    ) -> Result<Vec<RuleId>> {
        let mut next = self.clone();
        let mut touched = Vec::with_capacity(changes.len());
        for change in changes {
            let id = match change {
                RuleChange::Add { text, examples } => next
                    .add_rule(text.clone(), examples.clone(), round_index)?
                    .id
                    .clone(),
                RuleChange::Amend { rule_id, text } => next
                    .amend_rule(rule_id, text.clone(), round_index)?
                    .id
                    .clone(),
            };
            touched.push(id);
        }
        *self = next;
        Ok(touched)
    }

    pub fn version_at(&self, round_index: u32) -> CodebookVersion {
        CodebookVersion {
            as_of_round: round_index,
            rules: self
                .rules
                .iter()
                .filter_map(|r| {
                    r.text_as_of(round_index).map(|text| EffectiveRule {
                        id: r.id.clone(),
                        text: text.to_owned(),
                        round_introduced: r.round_introduced,
                    })
                })
                .collect(),
        }
    }

    pub fn seed_count(&self) -> usize {
        self.rules
            .iter()
            .filter(|r| r.round_introduced == 0)
            .count()
    }

    /// Additions per closed round, in the order of `closed_rounds`.
    pub fn additions_per_round(&self, closed_rounds: &[u32]) -> Vec<RoundAdditions> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for rule in &self.rules {
            *counts.entry(rule.round_introduced).or_default() += 1;
        }
        closed_rounds
            .iter()
            .map(|&round| RoundAdditions {
                round,
                added: counts.get(&round).copied().unwrap_or(0),
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Codebook\n");
        for rule in &self.rules {
            let current = rule
                .amendments
                .last()
                .map_or(rule.text.as_str(), |a| a.text.as_str());
            let _ = write!(out, "\n## {}\n\n{}\n\n", rule.id, current);
            if rule.round_introduced == 0 {
                out.push_str("- Introduced: initial codebook\n");
            } else {
                let _ = writeln!(out, "- Introduced: round {}", rule.round_introduced);
            }
            if !rule.amendments.is_empty() {
                let _ = writeln!(out, "- Original text: {}", rule.text);
                for a in &rule.amendments {
                    let _ = writeln!(out, "- Amended in round {}: {}", a.round, a.text);
                }
            }
            if !rule.examples.is_empty() {
                out.push_str("\n| Example | Explanation |\n|---|---|\n");
                for ex in &rule.examples {
                    let _ = writeln!(
                        out,
                        "| {} | {} |",
                        ex.concept.replace('|', "\\|"),
                        ex.explanation.replace('|', "\\|")
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundAdditions {
    pub round: u32,
    pub added: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rules_added_per_round: Vec<RoundAdditions>,
    pub converged_at: Option<u32>,
}

/// The earliest round after which every closed round added nothing,
/// provided at least one closed round follows it.
pub fn convergence_report(history: &[RoundAdditions]) -> ConvergenceReport {
    let mut sorted = history.to_vec();
    sorted.sort_by_key(|h| h.round);
    let last_round = sorted.last().map(|h| h.round);
    let last_active = sorted
        .iter()
        .filter(|h| h.added > 0)
        .map(|h| h.round)
        .max()
        .unwrap_or(0);
    let converged_at = match last_round {
        Some(last) if last > last_active => Some(last_active),
        _ => None,
    };
    ConvergenceReport {
        rules_added_per_round: sorted,
        converged_at,
    }
}
