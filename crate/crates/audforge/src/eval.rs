//! Multiple-choice evaluation: extracts the answer span from a model
//! response and matches it to one of four choices, first by leading choice
//! letter, then by normalized equality, then by unique normalized
//! containment. Ambiguous or unmatched responses score incorrect and are
//! flagged for review.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::normalize_answer;
use crate::tagparse::extract_answer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCategory {
    Sound,
    Music,
    Speech,
}

impl EvalCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalCategory::Sound => "sound",
            EvalCategory::Music => "music",
            EvalCategory::Speech => "speech",
        }
    }
}

/// One benchmark item together with the model's raw response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub category: EvalCategory,
    pub question: String,
    pub choices: Vec<String>,
    pub gold_index: u8,
    pub model_response: String,
}

impl EvalItem {
    pub fn validate(&self) -> Result<()> {
        if self.item_id.trim().is_empty() {
            return Err(Error::InvalidInput("eval item without an id".into()));
        }
        if self.choices.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "{}: expected exactly 4 choices, got {}",
                self.item_id,
                self.choices.len()
            )));
        }
        if self.gold_index >= 4 {
            return Err(Error::InvalidInput(format!(
                "{}: gold_index {} out of range",
                self.item_id, self.gold_index
            )));
        }
        Ok(())
    }
}

/// How an answer text resolved against the choice list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Resolved through a leading choice letter.
    Letter(usize),
    /// Resolved through normalized equality with one choice.
    Exact(usize),
    /// Resolved because exactly one normalized choice occurs in the answer.
    Containment(usize),
    /// Two or more choices matched at the same precedence tier.
    Ambiguous(Vec<usize>),
    Unmatched,
}

impl MatchOutcome {
    pub fn selected(&self) -> Option<usize> {
        match self {
            MatchOutcome::Letter(i) | MatchOutcome::Exact(i) | MatchOutcome::Containment(i) => {
                Some(*i)
            }
            _ => None,
        }
    }
}

/// A leading "A".."D" (either case) counts as a letter answer when it is the
/// whole answer or is followed by a non-alphanumeric separator.
fn leading_letter(answer: &str) -> Option<usize> {
    let trimmed = answer.trim_start();
    let first = trimmed.chars().next()?;
    let index = match first.to_ascii_uppercase() {
        'A' => 0,
        'B' => 1,
        'C' => 2,
        'D' => 3,
        _ => return None,
    };
    match trimmed.chars().nth(1) {
        None => Some(index),
        Some(next) if !next.is_alphanumeric() => Some(index),
        Some(_) => None,
    }
}

/// Matches an extracted answer to a choice index by the fixed precedence:
/// leading letter, normalized equality, unique normalized containment.
pub fn match_answer(answer: &str, choices: &[String]) -> MatchOutcome {
    if let Some(index) = leading_letter(answer) {
        if index < choices.len() {
            return MatchOutcome::Letter(index);
        }
    }
    let normalized = normalize_answer(answer);
    if normalized.is_empty() {
        return MatchOutcome::Unmatched;
    }
    let normalized_choices: Vec<String> = choices.iter().map(|c| normalize_answer(c)).collect();
    let exact: Vec<usize> = normalized_choices
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty() && **c == normalized)
        .map(|(i, _)| i)
        .collect();
    match exact.len() {
        1 => return MatchOutcome::Exact(exact[0]),
        n if n >= 2 => return MatchOutcome::Ambiguous(exact),
        _ => {}
    }
    let contained: Vec<usize> = normalized_choices
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty() && normalized.contains(c.as_str()))
        .map(|(i, _)| i)
        .collect();
    match contained.len() {
        0 => MatchOutcome::Unmatched,
        1 => MatchOutcome::Containment(contained[0]),
        _ => MatchOutcome::Ambiguous(contained),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub category: EvalCategory,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected: Option<usize>,
    pub correct: bool,
    /// Set when the response had no extractable answer or matched more than
    /// one choice.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_category: BTreeMap<EvalCategory, CategoryStats>,
    /// Item ids needing manual review, sorted.
    pub flagged: Vec<String>,
    pub results: Vec<ItemResult>,
}

fn score_item(item: &EvalItem) -> ItemResult {
    let outcome = match extract_answer(&item.model_response) {
        Some(answer) => match_answer(&answer, &item.choices),
        None => MatchOutcome::Unmatched,
    };
    let selected = outcome.selected();
    ItemResult {
        item_id: item.item_id.clone(),
        category: item.category,
        selected,
        correct: selected == Some(item.gold_index as usize),
        flagged: selected.is_none(),
    }
}

/// Scores a full item set. Aggregates are independent of item order.
pub fn evaluate_mcq(items: &[EvalItem]) -> Result<EvalReport> {
    let mut seen: Vec<&str> = items.iter().map(|i| i.item_id.as_str()).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate eval item ids".into()));
    }
    for item in items {
        item.validate()?;
    }
    let mut report = EvalReport::default();
    for item in items {
        let result = score_item(item);
        report.total += 1;
        let stats = report.per_category.entry(item.category).or_default();
        stats.total += 1;
        if result.correct {
            report.correct += 1;
            stats.correct += 1;
        }
        if result.flagged {
            report.flagged.push(result.item_id.clone());
        }
        report.results.push(result);
    }
    report.accuracy = ratio(report.correct, report.total);
    for stats in report.per_category.values_mut() {
        stats.accuracy = ratio(stats.correct, stats.total);
    }
    report.flagged.sort();
    report.results.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(report)
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}
