//! Verifiable reward scoring: accuracy, format, length shaping, weighted
//! combination, and group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagparse::{parse_tagged, think_word_count};

/// Parameters of the piecewise length-shaping reward over think-span word
/// counts. With the defaults the reward is 1.0 on `n_gold - 5 <= n_y <=
/// n_gold`, decays linearly on both sides, and reaches zero at 15 words
/// under and 5 words over the gold count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthParams {
    pub alpha: f64,
    pub delta: f64,
    pub n_gold: u32,
}

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_N_GOLD: u32 = 25;

impl Default for LengthParams {
    fn default() -> Self {
        LengthParams {
            alpha: DEFAULT_ALPHA,
            delta: DEFAULT_DELTA,
            n_gold: DEFAULT_N_GOLD,
        }
    }
}

impl LengthParams {
    pub fn new(alpha: f64, delta: f64, n_gold: u32) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidInput(format!("delta must be non-negative, got {delta}")));
        }
        if n_gold == 0 {
            return Err(Error::InvalidInput("n_gold must be at least 1".into()));
        }
        Ok(LengthParams { alpha, delta, n_gold })
    }
}

/// Length-shaping reward for a response of `n_y` think-span words.
///
/// Responses at or under the gold count score `clip(1 - alpha * (n_gold -
/// n_y) + delta, 0, 1)`; longer responses score `clip(alpha * (n_gold - n_y)
/// + delta, 0, 1)`. The two branches meet discontinuously at the gold count.
pub fn length_reward(n_y: usize, params: &LengthParams) -> f64 {
    let n_gold = f64::from(params.n_gold);
    let n_y = n_y as f64;
    let raw = if n_y <= n_gold {
        1.0 - params.alpha * (n_gold - n_y) + params.delta
    } else {
        params.alpha * (n_gold - n_y) + params.delta
    };
    raw.clamp(0.0, 1.0)
}

/// Canonical answer normalization used by exact-match scoring: trim,
/// lowercase, and strip trailing sentence punctuation.
pub fn normalize_answer(text: &str) -> String {
    let mut current = text.trim().to_lowercase();
    loop {
        let stripped = current
            .trim_end()
            .trim_end_matches(['.', ',', ';', ':', '!', '?'])
            .to_string();
        if stripped == current {
            return current;
        }
        current = stripped;
    }
}

/// Binary accuracy reward: 1.0 when the strictly-parsed answer span equals
/// the gold answer after normalization, otherwise 0.0. A response whose
/// answer pair cannot be parsed scores 0.0.
pub fn accuracy_reward(response: &str, gold: &str) -> f64 {
    let parsed = parse_tagged(response, false);
    if parsed.answer_span.is_empty() {
        return 0.0;
    }
    if normalize_answer(&parsed.answer_span) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Binary format reward: 1.0 exactly when the response is well-formed under
/// the tag grammar.
pub fn format_reward(response: &str, require_semantic: bool) -> f64 {
    if parse_tagged(response, require_semantic).well_formed {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub accuracy: f64,
    pub format: f64,
    pub length: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { accuracy: 1.0, format: 1.0, length: 1.0 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("accuracy", self.accuracy),
            ("format", self.format),
            ("length", self.length),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "reward weight {name} must be non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-response reward breakdown with the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub format: f64,
    pub length: f64,
    pub n_y: usize,
    pub total: f64,
}

/// Combines component rewards into a weighted total, carrying the word count
/// the length component was computed from.
pub fn combine_rewards(
    accuracy: f64,
    format: f64,
    length: f64,
    n_y: usize,
    weights: &RewardWeights,
) -> RewardBreakdown {
    RewardBreakdown {
        accuracy,
        format,
        length,
        n_y,
        total: weights.accuracy * accuracy + weights.format * format + weights.length * length,
    }
}

/// Scores one response end to end: accuracy against the gold answer, format
/// under the tag grammar, and length shaping over the think span.
pub fn score_response(
    response: &str,
    gold: &str,
    params: &LengthParams,
    weights: &RewardWeights,
    require_semantic: bool,
) -> RewardBreakdown {
    let n_y = think_word_count(response);
    combine_rewards(
        accuracy_reward(response, gold),
        format_reward(response, require_semantic),
        length_reward(n_y, params),
        n_y,
        weights,
    )
}

/// Group-relative advantages over a rollout group's total rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
    pub normalized: bool,
}

/// A standard deviation at or below this relative tolerance is treated as
/// zero: the group is degenerate and every advantage is exactly 0.0 rather
/// than a ratio of rounding noise.
const STD_RELATIVE_EPS: f64 = 1e-12;

/// Computes mean-centered advantages for one rollout group, optionally
/// divided by the population standard deviation.
///
/// Advantages always sum to zero up to floating-point error. A degenerate
/// group (zero standard deviation) yields all-zero advantages in both modes.
pub fn group_advantages(totals: &[f64], normalize: bool) -> Result<GroupAdvantages> {
    if totals.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a rollout group needs at least 2 members, got {}",
            totals.len()
        )));
    }
    if let Some(bad) = totals.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite total reward {bad}")));
    }

    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let variance = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();

    let degenerate = std <= STD_RELATIVE_EPS * mean.abs().max(1.0);
    let advantages: Vec<f64> = if degenerate {
        vec![0.0; totals.len()]
    } else if normalize {
        totals.iter().map(|t| (t - mean) / std).collect()
    } else {
        totals.iter().map(|t| t - mean).collect()
    };

    Ok(GroupAdvantages {
        mean,
        std,
        advantages,
        normalized: normalize && !degenerate,
    })
}
