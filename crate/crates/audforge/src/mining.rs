//! Closed-caption mining: bracketed sound-description extraction, text
//! normalization, duration gating, and the dual-classifier keep decision.

use serde::{Deserialize, Serialize};

use crate::backend::{ClassifierBackend, JudgeBackend, RetryPolicy};
use crate::error::{Error, Result};
use crate::prompts::mining_judge_prompt;

/// One subtitle cue as read from the input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtitleLine {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

impl SubtitleLine {
    pub fn new(video_id: impl Into<String>, start_s: f64, end_s: f64, text: impl Into<String>) -> Result<Self> {
        let line = SubtitleLine {
            video_id: video_id.into(),
            start_s,
            end_s,
            text: text.into(),
        };
        line.validate()?;
        Ok(line)
    }

    pub fn validate(&self) -> Result<()> {
        if self.video_id.trim().is_empty() {
            return Err(Error::InvalidInput("subtitle line without video_id".into()));
        }
        if !(self.start_s.is_finite() && self.end_s.is_finite()) {
            return Err(Error::InvalidInput("subtitle timestamps must be finite".into()));
        }
        if self.start_s < 0.0 || self.end_s <= self.start_s {
            return Err(Error::InvalidInput(format!(
                "subtitle timestamps out of order: {} -> {}",
                self.start_s, self.end_s
            )));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketStyle {
    Round,
    Square,
    Curly,
}

impl BracketStyle {
    pub fn from_open(c: char) -> Option<Self> {
        match c {
            '(' => Some(BracketStyle::Round),
            '[' => Some(BracketStyle::Square),
            '{' => Some(BracketStyle::Curly),
            _ => None,
        }
    }

    pub fn open(self) -> char {
        match self {
            BracketStyle::Round => '(',
            BracketStyle::Square => '[',
            BracketStyle::Curly => '{',
        }
    }

    pub fn close(self) -> char {
        match self {
            BracketStyle::Round => ')',
            BracketStyle::Square => ']',
            BracketStyle::Curly => '}',
        }
    }
}

/// A bracketed caption that survived extraction. `normalized_text` keeps the
/// enclosing brackets; `content()` strips them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionCandidate {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub raw_text: String,
    pub normalized_text: String,
    pub bracket_style: BracketStyle,
}

impl CaptionCandidate {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Caption text without the enclosing brackets.
    pub fn content(&self) -> &str {
        self.normalized_text
            .strip_prefix(self.bracket_style.open())
            .and_then(|s| s.strip_suffix(self.bracket_style.close()))
            .unwrap_or(&self.normalized_text)
            .trim()
    }

    /// Stable per-sample key: sanitized video id plus zero-padded start and
    /// end in milliseconds.
    pub fn sample_key(&self) -> String {
        sample_key(&self.video_id, self.start_s, self.end_s)
    }
}

pub fn sample_key(video_id: &str, start_s: f64, end_s: f64) -> String {
    let sanitized: String = video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    format!(
        "{}_{:09}_{:09}",
        sanitized,
        (start_s * 1000.0).round() as u64,
        (end_s * 1000.0).round() as u64
    )
}

/// Why a subtitle line did not become a kept candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum RejectReason {
    /// The line is not a single fully-enclosing bracket pair.
    NoBracketPair,
    /// The bracket pair encloses nothing but whitespace.
    EmptyContent,
    /// Normalization removed every content character.
    EmptyAfterNormalize,
    DurationOutOfRange { seconds: f64 },
    /// The learned classifier voted no.
    ClassifierNo,
    /// The judge voted no.
    JudgeNo { reply: String },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::NoBracketPair => "no-bracket-pair",
            RejectReason::EmptyContent => "empty-content",
            RejectReason::EmptyAfterNormalize => "empty-after-normalize",
            RejectReason::DurationOutOfRange { .. } => "duration-out-of-range",
            RejectReason::ClassifierNo => "classifier-no",
            RejectReason::JudgeNo { .. } => "judge-no",
        }
    }
}

/// ASCII normalization for caption text: newlines become spaces, curly
/// quotes become their ASCII forms, remaining non-ASCII code points are
/// removed, and whitespace runs collapse to single spaces. Returns an empty
/// string when nothing survives.
pub fn normalize_caption(raw: &str) -> String {
    let mut mapped = String::with_capacity(raw.len());
    for c in raw.chars() {
        match c {
            '\n' | '\r' | '\t' => mapped.push(' '),
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' => mapped.push('\''),
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' => mapped.push('"'),
            c if c.is_ascii_control() => {}
            c if c.is_ascii() => mapped.push(c),
            _ => {}
        }
    }
    let mut out = String::with_capacity(mapped.len());
    let mut last_was_space = true;
    for c in mapped.chars() {
        if c == ' ' {
            if !last_was_space {
                out.push(' ');
            }
            last_was_space = true;
        } else {
            out.push(c);
            last_was_space = false;
        }
    }
    out.trim_end().to_string()
}

fn extract_candidate(line: &SubtitleLine) -> std::result::Result<CaptionCandidate, RejectReason> {
    let trimmed = line.text.trim();
    let mut chars = trimmed.chars();
    let style = chars
        .next()
        .and_then(BracketStyle::from_open)
        .ok_or(RejectReason::NoBracketPair)?;
    if !trimmed.ends_with(style.close()) {
        return Err(RejectReason::NoBracketPair);
    }

    // The bracket opened at position 0 must be the one closed by the final
    // character: a depth scan must first return to zero exactly at the end.
    // This rejects lines holding several separate groups, like
    // "[A calm navy color] [TinyTAN character detail]".
    let mut depth = 1usize;
    let mut closed_at_end = false;
    let last_index = trimmed.chars().count() - 1;
    for (i, c) in trimmed.chars().enumerate().skip(1) {
        if c == style.open() {
            depth += 1;
        } else if c == style.close() {
            depth -= 1;
            if depth == 0 {
                closed_at_end = i == last_index;
                break;
            }
        }
    }
    if !closed_at_end {
        return Err(RejectReason::NoBracketPair);
    }

    let inner: String = trimmed
        .chars()
        .skip(1)
        .take(last_index.saturating_sub(1))
        .collect();
    if inner.trim().is_empty() {
        return Err(RejectReason::EmptyContent);
    }

    let normalized = normalize_caption(trimmed);
    Ok(CaptionCandidate {
        video_id: line.video_id.clone(),
        start_s: line.start_s,
        end_s: line.end_s,
        raw_text: trimmed.to_string(),
        normalized_text: normalized,
        bracket_style: style,
    })
}

/// Extracts a bracketed caption candidate from a subtitle line, requiring
/// one bracket pair that encloses the entire line. Returns `None` for lines
/// without such a pair or with empty bracket content.
pub fn extract_bracketed(line: &SubtitleLine) -> Option<CaptionCandidate> {
    extract_candidate(line).ok()
}

/// Inclusive duration bounds for the mining gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningBounds {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

pub const DEFAULT_MINING_MIN_DURATION_S: f64 = 1.0;
pub const DEFAULT_MINING_MAX_DURATION_S: f64 = 10.0;

impl Default for MiningBounds {
    fn default() -> Self {
        MiningBounds {
            min_duration_s: DEFAULT_MINING_MIN_DURATION_S,
            max_duration_s: DEFAULT_MINING_MAX_DURATION_S,
        }
    }
}

impl MiningBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_duration_s.is_finite() && self.max_duration_s.is_finite())
            || self.min_duration_s < 0.0
            || self.max_duration_s < self.min_duration_s
        {
            return Err(Error::Config(format!(
                "invalid mining duration bounds [{}, {}]",
                self.min_duration_s, self.max_duration_s
            )));
        }
        Ok(())
    }
}

/// True when the candidate duration lies inside the inclusive bounds.
pub fn duration_gate(candidate: &CaptionCandidate, bounds: &MiningBounds) -> bool {
    let d = candidate.duration_s();
    d >= bounds.min_duration_s && d <= bounds.max_duration_s
}

/// Pure mining gates for one line: extraction, normalization, duration.
/// Classification happens separately because it needs backends.
pub fn mine_line(
    line: &SubtitleLine,
    bounds: &MiningBounds,
) -> std::result::Result<CaptionCandidate, RejectReason> {
    let candidate = extract_candidate(line)?;
    if candidate.content().is_empty() {
        return Err(RejectReason::EmptyAfterNormalize);
    }
    if !duration_gate(&candidate, bounds) {
        return Err(RejectReason::DurationOutOfRange { seconds: candidate.duration_s() });
    }
    Ok(candidate)
}

/// Parses a judge reply down to a yes/no vote. Only the first whitespace
/// token is considered, with surrounding punctuation stripped, so "Yes." and
/// "no," parse while "yesterday" does not.
pub fn parse_yes_no(reply: &str) -> Result<bool> {
    let token = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .to_ascii_lowercase();
    match token.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(Error::JudgeReply { reply: reply.to_string() }),
    }
}

/// Both classifiers' votes on one candidate. The candidate is kept only when
/// both vote yes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub learned_vote: bool,
    pub judge_vote: bool,
    pub judge_reply: String,
}

impl GateDecision {
    pub fn kept(&self) -> bool {
        self.learned_vote && self.judge_vote
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        if !self.learned_vote {
            Some(RejectReason::ClassifierNo)
        } else if !self.judge_vote {
            Some(RejectReason::JudgeNo { reply: self.judge_reply.clone() })
        } else {
            None
        }
    }
}

/// Runs the learned classifier and the judge on one candidate. Transport
/// errors and unparseable judge replies are retried under `retry`; exhausted
/// retries surface as errors so the caller can mark the line failed rather
/// than silently dropped.
pub fn classify_candidate(
    candidate: &CaptionCandidate,
    learned: &dyn ClassifierBackend,
    judge: &dyn JudgeBackend,
    retry: &RetryPolicy,
) -> Result<GateDecision> {
    let learned_vote = retry.run(|| learned.classify(candidate))?;

    let prompt = mining_judge_prompt(&candidate.normalized_text);
    let mut last_err: Option<Error> = None;
    for attempt in 1..=retry.attempts {
        match judge.judge(&prompt) {
            Ok(reply) => match parse_yes_no(&reply) {
                Ok(vote) => {
                    return Ok(GateDecision {
                        learned_vote,
                        judge_vote: vote,
                        judge_reply: reply,
                    })
                }
                Err(e) => last_err = Some(e),
            },
            Err(e) if e.is_retryable() && attempt < retry.attempts => last_err = Some(e),
            Err(e) => return Err(e),
        }
        if attempt < retry.attempts {
            retry.pause(attempt);
        }
    }
    Err(last_err.unwrap_or_else(|| Error::backend("judge", "no attempts made", false)))
}

/// Reference keep/reject rule over caption content: votes yes when any
/// token, after light suffix stripping, appears in the lexicon of
/// sound-describing words.
#[derive(Debug, Clone)]
pub struct RuleClassifier {
    lexicon: Vec<String>,
}

/// Word stems that mark a caption as describing an actual sound: generic
/// sound vocabulary plus common onomatopoeia and vocalization verbs.
pub const DEFAULT_SOUND_LEXICON: &[&str] = &[
    "sound", "noise", "music", "audio", "silence", "laugh", "laughter", "giggle", "chuckle",
    "cry", "sob", "scream", "shout", "yell", "whisper", "sigh", "gasp", "groan", "grunt",
    "snore", "cough", "sneeze", "applause", "clap", "cheer", "chant", "sing", "hum", "whistle",
    "bark", "meow", "moo", "oink", "quack", "cluck", "bock", "chirp", "tweet", "caw", "roar",
    "growl", "hiss", "howl", "neigh", "bleat", "buzz", "crash", "bang", "boom", "thud", "thump",
    "smack", "slam", "knock", "tap", "click", "clack", "clatter", "rattle", "rumble", "creak",
    "squeak", "squeal", "screech", "beep", "honk", "ring", "chime", "ding", "clang", "jingle",
    "splash", "drip", "pour", "gurgle", "sizzle", "crackle", "pop", "snap", "fizz", "swoosh",
    "whoosh", "swish", "footstep", "explosion", "gunshot", "siren", "alarm", "engine", "revving",
    "collision", "impact", "echo", "static", "drone", "droning", "wail", "imitation",
];

impl RuleClassifier {
    pub fn with_default_lexicon() -> Self {
        Self::new(DEFAULT_SOUND_LEXICON.iter().map(|s| s.to_string()))
    }

    pub fn new(stems: impl IntoIterator<Item = String>) -> Self {
        RuleClassifier {
            lexicon: stems.into_iter().map(|s| s.to_ascii_lowercase()).collect(),
        }
    }

    fn in_lexicon(&self, word: &str) -> bool {
        self.lexicon.iter().any(|s| s == word)
    }

    pub fn matches(&self, content: &str) -> bool {
        content
            .split(|c: char| !c.is_ascii_alphabetic())
            .filter(|t| !t.is_empty())
            .any(|token| {
                let token = token.to_ascii_lowercase();
                self.word_forms(&token).iter().any(|f| self.in_lexicon(f))
            })
    }

    /// Candidate dictionary forms for a surface token: the token itself plus
    /// light suffix stripping (plural, past, progressive) with doubled-final
    /// and dropped-e repair, so "smacking", "clapped", and "whistling" all
    /// reach their stems.
    fn word_forms(&self, token: &str) -> Vec<String> {
        let mut forms = vec![token.to_string()];
        for suffix in ["es", "s"] {
            if let Some(stem) = token.strip_suffix(suffix) {
                forms.push(stem.to_string());
            }
        }
        for suffix in ["ed", "ing"] {
            if let Some(stem) = token.strip_suffix(suffix) {
                forms.push(stem.to_string());
                let chars: Vec<char> = stem.chars().collect();
                if chars.len() >= 2 && chars[chars.len() - 1] == chars[chars.len() - 2] {
                    forms.push(chars[..chars.len() - 1].iter().collect());
                }
                forms.push(format!("{stem}e"));
            }
        }
        forms
    }
}

impl ClassifierBackend for RuleClassifier {
    fn classify(&self, candidate: &CaptionCandidate) -> Result<bool> {
        Ok(self.matches(candidate.content()))
    }
}

/// Converts SRT content into subtitle lines for one video. Malformed blocks
/// are skipped, not fatal, because subtitle files in the wild are messy.
pub fn parse_srt(video_id: &str, content: &str) -> Result<Vec<SubtitleLine>> {
    let timestamp = regex::Regex::new(
        r"^(\d{1,2}):(\d{2}):(\d{2})[,.](\d{1,3})\s*-->\s*(\d{1,2}):(\d{2}):(\d{2})[,.](\d{1,3})",
    )
    .expect("valid srt timestamp pattern");

    let mut lines = Vec::new();
    for block in content.replace("\r\n", "\n").split("\n\n") {
        let rows: Vec<&str> = block.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() < 2 {
            continue;
        }
        // Index row is optional; the timestamp row anchors the block.
        let (ts_row, text_rows) = if timestamp.is_match(rows[0].trim()) {
            (rows[0], &rows[1..])
        } else if rows.len() >= 3 && timestamp.is_match(rows[1].trim()) {
            (rows[1], &rows[2..])
        } else {
            log::warn!("skipping srt block without timestamp row: {block:?}");
            continue;
        };
        let caps = timestamp.captures(ts_row.trim()).expect("matched above");
        let field = |i: usize| -> f64 { caps[i].parse::<f64>().unwrap_or(0.0) };
        let millis = |i: usize| -> f64 {
            let raw = &caps[i];
            let val = raw.parse::<f64>().unwrap_or(0.0);
            val / 10f64.powi(raw.len() as i32)
        };
        let start = field(1) * 3600.0 + field(2) * 60.0 + field(3) + millis(4);
        let end = field(5) * 3600.0 + field(6) * 60.0 + field(7) + millis(8);
        match SubtitleLine::new(video_id, start, end, text_rows.join("\n")) {
            Ok(line) => lines.push(line),
            Err(e) => log::warn!("skipping srt block: {e}"),
        }
    }
    Ok(lines)
}
