//! Structured caption synthesis: prompt assembly, generator output
//! validation, the judge-validate-retry loop, tagged serialization, and
//! expansion into the four task types.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationBundle;
use crate::backend::{GeneratorBackend, JudgeBackend, SchemaId};
use crate::error::{Error, Result};
use crate::mining::CaptionCandidate;
use crate::prompts::{
    fill_template, judge_validation_prompt, music_caption_section, GENERATION_PROMPT_TEMPLATE,
};
use crate::tagparse::parse_tagged;
use crate::util::{fmt_seconds, sample_seed, word_count};

/// The nine semantic descriptor fields, in canonical rendering order.
pub const SEMANTIC_FIELDS: [&str; 9] = [
    "agents_who",
    "sources_what",
    "mechanisms_how",
    "temporal_when",
    "spatial_where",
    "acoustic_surfaces",
    "signal_descriptors",
    "auditory_attributes",
    "non_auditory_sensation",
];

/// Semantic descriptors of an audio scene. All fields optional; the
/// three-phase schema requires at least one to be non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticDescriptors {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents_who: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources_what: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mechanisms_how: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal_when: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_where: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acoustic_surfaces: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_descriptors: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auditory_attributes: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_auditory_sensation: Option<String>,
}

impl SemanticDescriptors {
    pub fn get(&self, field: &str) -> Option<&str> {
        let slot = match field {
            "agents_who" => &self.agents_who,
            "sources_what" => &self.sources_what,
            "mechanisms_how" => &self.mechanisms_how,
            "temporal_when" => &self.temporal_when,
            "spatial_where" => &self.spatial_where,
            "acoustic_surfaces" => &self.acoustic_surfaces,
            "signal_descriptors" => &self.signal_descriptors,
            "auditory_attributes" => &self.auditory_attributes,
            "non_auditory_sensation" => &self.non_auditory_sensation,
            _ => return None,
        };
        slot.as_deref()
    }

    pub fn set(&mut self, field: &str, value: String) -> bool {
        let slot = match field {
            "agents_who" => &mut self.agents_who,
            "sources_what" => &mut self.sources_what,
            "mechanisms_how" => &mut self.mechanisms_how,
            "temporal_when" => &mut self.temporal_when,
            "spatial_where" => &mut self.spatial_where,
            "acoustic_surfaces" => &mut self.acoustic_surfaces,
            "signal_descriptors" => &mut self.signal_descriptors,
            "auditory_attributes" => &mut self.auditory_attributes,
            "non_auditory_sensation" => &mut self.non_auditory_sensation,
            _ => return false,
        };
        *slot = Some(value);
        true
    }

    pub fn is_empty(&self) -> bool {
        SEMANTIC_FIELDS
            .iter()
            .all(|f| self.get(f).is_none_or(|v| v.trim().is_empty()))
    }

    /// Trims values, folds interior newlines to spaces (the block format is
    /// one line per field), and drops empty fields.
    pub fn normalized(&self) -> Self {
        let mut out = SemanticDescriptors::default();
        for field in SEMANTIC_FIELDS {
            if let Some(value) = self.get(field) {
                let cleaned = value.split_whitespace().collect::<Vec<_>>().join(" ");
                if !cleaned.is_empty() {
                    out.set(field, cleaned);
                }
            }
        }
        out
    }

    /// Canonical block form: one "field: value" line per present field, in
    /// `SEMANTIC_FIELDS` order.
    pub fn render_block(&self) -> String {
        SEMANTIC_FIELDS
            .iter()
            .filter_map(|f| self.get(f).map(|v| format!("{f}: {v}")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Parses a block back into descriptors. Lines without a known field
    /// prefix are ignored.
    pub fn parse_block(block: &str) -> Self {
        let mut out = SemanticDescriptors::default();
        for line in block.lines() {
            if let Some((key, value)) = line.split_once(": ") {
                let key = key.trim();
                if SEMANTIC_FIELDS.contains(&key) {
                    out.set(key, value.trim().to_string());
                }
            }
        }
        out
    }
}

/// The generator's validated reply: reasoning, optional semantic
/// descriptors, and the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredTriplet {
    pub thinking: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub semantic: Option<SemanticDescriptors>,
    pub answer: String,
}

pub const MIN_THINKING_WORDS: usize = 50;
pub const MAX_ANSWER_WORDS: usize = 50;

/// Length bounds applied by triplet validation. Caption synthesis uses the
/// defaults; task-record triplets use `relaxed()` since their bounds are
/// shape-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisBounds {
    pub min_thinking_words: usize,
    /// Strict upper bound: an answer of exactly this many words is rejected.
    pub max_answer_words: Option<usize>,
}

impl Default for SynthesisBounds {
    fn default() -> Self {
        SynthesisBounds {
            min_thinking_words: MIN_THINKING_WORDS,
            max_answer_words: Some(MAX_ANSWER_WORDS),
        }
    }
}

impl SynthesisBounds {
    pub fn relaxed() -> Self {
        SynthesisBounds { min_thinking_words: 1, max_answer_words: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_thinking_words == 0 {
            return Err(Error::Config("min_thinking_words must be at least 1".into()));
        }
        if self.max_answer_words == Some(0) {
            return Err(Error::Config("max_answer_words must be at least 1".into()));
        }
        Ok(())
    }
}

/// Validation failure for one generator reply, with a stable category code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "kebab-case")]
pub enum TripletError {
    MalformedJson { detail: String },
    WrongType { field: String },
    MissingKey { key: String },
    UnexpectedKey { key: String },
    UnexpectedSemantic,
    EmptySemantic,
    ThinkingTooShort { words: usize, minimum: usize },
    AnswerTooLong { words: usize, maximum: usize },
    EmptyAnswer,
    /// A field value embeds one of the grammar tags, which would corrupt
    /// tagged serialization.
    EmbeddedTag { field: String },
}

impl TripletError {
    pub fn category(&self) -> &'static str {
        match self {
            TripletError::MalformedJson { .. } => "malformed-json",
            TripletError::WrongType { .. } => "wrong-type",
            TripletError::MissingKey { .. } => "missing-key",
            TripletError::UnexpectedKey { .. } => "unexpected-key",
            TripletError::UnexpectedSemantic => "unexpected-semantic",
            TripletError::EmptySemantic => "empty-semantic",
            TripletError::ThinkingTooShort { .. } => "thinking-too-short",
            TripletError::AnswerTooLong { .. } => "answer-too-long",
            TripletError::EmptyAnswer => "empty-answer",
            TripletError::EmbeddedTag { .. } => "embedded-tag",
        }
    }
}

impl std::fmt::Display for TripletError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TripletError::MalformedJson { detail } => write!(f, "malformed JSON: {detail}"),
            TripletError::WrongType { field } => write!(f, "field {field} has the wrong type"),
            TripletError::MissingKey { key } => write!(f, "missing key {key}"),
            TripletError::UnexpectedKey { key } => write!(f, "unexpected key {key}"),
            TripletError::UnexpectedSemantic => write!(f, "semantic_elements present in two-phase mode"),
            TripletError::EmptySemantic => write!(f, "semantic_elements has no non-empty field"),
            TripletError::ThinkingTooShort { words, minimum } => {
                write!(f, "thinking has {words} words, minimum {minimum}")
            }
            TripletError::AnswerTooLong { words, maximum } => {
                write!(f, "answer has {words} words, must be under {maximum}")
            }
            TripletError::EmptyAnswer => write!(f, "answer is empty"),
            TripletError::EmbeddedTag { field } => write!(f, "field {field} embeds a grammar tag"),
        }
    }
}

impl std::error::Error for TripletError {}

const TAG_LITERALS: [&str; 8] = [
    "<think>",
    "</think>",
    "<thinking>",
    "</thinking>",
    "<semantic_elements>",
    "</semantic_elements>",
    "<answer>",
    "</answer>",
];

fn check_embedded_tags(field: &str, value: &str) -> std::result::Result<(), TripletError> {
    if TAG_LITERALS.iter().any(|t| value.contains(t)) {
        return Err(TripletError::EmbeddedTag { field: field.to_string() });
    }
    Ok(())
}

fn string_field(
    object: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> std::result::Result<String, TripletError> {
    match object.get(key) {
        None => Err(TripletError::MissingKey { key: key.to_string() }),
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(TripletError::WrongType { field: key.to_string() }),
    }
}

/// Validates a generator reply against the structured schema and returns the
/// normalized triplet.
pub fn validate_triplet(
    raw_json: &str,
    semantic_mode: bool,
) -> std::result::Result<StructuredTriplet, TripletError> {
    validate_triplet_with(raw_json, semantic_mode, &SynthesisBounds::default())
}

pub fn validate_triplet_with(
    raw_json: &str,
    semantic_mode: bool,
    bounds: &SynthesisBounds,
) -> std::result::Result<StructuredTriplet, TripletError> {
    let value: serde_json::Value = serde_json::from_str(raw_json)
        .map_err(|e| TripletError::MalformedJson { detail: e.to_string() })?;
    validate_triplet_value(&value, semantic_mode, bounds)
}

/// Same validation over an already-parsed JSON value; `extra_keys` are not
/// tolerated beyond the schema's own.
pub fn validate_triplet_value(
    value: &serde_json::Value,
    semantic_mode: bool,
    bounds: &SynthesisBounds,
) -> std::result::Result<StructuredTriplet, TripletError> {
    let object = value.as_object().ok_or_else(|| TripletError::MalformedJson {
        detail: "top level is not an object".into(),
    })?;

    for key in object.keys() {
        if !matches!(key.as_str(), "thinking" | "answer" | "semantic_elements") {
            return Err(TripletError::UnexpectedKey { key: key.clone() });
        }
    }

    let thinking = string_field(object, "thinking")?.trim().to_string();
    let answer = string_field(object, "answer")?.trim().to_string();

    let semantic = match object.get("semantic_elements") {
        Some(serde_json::Value::Object(fields)) => {
            if !semantic_mode {
                return Err(TripletError::UnexpectedSemantic);
            }
            let mut descriptors = SemanticDescriptors::default();
            for (key, v) in fields {
                if !SEMANTIC_FIELDS.contains(&key.as_str()) {
                    return Err(TripletError::UnexpectedKey {
                        key: format!("semantic_elements.{key}"),
                    });
                }
                match v {
                    serde_json::Value::String(s) => {
                        descriptors.set(key, s.clone());
                    }
                    serde_json::Value::Null => {}
                    _ => {
                        return Err(TripletError::WrongType {
                            field: format!("semantic_elements.{key}"),
                        })
                    }
                }
            }
            let descriptors = descriptors.normalized();
            if descriptors.is_empty() {
                return Err(TripletError::EmptySemantic);
            }
            Some(descriptors)
        }
        Some(serde_json::Value::Null) | None => {
            if semantic_mode {
                return Err(TripletError::MissingKey { key: "semantic_elements".into() });
            }
            None
        }
        Some(_) => return Err(TripletError::WrongType { field: "semantic_elements".into() }),
    };

    let thinking_words = word_count(&thinking);
    if thinking_words < bounds.min_thinking_words {
        return Err(TripletError::ThinkingTooShort {
            words: thinking_words,
            minimum: bounds.min_thinking_words,
        });
    }
    if answer.is_empty() {
        return Err(TripletError::EmptyAnswer);
    }
    if let Some(max) = bounds.max_answer_words {
        let answer_words = word_count(&answer);
        if answer_words >= max {
            return Err(TripletError::AnswerTooLong { words: answer_words, maximum: max });
        }
    }

    check_embedded_tags("thinking", &thinking)?;
    check_embedded_tags("answer", &answer)?;
    if let Some(descriptors) = &semantic {
        for field in SEMANTIC_FIELDS {
            if let Some(v) = descriptors.get(field) {
                check_embedded_tags(&format!("semantic_elements.{field}"), v)?;
            }
        }
    }

    Ok(StructuredTriplet { thinking, semantic, answer })
}

/// Serializes a triplet into the canonical tagged string. The semantic
/// section is emitted only in semantic mode and only when descriptors are
/// present and non-empty.
pub fn serialize_tagged(triplet: &StructuredTriplet, semantic_mode: bool) -> String {
    let semantic_block = if semantic_mode {
        triplet
            .semantic
            .as_ref()
            .map(|s| s.normalized())
            .filter(|s| !s.is_empty())
            .map(|s| format!("<semantic_elements>\n{}\n</semantic_elements>\n", s.render_block()))
            .unwrap_or_default()
    } else {
        String::new()
    };
    format!(
        "<think>{}</think>\n{}<answer>{}</answer>",
        triplet.thinking, semantic_block, triplet.answer
    )
}

impl StructuredTriplet {
    /// Reconstructs a triplet from a tagged string. Inverse of
    /// `serialize_tagged` on well-formed input.
    pub fn from_tagged(text: &str, semantic_mode: bool) -> Result<Self> {
        let parsed = parse_tagged(text, semantic_mode);
        if !parsed.well_formed {
            return Err(Error::InvalidInput(format!(
                "tagged text is not well-formed: {:?}",
                parsed.violation_codes()
            )));
        }
        Ok(StructuredTriplet {
            thinking: parsed.think_span,
            semantic: parsed
                .semantic_span
                .map(|block| SemanticDescriptors::parse_block(&block)),
            answer: parsed.answer_span,
        })
    }
}

/// Builds the caption generation prompt for one sample from its annotation
/// bundle and mined caption.
pub fn build_prompt(bundle: &AnnotationBundle, cc: &CaptionCandidate) -> Result<String> {
    if cc.content().is_empty() {
        return Err(Error::InvalidInput("caption candidate has no content".into()));
    }
    if bundle.audio.general_caption.trim().is_empty() {
        return Err(Error::InvalidInput("annotation bundle has no audio caption".into()));
    }

    let scored_list = |labels: &[crate::annotate::DedupedLabel]| -> String {
        labels
            .iter()
            .map(|l| format!("{} ({:.2})", l.label, l.score))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let detections = bundle
        .visual
        .detections
        .iter()
        .map(|d| format!("{} ({:.2})", d.label, d.score))
        .collect::<Vec<_>>()
        .join(", ");

    // Per-second predictions rendered as a JSON-style dict in numeric second
    // order; labels within a second are deduplicated and sorted.
    let mut sat = String::from("{");
    for (i, (second, labels)) in bundle.per_second_events.iter().enumerate() {
        if i > 0 {
            sat.push_str(", ");
        }
        let inner = crate::annotate::dedup_average(labels)
            .iter()
            .map(|l| format!("{}: {:.2}", serde_json::Value::from(l.label.clone()), l.score))
            .collect::<Vec<_>>()
            .join(", ");
        sat.push_str(&format!("\"{second}\": {{{inner}}}"));
    }
    sat.push('}');

    let music_section = bundle
        .audio
        .music_caption
        .as_deref()
        .map(music_caption_section)
        .unwrap_or_default();

    let fields = BTreeMap::from([
        ("video_id", cc.video_id.clone()),
        ("start", fmt_seconds(cc.start_s)),
        ("end", fmt_seconds(cc.end_s)),
        ("text", cc.normalized_text.clone()),
        ("audio_caption", bundle.audio.general_caption.clone()),
        ("audio_tags", scored_list(&bundle.audio.tags)),
        ("conette_candidates", bundle.audio.contextual_caption.clone()),
        ("sat_predictions", sat),
        ("music_caption_section", music_section),
        ("caption", bundle.visual.frame_captions.join("; ")),
        ("objects", detections),
        ("places", scored_list(&bundle.visual.scene_classes)),
    ]);
    Ok(fill_template(GENERATION_PROMPT_TEMPLATE, &fields))
}

/// The judge's parsed verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub valid: bool,
    #[serde(default)]
    pub reason: String,
}

/// Parses a judge reply into a verdict: direct JSON first, then the first
/// balanced JSON object embedded in surrounding prose.
pub fn parse_judge_verdict(reply: &str) -> Result<JudgeVerdict> {
    let accept = |v: JudgeVerdict| -> Result<JudgeVerdict> {
        if !v.valid && v.reason.trim().is_empty() {
            return Err(Error::InvalidInput(
                "judge verdict invalid without a reason".into(),
            ));
        }
        Ok(v)
    };

    if let Ok(v) = serde_json::from_str::<JudgeVerdict>(reply.trim()) {
        return accept(v);
    }
    for (start, _) in reply.match_indices('{') {
        if let Some(candidate) = balanced_object(&reply[start..]) {
            if let Ok(v) = serde_json::from_str::<JudgeVerdict>(candidate) {
                return accept(v);
            }
        }
    }
    Err(Error::InvalidInput(format!(
        "judge reply holds no verdict object: {reply:?}"
    )))
}

/// Longest balanced `{...}` prefix of `text`, string-aware.
fn balanced_object(text: &str) -> Option<&str> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(&text[..i + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

pub const DEFAULT_MAX_SYNTH_ATTEMPTS: u32 = 5;

/// Outcome of the generate-validate-judge loop for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SynthesisOutcome {
    Accepted {
        triplet: StructuredTriplet,
        generator_calls: u32,
    },
    Skipped {
        generator_calls: u32,
        failures: Vec<String>,
    },
}

/// Generates until a reply passes both schema validation and the judge, or
/// the attempt budget runs out. Backend errors, schema failures, and judge
/// rejections all consume attempts; the generator is called at most
/// `max_attempts` times.
pub fn judge_and_retry(
    generator: &dyn GeneratorBackend,
    judge: &dyn JudgeBackend,
    prompt: &str,
    max_attempts: u32,
    semantic_mode: bool,
    bounds: &SynthesisBounds,
) -> SynthesisOutcome {
    let schema = if semantic_mode { SchemaId::ThreePhase } else { SchemaId::TwoPhase };
    let mut failures = Vec::new();
    let max_attempts = max_attempts.max(1);
    for attempt in 1..=max_attempts {
        let raw = match generator.generate(prompt, schema) {
            Ok(raw) => raw,
            Err(e) => {
                failures.push(format!("attempt {attempt}: generate: {e}"));
                continue;
            }
        };
        let triplet = match validate_triplet_with(&raw, semantic_mode, bounds) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("attempt {attempt}: {}: {e}", e.category()));
                continue;
            }
        };
        let reply = match judge.judge(&judge_validation_prompt(&raw)) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("attempt {attempt}: judge: {e}"));
                continue;
            }
        };
        match parse_judge_verdict(&reply) {
            Ok(v) if v.valid => {
                return SynthesisOutcome::Accepted { triplet, generator_calls: attempt }
            }
            Ok(v) => failures.push(format!("attempt {attempt}: judge rejected: {}", v.reason)),
            Err(e) => failures.push(format!("attempt {attempt}: verdict: {e}")),
        }
    }
    SynthesisOutcome::Skipped { generator_calls: max_attempts, failures }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Caption,
    Mcqa,
    OpenQa,
    Creative,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Caption => "caption",
            TaskKind::Mcqa => "mcqa",
            TaskKind::OpenQa => "open_qa",
            TaskKind::Creative => "creative",
        }
    }
}

pub const CAPTION_INSTRUCTION: &str = "Describe the audio in detail";

/// One training record: an instruction and its tagged target, plus choice
/// fields for the MCQA kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub sample_id: String,
    pub kind: TaskKind,
    pub instruction: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub choices: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub correct_index: Option<u8>,
    /// The structured triplet in tagged serialization.
    pub target: String,
}

impl TaskRecord {
    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}: empty instruction",
                self.sample_id
            )));
        }
        if self.target.trim().is_empty() {
            return Err(Error::InvalidInput(format!("{}: empty target", self.sample_id)));
        }
        match self.kind {
            TaskKind::Mcqa => {
                let choices = self.choices.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!("{}: mcqa without choices", self.sample_id))
                })?;
                if choices.len() != 4 {
                    return Err(Error::InvalidInput(format!(
                        "{}: mcqa needs exactly 4 choices, got {}",
                        self.sample_id,
                        choices.len()
                    )));
                }
                let mut distinct: Vec<&String> = choices.iter().collect();
                distinct.sort();
                distinct.dedup();
                if distinct.len() != 4 {
                    return Err(Error::InvalidInput(format!(
                        "{}: mcqa choices must be distinct",
                        self.sample_id
                    )));
                }
                match self.correct_index {
                    Some(i) if i < 4 => {}
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "{}: mcqa needs correct_index in 0..3",
                            self.sample_id
                        )))
                    }
                }
            }
            _ => {
                if self.choices.is_some() || self.correct_index.is_some() {
                    return Err(Error::InvalidInput(format!(
                        "{}: choice fields only belong to mcqa",
                        self.sample_id
                    )));
                }
                if self.kind == TaskKind::Caption && self.instruction != CAPTION_INSTRUCTION {
                    return Err(Error::InvalidInput(format!(
                        "{}: caption instruction must be fixed",
                        self.sample_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Target corpus shares per task kind. The caption share anchors the draw:
/// every sample emits exactly one caption record, and the other kinds are
/// selected with probabilities that hit the target shares in expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSplit {
    pub caption: f64,
    pub mcqa: f64,
    pub open_qa: f64,
    pub creative: f64,
}

impl Default for TaskSplit {
    fn default() -> Self {
        TaskSplit { caption: 0.20, mcqa: 0.25, open_qa: 0.50, creative: 0.05 }
    }
}

/// Selected non-caption kinds emit 2 or 3 records, uniformly.
const RECORDS_PER_SELECTED_KIND: f64 = 2.5;

impl TaskSplit {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("caption", self.caption),
            ("mcqa", self.mcqa),
            ("open_qa", self.open_qa),
            ("creative", self.creative),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("task share {name} must be non-negative")));
            }
        }
        if self.caption <= 0.0 {
            return Err(Error::Config("caption share must be positive".into()));
        }
        let sum = self.caption + self.mcqa + self.open_qa + self.creative;
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("task shares must sum to 1, got {sum}")));
        }
        for kind in [TaskKind::Mcqa, TaskKind::OpenQa, TaskKind::Creative] {
            let p = self.raw_selection(kind);
            if p > 1.0 + 1e-9 {
                return Err(Error::Config(format!(
                    "task share for {} is unreachable (selection probability {p:.3} > 1)",
                    kind.as_str()
                )));
            }
        }
        Ok(())
    }

    fn raw_selection(&self, kind: TaskKind) -> f64 {
        let share = match kind {
            TaskKind::Caption => return 1.0,
            TaskKind::Mcqa => self.mcqa,
            TaskKind::OpenQa => self.open_qa,
            TaskKind::Creative => self.creative,
        };
        let records_per_sample = 1.0 / self.caption;
        share * records_per_sample / RECORDS_PER_SELECTED_KIND
    }

    /// Per-sample probability of selecting a non-caption kind so that the
    /// expected record shares match the targets.
    pub fn selection_probability(&self, kind: TaskKind) -> f64 {
        self.raw_selection(kind).min(1.0)
    }
}

/// How many records of each non-caption kind one sample gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDraw {
    pub mcqa: usize,
    pub open_qa: usize,
    pub creative: usize,
}

impl TaskDraw {
    pub fn total_records(&self) -> usize {
        1 + self.mcqa + self.open_qa + self.creative
    }
}

/// Seeded per-sample draw of task counts. Deterministic in (seed,
/// sample_id), independent of processing order: the RNG stream is derived
/// from the pair, and both coins per kind are always consumed.
pub fn draw_task_plan(seed: u64, sample_id: &str, split: &TaskSplit) -> TaskDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, sample_id));
    let mut draw = |kind: TaskKind| -> usize {
        let selected = rng.random_bool(split.selection_probability(kind).clamp(0.0, 1.0));
        let third = rng.random_bool(0.5);
        if selected {
            2 + usize::from(third)
        } else {
            0
        }
    };
    TaskDraw {
        mcqa: draw(TaskKind::Mcqa),
        open_qa: draw(TaskKind::OpenQa),
        creative: draw(TaskKind::Creative),
    }
}

/// Material for one MCQA record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaTask {
    pub instruction: String,
    pub choices: Vec<String>,
    pub correct_index: u8,
    pub triplet: StructuredTriplet,
}

/// Material for one open-ended or creative record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeTask {
    pub instruction: String,
    pub triplet: StructuredTriplet,
}

/// Produces instruction and target material for the non-caption task kinds.
/// Backed by the generator in live runs and by deterministic stubs on desk
/// runs.
pub trait TaskContentSource: Send + Sync {
    fn mcqa(&self, sample_id: &str, caption: &StructuredTriplet, index: usize) -> Result<McqaTask>;
    fn open_qa(&self, sample_id: &str, caption: &StructuredTriplet, index: usize) -> Result<FreeTask>;
    fn creative(&self, sample_id: &str, caption: &StructuredTriplet, index: usize) -> Result<FreeTask>;
}

/// Expands one accepted caption triplet into its task records: one caption
/// record always, plus the seeded draw of MCQA, open QA, and creative
/// records. Deterministic given (seed, sample_id) and a deterministic
/// source.
pub fn expand_tasks(
    sample_id: &str,
    caption_triplet: &StructuredTriplet,
    source: &dyn TaskContentSource,
    seed: u64,
    split: &TaskSplit,
    semantic_mode: bool,
) -> Result<Vec<TaskRecord>> {
    let mut records = vec![TaskRecord {
        sample_id: sample_id.to_string(),
        kind: TaskKind::Caption,
        instruction: CAPTION_INSTRUCTION.to_string(),
        choices: None,
        correct_index: None,
        target: serialize_tagged(caption_triplet, semantic_mode),
    }];

    let plan = draw_task_plan(seed, sample_id, split);

    for index in 0..plan.mcqa {
        let task = source.mcqa(sample_id, caption_triplet, index)?;
        records.push(TaskRecord {
            sample_id: sample_id.to_string(),
            kind: TaskKind::Mcqa,
            instruction: task.instruction,
            choices: Some(task.choices),
            correct_index: Some(task.correct_index),
            target: serialize_tagged(&task.triplet, semantic_mode),
        });
    }
    for index in 0..plan.open_qa {
        let task = source.open_qa(sample_id, caption_triplet, index)?;
        records.push(TaskRecord {
            sample_id: sample_id.to_string(),
            kind: TaskKind::OpenQa,
            instruction: task.instruction,
            choices: None,
            correct_index: None,
            target: serialize_tagged(&task.triplet, semantic_mode),
        });
    }
    for index in 0..plan.creative {
        let task = source.creative(sample_id, caption_triplet, index)?;
        records.push(TaskRecord {
            sample_id: sample_id.to_string(),
            kind: TaskKind::Creative,
            instruction: task.instruction,
            choices: None,
            correct_index: None,
            target: serialize_tagged(&task.triplet, semantic_mode),
        });
    }

    for record in &records {
        record.validate()?;
    }
    Ok(records)
}

/// Task content produced by the generator backend: one structured reply per
/// record carrying the instruction fields next to the triplet.
pub struct GeneratorTaskSource<'a> {
    pub generator: &'a dyn GeneratorBackend,
    pub semantic_mode: bool,
}

impl GeneratorTaskSource<'_> {
    fn schema(&self, kind: TaskKind) -> SchemaId {
        match (kind, self.semantic_mode) {
            (TaskKind::Mcqa, false) => SchemaId::McqaTwoPhase,
            (TaskKind::Mcqa, true) => SchemaId::McqaThreePhase,
            (TaskKind::OpenQa, false) => SchemaId::OpenQaTwoPhase,
            (TaskKind::OpenQa, true) => SchemaId::OpenQaThreePhase,
            (TaskKind::Creative, false) => SchemaId::CreativeTwoPhase,
            (TaskKind::Creative, true) => SchemaId::CreativeThreePhase,
            (TaskKind::Caption, false) => SchemaId::TwoPhase,
            (TaskKind::Caption, true) => SchemaId::ThreePhase,
        }
    }

    fn prompt(&self, kind: TaskKind, sample_id: &str, caption: &StructuredTriplet, index: usize) -> String {
        let ask = match kind {
            TaskKind::Mcqa => {
                "write one multiple-choice question about the audio with four distinct answer options, \
                 and respond as a JSON object with keys instruction, choices (4 strings), correct_index (0-3), \
                 thinking, and answer"
            }
            TaskKind::OpenQa => {
                "write one open-ended question about the audio, and respond as a JSON object with keys \
                 instruction, thinking, and answer"
            }
            TaskKind::Creative => {
                "write one creative-writing instruction inspired by the audio, and respond as a JSON object \
                 with keys instruction, thinking, and answer"
            }
            TaskKind::Caption => "describe the audio, and respond as a JSON object with keys thinking and answer",
        };
        let semantic_note = if self.semantic_mode {
            " Include a semantic_elements object describing the sound scene."
        } else {
            ""
        };
        format!(
            "Based on the following audio caption, {ask}.{semantic_note}\n\nSample: {sample_id}\nVariant: {index}\nCaption: {answer}",
            answer = caption.answer
        )
    }

    fn generate_value(
        &self,
        kind: TaskKind,
        sample_id: &str,
        caption: &StructuredTriplet,
        index: usize,
    ) -> Result<serde_json::Value> {
        let raw = self
            .generator
            .generate(&self.prompt(kind, sample_id, caption, index), self.schema(kind))?;
        serde_json::from_str(&raw).map_err(|e| {
            Error::InvalidInput(format!("{sample_id}: task reply is not JSON: {e}"))
        })
    }

    /// Splits a task reply into its instruction fields and the triplet
    /// remainder, validating the triplet with relaxed (shape-only) bounds.
    fn triplet_of(&self, value: &serde_json::Value, keep: &[&str], sample_id: &str) -> Result<StructuredTriplet> {
        let object = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: task reply is not an object")))?;
        let mut triplet_part = serde_json::Map::new();
        for (k, v) in object {
            if !keep.contains(&k.as_str()) {
                triplet_part.insert(k.clone(), v.clone());
            }
        }
        validate_triplet_value(
            &serde_json::Value::Object(triplet_part),
            self.semantic_mode,
            &SynthesisBounds::relaxed(),
        )
        .map_err(|e| Error::InvalidInput(format!("{sample_id}: task triplet invalid: {e}")))
    }
}

impl TaskContentSource for GeneratorTaskSource<'_> {
    fn mcqa(&self, sample_id: &str, caption: &StructuredTriplet, index: usize) -> Result<McqaTask> {
        let value = self.generate_value(TaskKind::Mcqa, sample_id, caption, index)?;
        let instruction = value["instruction"]
            .as_str()
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: mcqa reply without instruction")))?
            .to_string();
        let choices: Vec<String> = value["choices"]
            .as_array()
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: mcqa reply without choices")))?
            .iter()
            .map(|c| c.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: mcqa choices must be strings")))?;
        let correct_index = value["correct_index"]
            .as_u64()
            .filter(|i| *i < 4)
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: mcqa correct_index out of range")))?
            as u8;
        let triplet = self.triplet_of(&value, &["instruction", "choices", "correct_index"], sample_id)?;
        Ok(McqaTask { instruction, choices, correct_index, triplet })
    }

    fn open_qa(&self, sample_id: &str, caption: &StructuredTriplet, index: usize) -> Result<FreeTask> {
        let value = self.generate_value(TaskKind::OpenQa, sample_id, caption, index)?;
        let instruction = value["instruction"]
            .as_str()
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: open_qa reply without instruction")))?
            .to_string();
        let triplet = self.triplet_of(&value, &["instruction"], sample_id)?;
        Ok(FreeTask { instruction, triplet })
    }

    fn creative(&self, sample_id: &str, caption: &StructuredTriplet, index: usize) -> Result<FreeTask> {
        let value = self.generate_value(TaskKind::Creative, sample_id, caption, index)?;
        let instruction = value["instruction"]
            .as_str()
            .ok_or_else(|| Error::InvalidInput(format!("{sample_id}: creative reply without instruction")))?
            .to_string();
        let triplet = self.triplet_of(&value, &["instruction"], sample_id)?;
        Ok(FreeTask { instruction, triplet })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{AnnotationBundle, AudioAnnotation, DedupedLabel, VisualAnnotation};
    use crate::mining::{extract_bracketed, SubtitleLine};

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn triplet_json(thinking_words: usize, answer_words: usize, semantic: Option<&str>) -> String {
        let mut obj = serde_json::json!({
            "thinking": words(thinking_words),
            "answer": words(answer_words),
        });
        if let Some(s) = semantic {
            obj["semantic_elements"] = serde_json::json!({ "agents_who": s });
        }
        obj.to_string()
    }

    #[test]
    fn validates_two_phase_triplet() {
        let t = validate_triplet(&triplet_json(60, 20, None), false).unwrap();
        assert_eq!(word_count(&t.thinking), 60);
        assert!(t.semantic.is_none());
    }

    #[test]
    fn validates_three_phase_triplet() {
        let t = validate_triplet(&triplet_json(60, 20, Some("a dog")), true).unwrap();
        assert_eq!(t.semantic.unwrap().agents_who.as_deref(), Some("a dog"));
    }

    #[test]
    fn rejects_by_category() {
        assert_eq!(validate_triplet("not json", false).unwrap_err().category(), "malformed-json");
        assert_eq!(validate_triplet("[1,2]", false).unwrap_err().category(), "malformed-json");
        assert_eq!(
            validate_triplet(r#"{"answer":"x"}"#, false).unwrap_err().category(),
            "missing-key"
        );
        assert_eq!(
            validate_triplet(&triplet_json(30, 20, None), false).unwrap_err().category(),
            "thinking-too-short"
        );
        assert_eq!(
            validate_triplet(&triplet_json(60, 55, None), false).unwrap_err().category(),
            "answer-too-long"
        );
        assert_eq!(
            validate_triplet(&triplet_json(60, 20, Some("x")), false).unwrap_err().category(),
            "unexpected-semantic"
        );
        assert_eq!(
            validate_triplet(&triplet_json(60, 20, None), true).unwrap_err().category(),
            "missing-key"
        );
        let empty_semantic = serde_json::json!({
            "thinking": words(60), "answer": words(10),
            "semantic_elements": {"agents_who": "  "}
        })
        .to_string();
        assert_eq!(
            validate_triplet(&empty_semantic, true).unwrap_err().category(),
            "empty-semantic"
        );
        let extra = serde_json::json!({
            "thinking": words(60), "answer": words(10), "bonus": 1
        })
        .to_string();
        assert_eq!(validate_triplet(&extra, false).unwrap_err().category(), "unexpected-key");
        let wrong = serde_json::json!({"thinking": 5, "answer": words(10)}).to_string();
        assert_eq!(validate_triplet(&wrong, false).unwrap_err().category(), "wrong-type");
    }

    #[test]
    fn answer_bound_is_strict() {
        // 49 words accepted, 50 rejected.
        assert!(validate_triplet(&triplet_json(60, 49, None), false).is_ok());
        assert_eq!(
            validate_triplet(&triplet_json(60, 50, None), false).unwrap_err().category(),
            "answer-too-long"
        );
        // 50-word thinking accepted, 49 rejected.
        assert!(validate_triplet(&triplet_json(50, 10, None), false).is_ok());
        assert!(validate_triplet(&triplet_json(49, 10, None), false).is_err());
    }

    #[test]
    fn rejects_embedded_tags() {
        let bad = serde_json::json!({
            "thinking": format!("{} <answer> sneaky", words(60)),
            "answer": "ok"
        })
        .to_string();
        assert_eq!(validate_triplet(&bad, false).unwrap_err().category(), "embedded-tag");
    }

    #[test]
    fn serialize_shapes() {
        let two = StructuredTriplet { thinking: "a b".into(), semantic: None, answer: "c".into() };
        assert_eq!(serialize_tagged(&two, false), "<think>a b</think>\n<answer>c</answer>");

        let mut sem = SemanticDescriptors::default();
        sem.set("agents_who", "a dog".into());
        sem.set("spatial_where", "a yard".into());
        let three = StructuredTriplet { thinking: "t".into(), semantic: Some(sem), answer: "c".into() };
        let s = serialize_tagged(&three, true);
        assert_eq!(
            s,
            "<think>t</think>\n<semantic_elements>\nagents_who: a dog\nspatial_where: a yard\n</semantic_elements>\n<answer>c</answer>"
        );
        // Two-phase serialization of the same triplet omits the section.
        assert_eq!(serialize_tagged(&three, false), "<think>t</think>\n<answer>c</answer>");
    }

    #[test]
    fn serialize_parse_round_trip() {
        let mut sem = SemanticDescriptors::default();
        sem.set("agents_who", "rain".into());
        sem.set("auditory_attributes", "soft, steady: almost hiss-like".into());
        let t = StructuredTriplet {
            thinking: "long reasoning\nwith a second line".into(),
            semantic: Some(sem),
            answer: "Rain falls steadily.".into(),
        };
        let back = StructuredTriplet::from_tagged(&serialize_tagged(&t, true), true).unwrap();
        assert_eq!(back, t);

        let two = StructuredTriplet { thinking: "x y z".into(), semantic: None, answer: "w".into() };
        let back = StructuredTriplet::from_tagged(&serialize_tagged(&two, false), false).unwrap();
        assert_eq!(back, two);
    }

    fn bundle(music: Option<&str>) -> AnnotationBundle {
        AnnotationBundle {
            sample_id: "abc_000001000_000005000".into(),
            audio: AudioAnnotation {
                general_caption: "a dog barks twice".into(),
                tags: vec![DedupedLabel { label: "bark".into(), score: 0.8, count: 2 }],
                event_classes: vec![DedupedLabel { label: "bark".into(), score: 0.8, count: 4 }],
                contextual_caption: "dog outside".into(),
                music_caption: music.map(String::from),
            },
            visual: VisualAnnotation {
                frame_captions: vec!["a dog in a yard".into()],
                detections: vec![crate::annotate::Detection { label: "dog".into(), score: 0.7, bbox: None }],
                scene_classes: vec![DedupedLabel { label: "yard".into(), score: 0.6, count: 4 }],
            },
            video_caption: "a dog plays".into(),
            per_second_events: std::collections::BTreeMap::from([
                (0, vec![crate::annotate::ScoredLabel::new("bark", 0.8).unwrap()]),
                (1, vec![crate::annotate::ScoredLabel::new("pant", 0.5).unwrap()]),
            ]),
        }
    }

    fn cc() -> CaptionCandidate {
        extract_bracketed(&SubtitleLine::new("abc", 1.0, 5.0, "(dog barking)").unwrap()).unwrap()
    }

    #[test]
    fn prompt_substitutes_fields() {
        let p = build_prompt(&bundle(None), &cc()).unwrap();
        assert!(p.contains("- Video ID: abc"));
        assert!(p.contains("- Time Segment: 1.0 to 5.0 seconds"));
        assert!(p.contains("- Original Closed Caption: (dog barking) (This is the most important"));
        assert!(p.contains("- Audio Caption: a dog barks twice"));
        assert!(p.contains("bark (0.80)"));
        assert!(p.contains("\"0\": {\"bark\": 0.80}, \"1\": {\"pant\": 0.50}"));
        assert!(p.contains("Scene Description: a dog in a yard"));
        assert!(p.contains("Detected Objects (COCO labels): dog (0.70)"));
        assert!(p.contains("Scene Classification (Places365): yard (0.60)"));
        assert!(!p.contains("Music Caption"));
        assert!(!p.contains("{audio_caption}"));
        assert!(!p.contains("{music_caption_section}"));
    }

    #[test]
    fn prompt_music_section_toggles() {
        let with = build_prompt(&bundle(Some("slow piano")), &cc()).unwrap();
        assert!(with.contains("- Music Caption: slow piano"));
        let without = build_prompt(&bundle(None), &cc()).unwrap();
        assert!(!without.contains("Music Caption"));
    }

    #[test]
    fn prompt_is_deterministic() {
        assert_eq!(
            build_prompt(&bundle(Some("slow piano")), &cc()).unwrap(),
            build_prompt(&bundle(Some("slow piano")), &cc()).unwrap()
        );
    }

    #[test]
    fn judge_verdict_parsing() {
        let v = parse_judge_verdict(r#"{"valid": true, "reason": ""}"#).unwrap();
        assert!(v.valid);
        let v = parse_judge_verdict("Sure! Here you go: {\"valid\": false, \"reason\": \"rule 2\"} hope that helps").unwrap();
        assert!(!v.valid);
        assert_eq!(v.reason, "rule 2");
        let v = parse_judge_verdict(r#"{"valid": true, "reason": "", "extra": 1}"#).unwrap();
        assert!(v.valid);
        assert!(parse_judge_verdict(r#"{"valid": false, "reason": "  "}"#).is_err());
        assert!(parse_judge_verdict("no json at all").is_err());
        let v = parse_judge_verdict("{\"notes\": 1} {\"valid\": true}").unwrap();
        assert!(v.valid);
    }

    #[test]
    fn balanced_object_respects_strings() {
        let text = r#"{"reason": "um } tricky", "valid": false} trailing"#;
        assert_eq!(
            balanced_object(text),
            Some(r#"{"reason": "um } tricky", "valid": false}"#)
        );
        assert_eq!(balanced_object("{unclosed"), None);
    }

    struct ScriptedGenerator {
        replies: std::sync::Mutex<Vec<String>>,
        calls: std::sync::atomic::AtomicU32,
    }

    impl ScriptedGenerator {
        fn new(replies: Vec<&str>) -> Self {
            ScriptedGenerator {
                replies: std::sync::Mutex::new(replies.into_iter().rev().map(String::from).collect()),
                calls: std::sync::atomic::AtomicU32::new(0),
            }
        }
    }

    impl GeneratorBackend for ScriptedGenerator {
        fn generate(&self, _prompt: &str, _schema: SchemaId) -> Result<String> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            self.replies
                .lock()
                .unwrap()
                .pop()
                .ok_or_else(|| Error::backend("generator", "script exhausted", false))
        }
    }

    struct ConstJudge(&'static str);

    impl JudgeBackend for ConstJudge {
        fn judge(&self, _prompt: &str) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn retry_accepts_first_valid() {
        let generator = ScriptedGenerator::new(vec![&triplet_json(60, 20, None)]);
        let judge = ConstJudge(r#"{"valid": true, "reason": ""}"#);
        let out = judge_and_retry(&generator, &judge, "p", 5, false, &SynthesisBounds::default());
        match out {
            SynthesisOutcome::Accepted { generator_calls, .. } => assert_eq!(generator_calls, 1),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn retry_schema_failure_then_success() {
        let bad = triplet_json(10, 20, None);
        let good = triplet_json(60, 20, None);
        let generator = ScriptedGenerator::new(vec![&bad, &good]);
        let judge = ConstJudge(r#"{"valid": true, "reason": ""}"#);
        let out = judge_and_retry(&generator, &judge, "p", 5, false, &SynthesisBounds::default());
        match out {
            SynthesisOutcome::Accepted { generator_calls, .. } => assert_eq!(generator_calls, 2),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn retry_exhausts_and_skips() {
        let good = triplet_json(60, 20, None);
        let generator = ScriptedGenerator::new(vec![&good, &good, &good, &good, &good, &good]);
        let judge = ConstJudge(r#"{"valid": false, "reason": "mentions predictions per second"}"#);
        let out = judge_and_retry(&generator, &judge, "p", 5, false, &SynthesisBounds::default());
        match out {
            SynthesisOutcome::Skipped { generator_calls, failures } => {
                assert_eq!(generator_calls, 5);
                assert_eq!(failures.len(), 5);
                assert_eq!(generator.calls.load(std::sync::atomic::Ordering::SeqCst), 5);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn backend_errors_consume_attempts() {
        let generator = ScriptedGenerator::new(vec![]);
        let judge = ConstJudge(r#"{"valid": true, "reason": ""}"#);
        let out = judge_and_retry(&generator, &judge, "p", 3, false, &SynthesisBounds::default());
        match out {
            SynthesisOutcome::Skipped { generator_calls, failures } => {
                assert_eq!(generator_calls, 3);
                assert!(failures.iter().all(|f| f.contains("generate:")));
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn split_defaults_hit_probabilities() {
        let split = TaskSplit::default();
        split.validate().unwrap();
        assert!((split.selection_probability(TaskKind::Mcqa) - 0.5).abs() < 1e-12);
        assert!((split.selection_probability(TaskKind::OpenQa) - 1.0).abs() < 1e-12);
        assert!((split.selection_probability(TaskKind::Creative) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn split_validation_rejects_bad_shares() {
        let bad = TaskSplit { caption: 0.0, mcqa: 0.5, open_qa: 0.45, creative: 0.05 };
        assert!(bad.validate().is_err());
        let bad = TaskSplit { caption: 0.2, mcqa: 0.25, open_qa: 0.5, creative: 0.1 };
        assert!(bad.validate().is_err());
        let unreachable = TaskSplit { caption: 0.05, mcqa: 0.9, open_qa: 0.04, creative: 0.01 };
        assert!(unreachable.validate().is_err());
    }

    #[test]
    fn draw_is_deterministic_and_bounded() {
        let split = TaskSplit::default();
        let a = draw_task_plan(7, "sample-1", &split);
        let b = draw_task_plan(7, "sample-1", &split);
        assert_eq!(a, b);
        assert_ne!(draw_task_plan(8, "sample-1", &split), a);
        for i in 0..200 {
            let d = draw_task_plan(7, &format!("s{i}"), &split);
            assert!(d.mcqa == 0 || (2..=3).contains(&d.mcqa));
            assert!((2..=3).contains(&d.open_qa));
            assert!(d.creative == 0 || (2..=3).contains(&d.creative));
            assert!(d.total_records() <= 10);
        }
    }

    struct FixedSource;

    impl TaskContentSource for FixedSource {
        fn mcqa(&self, _s: &str, caption: &StructuredTriplet, index: usize) -> Result<McqaTask> {
            Ok(McqaTask {
                instruction: format!("Which sound is present? (v{index})"),
                choices: vec!["a".into(), "b".into(), "c".into(), caption.answer.clone()],
                correct_index: 3,
                triplet: caption.clone(),
            })
        }

        fn open_qa(&self, _s: &str, caption: &StructuredTriplet, index: usize) -> Result<FreeTask> {
            Ok(FreeTask { instruction: format!("What happens? (v{index})"), triplet: caption.clone() })
        }

        fn creative(&self, _s: &str, caption: &StructuredTriplet, index: usize) -> Result<FreeTask> {
            Ok(FreeTask { instruction: format!("Write a story. (v{index})"), triplet: caption.clone() })
        }
    }

    #[test]
    fn expand_always_has_caption_first() {
        let t = StructuredTriplet { thinking: words(55), semantic: None, answer: "a dog barks".into() };
        let records = expand_tasks("sample-1", &t, &FixedSource, 7, &TaskSplit::default(), false).unwrap();
        assert_eq!(records[0].kind, TaskKind::Caption);
        assert_eq!(records[0].instruction, CAPTION_INSTRUCTION);
        assert!(records.len() >= 3);
        for r in &records {
            r.validate().unwrap();
        }
        let again = expand_tasks("sample-1", &t, &FixedSource, 7, &TaskSplit::default(), false).unwrap();
        assert_eq!(records, again);
    }

    #[test]
    fn task_record_validation() {
        let ok = TaskRecord {
            sample_id: "s".into(),
            kind: TaskKind::Mcqa,
            instruction: "q".into(),
            choices: Some(vec!["a".into(), "b".into(), "c".into(), "d".into()]),
            correct_index: Some(2),
            target: "<think>t</think>\n<answer>a</answer>".into(),
        };
        ok.validate().unwrap();

        let mut dup = ok.clone();
        dup.choices = Some(vec!["a".into(), "a".into(), "c".into(), "d".into()]);
        assert!(dup.validate().is_err());

        let mut short = ok.clone();
        short.choices = Some(vec!["a".into(), "b".into(), "c".into()]);
        assert!(short.validate().is_err());

        let mut bad_index = ok.clone();
        bad_index.correct_index = Some(4);
        assert!(bad_index.validate().is_err());

        let mut caption = ok;
        caption.kind = TaskKind::Caption;
        caption.choices = None;
        caption.correct_index = None;
        caption.instruction = "wrong".into();
        assert!(caption.validate().is_err());
        caption.instruction = CAPTION_INSTRUCTION.into();
        caption.validate().unwrap();
    }

    #[test]
    fn generator_task_source_parses_reply() {
        struct OneShot;
        impl GeneratorBackend for OneShot {
            fn generate(&self, _p: &str, schema: SchemaId) -> Result<String> {
                assert_eq!(schema, SchemaId::McqaTwoPhase);
                Ok(serde_json::json!({
                    "instruction": "Which sound?",
                    "choices": ["rain", "wind", "a dog barks", "thunder"],
                    "correct_index": 2,
                    "thinking": "short reasoning here",
                    "answer": "a dog barks"
                })
                .to_string())
            }
        }
        let source = GeneratorTaskSource { generator: &OneShot, semantic_mode: false };
        let caption = StructuredTriplet { thinking: words(55), semantic: None, answer: "a dog barks".into() };
        let task = source.mcqa("s", &caption, 0).unwrap();
        assert_eq!(task.correct_index, 2);
        assert_eq!(task.choices.len(), 4);
        assert_eq!(task.triplet.answer, "a dog barks");
    }
}
