//! Deterministic in-process backends for offline desk runs.
//!
//! Stub media files carry the caption content embedded after a marker, so
//! every stub derives its reply purely from that content (never from
//! absolute paths or wall-clock state) and a full pipeline run produces
//! byte-identical output for the same input and seed.
//!
//! A few content markers steer samples into specific failure paths:
//! "offaudio" in the media basename makes the audio embedding an outlier,
//! "offtext" in the content makes the derived caption a text outlier,
//! "mismatchcc" makes the caption disagree with its closed caption, and
//! "flakyjson" makes the generator's first reply malformed.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use crate::backend::{
    EmbeddingBackend, EmbeddingKind, GeneratorBackend, InferenceBackend, InferenceRequest,
    InferenceResponse, JudgeBackend, Role, SchemaId, WireLabel,
};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::media::{
    plan_image_frames, plan_video_frames, FrameProbe, ProbedFrame, AUDIO_TARGET_BIT_DEPTH,
    AUDIO_TARGET_CHANNELS, AUDIO_TARGET_SAMPLE_RATE_HZ,
};
use crate::mining::RuleClassifier;
use crate::util::fnv1a;

pub const STUB_TEXT_DIM: usize = 128;
pub const STUB_AUDIO_DIM: usize = 16;

/// Byte marker separating container framing from the embedded content in
/// stub media files.
const CONTENT_MARKER: &[u8] = b"AFTX";

const OUTLIER_TEXT_MARKER: &str = "offtext";
const OUTLIER_AUDIO_MARKER: &str = "offaudio";
const MISMATCH_MARKER: &str = "mismatchcc";
const FLAKY_MARKER: &str = "flakyjson";
const DARK_VIDEO_MARKER: &str = "darkvid";
const DIM_VIDEO_MARKER: &str = "dimvid";

/// Uniform value in [0, 1) derived from a string key.
fn unit(key: &str) -> f64 {
    (fnv1a(key.as_bytes()) >> 11) as f64 / (1u64 << 53) as f64
}

/// Lowercased alphanumeric tokens, the shared vocabulary unit of the stubs.
fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Writes a minimal mono 16-bit WAV whose data chunk embeds the content.
pub fn write_stub_wav(path: &Path, content: &str) -> Result<()> {
    let data_len = (CONTENT_MARKER.len() + content.len()) as u32;
    let byte_rate =
        AUDIO_TARGET_SAMPLE_RATE_HZ * u32::from(AUDIO_TARGET_CHANNELS) * u32::from(AUDIO_TARGET_BIT_DEPTH) / 8;
    let block_align = AUDIO_TARGET_CHANNELS * AUDIO_TARGET_BIT_DEPTH / 8;

    let mut bytes = Vec::with_capacity(44 + data_len as usize);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.extend_from_slice(&AUDIO_TARGET_CHANNELS.to_le_bytes());
    bytes.extend_from_slice(&AUDIO_TARGET_SAMPLE_RATE_HZ.to_le_bytes());
    bytes.extend_from_slice(&byte_rate.to_le_bytes());
    bytes.extend_from_slice(&block_align.to_le_bytes());
    bytes.extend_from_slice(&AUDIO_TARGET_BIT_DEPTH.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    bytes.extend_from_slice(CONTENT_MARKER);
    bytes.extend_from_slice(content.as_bytes());

    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Writes a minimal MP4 (ftyp box plus a free box embedding the content).
pub fn write_stub_mp4(path: &Path, content: &str) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&20u32.to_be_bytes());
    bytes.extend_from_slice(b"ftypisom");
    bytes.extend_from_slice(&0u32.to_be_bytes());
    bytes.extend_from_slice(b"isom");

    let payload_len = (8 + CONTENT_MARKER.len() + content.len()) as u32;
    bytes.extend_from_slice(&payload_len.to_be_bytes());
    bytes.extend_from_slice(b"free");
    bytes.extend_from_slice(CONTENT_MARKER);
    bytes.extend_from_slice(content.as_bytes());

    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Recovers the content embedded by the stub media writers.
pub fn read_stub_content(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let start = bytes
        .windows(CONTENT_MARKER.len())
        .position(|w| w == CONTENT_MARKER)
        .ok_or_else(|| {
            Error::InvalidInput(format!("{}: no stub content marker", path.display()))
        })?;
    String::from_utf8(bytes[start + CONTENT_MARKER.len()..].to_vec())
        .map_err(|e| Error::InvalidInput(format!("{}: stub content not UTF-8: {e}", path.display())))
}

/// Frame intensities for a stubbed fetch: bright frames by default, all
/// frames black for "darkvid" identifiers, and alternating black frames for
/// "dimvid" identifiers.
pub fn stub_frame_probe(video_id: &str, duration_s: f64) -> Result<FrameProbe> {
    let intensity = |index: usize| -> f64 {
        if video_id.contains(DARK_VIDEO_MARKER) {
            2.0
        } else if video_id.contains(DIM_VIDEO_MARKER) && index % 2 == 0 {
            2.0
        } else {
            120.0
        }
    };
    let probe = |timestamps: Vec<f64>| -> Vec<ProbedFrame> {
        timestamps
            .into_iter()
            .enumerate()
            .map(|(i, timestamp_s)| ProbedFrame { timestamp_s, mean_intensity: intensity(i) })
            .collect()
    };
    Ok(FrameProbe {
        image: probe(plan_image_frames(duration_s)?),
        video: probe(plan_video_frames(duration_s)?),
    })
}

/// Mining judge stand-in: applies the rule lexicon to the candidate line
/// appended at the end of the prompt and answers yes or no.
#[derive(Debug)]
pub struct StubLexiconJudge {
    classifier: RuleClassifier,
}

impl StubLexiconJudge {
    pub fn new() -> Self {
        StubLexiconJudge { classifier: RuleClassifier::with_default_lexicon() }
    }
}

impl Default for StubLexiconJudge {
    fn default() -> Self {
        Self::new()
    }
}

impl JudgeBackend for StubLexiconJudge {
    fn judge(&self, prompt: &str) -> Result<String> {
        let line = prompt
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("")
            .trim();
        let inner = strip_bracket_pair(line);
        Ok(if self.classifier.matches(inner) { "yes".into() } else { "no".into() })
    }
}

fn strip_bracket_pair(line: &str) -> &str {
    let mut chars = line.chars();
    match (chars.next(), chars.next_back()) {
        (Some('('), Some(')')) | (Some('['), Some(']')) | (Some('{'), Some('}')) => {
            line[1..line.len() - 1].trim()
        }
        _ => line,
    }
}

/// Bag-of-words text embeddings and clustered audio embeddings.
///
/// Text vectors hash tokens into a fixed dimension, so captions sharing
/// vocabulary are similar. Audio vectors depend only on the media file's
/// basename and sit in one tight cluster, except basenames carrying the
/// outlier marker, which point the opposite way.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubEmbedding;

impl EmbeddingBackend for StubEmbedding {
    fn embed(&self, kind: EmbeddingKind, payload: &str) -> Result<EmbeddingVector> {
        match kind {
            EmbeddingKind::Text => {
                let mut values = vec![0.0; STUB_TEXT_DIM];
                for token in tokens(payload) {
                    values[(fnv1a(token.as_bytes()) as usize) % STUB_TEXT_DIM] += 1.0;
                }
                EmbeddingVector::new(values)
            }
            EmbeddingKind::Audio => {
                let basename = Path::new(payload)
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| payload.to_string());
                let sign = if basename.contains(OUTLIER_AUDIO_MARKER) { -1.0 } else { 1.0 };
                let values = (0..STUB_AUDIO_DIM)
                    .map(|i| sign * (1.0 + 0.2 * (unit(&format!("{basename}|{i}")) - 0.5)))
                    .collect();
                EmbeddingVector::new(values)
            }
        }
    }
}

const PLACES: [&str; 8] =
    ["yard", "street", "kitchen", "park", "studio", "workshop", "stadium", "forest"];

const MUSIC_WORDS: [&str; 8] =
    ["music", "piano", "guitar", "singing", "melody", "orchestra", "drum", "drums"];

/// Role-addressed annotator deriving every reply from the content embedded
/// in the referenced media file.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubInference;

impl StubInference {
    fn content_of(request: &InferenceRequest) -> Result<String> {
        let media_ref = request
            .media_ref
            .as_deref()
            .ok_or_else(|| Error::backend("stub-inference", "request has no media_ref", false))?;
        read_stub_content(Path::new(media_ref))
    }

    fn caption_for(content: &str) -> String {
        if content.contains(OUTLIER_TEXT_MARKER) {
            "zxqvu wiblo kresh muntz".into()
        } else if content.contains(MISMATCH_MARKER) {
            "heard clearly nothing else whatsoever".into()
        } else {
            format!("{content} heard clearly")
        }
    }

    fn words_or_sound(content: &str) -> Vec<String> {
        let words = tokens(content);
        if words.is_empty() {
            vec!["sound".into()]
        } else {
            words
        }
    }
}

fn text_reply(text: String) -> InferenceResponse {
    InferenceResponse { text: Some(text), labels: None }
}

fn label_reply(labels: Vec<WireLabel>) -> InferenceResponse {
    InferenceResponse { text: None, labels: Some(labels) }
}

fn plain(label: &str, score: f64) -> WireLabel {
    WireLabel { label: label.to_string(), score, bbox: None }
}

impl InferenceBackend for StubInference {
    fn infer(&self, request: &InferenceRequest) -> Result<InferenceResponse> {
        let content = Self::content_of(request)?;
        let words = Self::words_or_sound(&content);

        Ok(match request.role {
            Role::AudioCaption => text_reply(Self::caption_for(&content)),
            Role::AudioTags => {
                let mut labels: Vec<WireLabel> = words
                    .iter()
                    .map(|w| plain(w, 0.5 + 0.4 * unit(&format!("tag|{w}"))))
                    .collect();
                // A repeated first word exercises dedup averaging downstream.
                let first_score = labels[0].score;
                labels.push(plain(&words[0], first_score * 0.75));
                if words.iter().any(|w| MUSIC_WORDS.contains(&w.as_str())) {
                    labels.push(plain("music", 0.6));
                }
                label_reply(labels)
            }
            Role::AudioEvents => {
                let second: usize = request
                    .prompt
                    .as_deref()
                    .and_then(|p| p.strip_prefix("second="))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| {
                        Error::backend("stub-inference", "audio_events call without second", false)
                    })?;
                let labels = (0..words.len().min(3))
                    .map(|i| {
                        let w = &words[(second + i) % words.len()];
                        plain(w, 0.4 + 0.2 * unit(&format!("event|{w}|{}", second % 2)))
                    })
                    .collect();
                label_reply(labels)
            }
            Role::AudioContext => {
                let lead = words.iter().take(2).cloned().collect::<Vec<_>>().join(" ");
                text_reply(format!("{lead} nearby"))
            }
            Role::MusicCaption => text_reply(format!("gentle piano under {}", words[0])),
            Role::ImageCaption => text_reply(format!("a scene of {content}")),
            Role::ObjectDetect => label_reply(vec![
                WireLabel {
                    label: words[0].clone(),
                    score: 0.72,
                    bbox: Some([0.1, 0.2, 0.6, 0.8]),
                },
                plain("person", 0.25),
            ]),
            Role::ImageClassify => label_reply(vec![plain("indoors", 0.45), plain("blurry", 0.12)]),
            Role::SceneClassify => {
                let h = fnv1a(content.as_bytes()) as usize;
                label_reply(vec![
                    plain(PLACES[h % PLACES.len()], 0.6),
                    plain(PLACES[(h + 3) % PLACES.len()], 0.5),
                ])
            }
            Role::VideoCaption => text_reply(format!("{content} continuing steadily")),
        })
    }
}

const CC_LINE_PREFIX: &str = "Original Closed Caption: ";
const CC_LINE_SUFFIX: &str = " (This is the most important";
const AUDIO_CAPTION_PREFIX: &str = "- Audio Caption: ";
const TASK_PROMPT_PREFIX: &str = "Based on the following audio caption";
const TASK_CAPTION_PREFIX: &str = "\nCaption: ";
const TASK_SAMPLE_PREFIX: &str = "\nSample: ";
const TASK_VARIANT_PREFIX: &str = "\nVariant: ";

const DISTRACTOR_POOL: [&str; 6] = [
    "rain patters on a roof",
    "a crowd applauds loudly",
    "an engine idles nearby",
    "glass shatters suddenly",
    "footsteps echo in a hall",
    "wind whistles through the trees",
];

fn between<'a>(text: &'a str, prefix: &str, suffix: &str) -> Option<&'a str> {
    let start = text.find(prefix)? + prefix.len();
    let end = text[start..].find(suffix)? + start;
    Some(&text[start..end])
}

fn line_after<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let start = text.find(prefix)? + prefix.len();
    Some(text[start..].lines().next().unwrap_or("").trim())
}

/// Structured-output generator stand-in. Caption prompts are answered with a
/// triplet that echoes the closed-caption content; task prompts are answered
/// with the instruction fields their schema asks for. Content carrying the
/// flaky marker gets one malformed reply before behaving.
#[derive(Debug, Default)]
pub struct StubGenerator {
    calls: Mutex<HashMap<u64, u32>>,
}

impl StubGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    fn semantic_value(content: &str) -> serde_json::Value {
        let words = StubInference::words_or_sound(content);
        serde_json::json!({
            "agents_who": words[0],
            "sources_what": content,
            "auditory_attributes": "clear and steady",
        })
    }

    fn caption_reply(&self, prompt: &str, schema: SchemaId) -> Result<String> {
        let content = between(prompt, CC_LINE_PREFIX, CC_LINE_SUFFIX)
            .map(strip_bracket_pair)
            .ok_or_else(|| {
                Error::backend("stub-generator", "prompt has no closed caption line", false)
            })?;
        let audio_caption = line_after(prompt, AUDIO_CAPTION_PREFIX).unwrap_or("a sound");

        if content.contains(FLAKY_MARKER) {
            let mut calls = self.calls.lock().expect("stub generator lock");
            let count = calls.entry(fnv1a(prompt.as_bytes())).or_insert(0);
            *count += 1;
            if *count == 1 {
                return Ok("oops, this reply is not structured at all".into());
            }
        }

        let thinking = format!(
            "Hmm, let me listen carefully from the start. The first thing that stands out is \
             {content}, and it keeps my attention as the clip unfolds. I can also make out \
             {audio_caption}. Okay, thinking about the space itself, the acoustics feel close \
             and ordinary, with no sudden changes, so I will describe the scene plainly and in \
             order."
        );
        let answer = format!("{content} in the recording");

        let mut reply = serde_json::json!({ "thinking": thinking, "answer": answer });
        if schema.three_phase() {
            reply["semantic_elements"] = Self::semantic_value(content);
        }
        Ok(reply.to_string())
    }

    fn task_reply(&self, prompt: &str, schema: SchemaId) -> Result<String> {
        let caption = line_after(prompt, TASK_CAPTION_PREFIX).unwrap_or("a sound");
        let sample = line_after(prompt, TASK_SAMPLE_PREFIX).unwrap_or("");
        let variant = line_after(prompt, TASK_VARIANT_PREFIX).unwrap_or("0");
        let h = fnv1a(format!("{sample}|{variant}|{}", schema.as_str()).as_bytes()) as usize;

        let thinking = format!(
            "Reasoning about the caption, I focus on {caption} and how its sounds would come \
             across to a listener."
        );
        let mut reply = match schema {
            SchemaId::McqaTwoPhase | SchemaId::McqaThreePhase => {
                let start = h % DISTRACTOR_POOL.len();
                let mut choices: Vec<String> = (0..3)
                    .map(|i| DISTRACTOR_POOL[(start + i) % DISTRACTOR_POOL.len()].to_string())
                    .collect();
                let correct_index = h % 4;
                choices.insert(correct_index, caption.to_string());
                serde_json::json!({
                    "instruction": "Which of the following best matches the audio?",
                    "choices": choices,
                    "correct_index": correct_index,
                    "thinking": thinking,
                    "answer": caption,
                })
            }
            SchemaId::OpenQaTwoPhase | SchemaId::OpenQaThreePhase => serde_json::json!({
                "instruction": "What can be heard in this clip?",
                "thinking": thinking,
                "answer": format!("You can hear {caption}."),
            }),
            SchemaId::CreativeTwoPhase | SchemaId::CreativeThreePhase => serde_json::json!({
                "instruction": "Write a short scene inspired by this audio.",
                "thinking": thinking,
                "answer": format!("The room goes quiet until {caption} fills the air."),
            }),
            SchemaId::TwoPhase | SchemaId::ThreePhase => serde_json::json!({
                "thinking": thinking,
                "answer": caption,
            }),
        };
        if schema.three_phase() {
            reply["semantic_elements"] = Self::semantic_value(caption);
        }
        Ok(reply.to_string())
    }
}

impl GeneratorBackend for StubGenerator {
    fn generate(&self, prompt: &str, schema: SchemaId) -> Result<String> {
        if prompt.starts_with(TASK_PROMPT_PREFIX) {
            self.task_reply(prompt, schema)
        } else {
            self.caption_reply(prompt, schema)
        }
    }
}

const OUTPUT_START: &str = "--- Generated Output Start ---\n";
const OUTPUT_END: &str = "\n--- Generated Output End ---";

/// Synthesis judge stand-in: rejects outputs whose text leaks per-second
/// prediction phrasing, and wraps some verdicts in prose to exercise
/// verdict extraction.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubSynthJudge;

impl JudgeBackend for StubSynthJudge {
    fn judge(&self, prompt: &str) -> Result<String> {
        let output = between(prompt, OUTPUT_START, OUTPUT_END).ok_or_else(|| {
            Error::backend("stub-judge", "prompt has no generated output block", false)
        })?;
        let lowered = output.to_ascii_lowercase();
        let verdict = if lowered.contains("predictions per second") {
            serde_json::json!({
                "valid": false,
                "reason": "the reasoning leaks per-second prediction phrasing",
            })
        } else {
            serde_json::json!({ "valid": true, "reason": "" })
        };
        let verdict = verdict.to_string();
        Ok(if fnv1a(output.as_bytes()) % 3 == 0 {
            format!("Sure, here is my verdict: {verdict} Let me know if you need more.")
        } else {
            verdict
        })
    }
}
