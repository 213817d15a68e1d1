//! Backend abstractions: the traits the pipeline calls, the wire types they
//! exchange, and the retry policy wrapped around transient failures.
//!
//! Every model dependency sits behind one of these traits. The `http`
//! submodule speaks the JSON-over-POST wire contracts; the `stub` submodule
//! provides deterministic in-process stand-ins for offline desk runs.

pub mod http;
pub mod stub;

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::mining::CaptionCandidate;

/// Annotation backend roles. The names are part of the wire contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AudioCaption,
    AudioTags,
    AudioEvents,
    AudioContext,
    MusicCaption,
    ImageCaption,
    ImageClassify,
    ObjectDetect,
    SceneClassify,
    VideoCaption,
}

pub const ALL_ROLES: [Role; 10] = [
    Role::AudioCaption,
    Role::AudioTags,
    Role::AudioEvents,
    Role::AudioContext,
    Role::MusicCaption,
    Role::ImageCaption,
    Role::ImageClassify,
    Role::ObjectDetect,
    Role::SceneClassify,
    Role::VideoCaption,
];

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::AudioCaption => "audio_caption",
            Role::AudioTags => "audio_tags",
            Role::AudioEvents => "audio_events",
            Role::AudioContext => "audio_context",
            Role::MusicCaption => "music_caption",
            Role::ImageCaption => "image_caption",
            Role::ImageClassify => "image_classify",
            Role::ObjectDetect => "object_detect",
            Role::SceneClassify => "scene_classify",
            Role::VideoCaption => "video_caption",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_ROLES
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown backend role {s:?}")))
    }
}

/// Request body of one inference call. Media travels by reference or inline;
/// some roles add a free-form prompt (frame timestamps, event seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub media_ref: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub media_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl InferenceRequest {
    pub fn for_media(role: Role, media_ref: impl Into<String>) -> Self {
        InferenceRequest {
            role,
            media_ref: Some(media_ref.into()),
            media_b64: None,
            prompt: None,
        }
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = Some(prompt.into());
        self
    }
}

/// One scored label on the wire. Detection roles may attach a bounding box
/// as `[x1, y1, x2, y2]` in relative coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireLabel {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box", skip_serializing_if = "Option::is_none", default)]
    pub bbox: Option<[f64; 4]>,
}

/// Response body of one inference call: caption roles return `text`,
/// classification roles return `labels`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<WireLabel>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Audio,
    Text,
}

/// Output schema selector for the generator backend. The base pair covers
/// caption synthesis; the task variants ask for the same triplet plus the
/// task instruction fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    TwoPhase,
    ThreePhase,
    McqaTwoPhase,
    McqaThreePhase,
    OpenQaTwoPhase,
    OpenQaThreePhase,
    CreativeTwoPhase,
    CreativeThreePhase,
}

impl SchemaId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::TwoPhase => "two_phase",
            SchemaId::ThreePhase => "three_phase",
            SchemaId::McqaTwoPhase => "mcqa_two_phase",
            SchemaId::McqaThreePhase => "mcqa_three_phase",
            SchemaId::OpenQaTwoPhase => "open_qa_two_phase",
            SchemaId::OpenQaThreePhase => "open_qa_three_phase",
            SchemaId::CreativeTwoPhase => "creative_two_phase",
            SchemaId::CreativeThreePhase => "creative_three_phase",
        }
    }

    /// Whether this schema carries a semantic descriptor section.
    pub fn three_phase(self) -> bool {
        matches!(
            self,
            SchemaId::ThreePhase
                | SchemaId::McqaThreePhase
                | SchemaId::OpenQaThreePhase
                | SchemaId::CreativeThreePhase
        )
    }
}

/// Learned binary classifier over caption candidates.
pub trait ClassifierBackend: Send + Sync {
    fn classify(&self, candidate: &CaptionCandidate) -> Result<bool>;
}

/// Free-form judge: takes a prompt, returns the judge's reply text.
pub trait JudgeBackend: Send + Sync {
    fn judge(&self, prompt: &str) -> Result<String>;
}

/// Role-addressed media annotator.
pub trait InferenceBackend: Send + Sync {
    fn infer(&self, request: &InferenceRequest) -> Result<InferenceResponse>;
}

/// Embedding provider for audio references and text payloads.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, kind: EmbeddingKind, payload: &str) -> Result<EmbeddingVector>;
}

/// Structured-output generator.
pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, prompt: &str, schema: SchemaId) -> Result<String>;
}

/// Per-role inference clients. Roles without a registered client are treated
/// as disabled; mandatory roles are checked by the annotation layer.
#[derive(Default)]
pub struct ClientRegistry {
    clients: HashMap<Role, Box<dyn InferenceBackend>>,
}

impl ClientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(mut self, role: Role, backend: Box<dyn InferenceBackend>) -> Self {
        self.clients.insert(role, backend);
        self
    }

    pub fn get(&self, role: Role) -> Option<&dyn InferenceBackend> {
        self.clients.get(&role).map(|b| b.as_ref())
    }

    pub fn has(&self, role: Role) -> bool {
        self.clients.contains_key(&role)
    }
}

impl fmt::Debug for ClientRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut roles: Vec<&str> = self.clients.keys().map(|r| r.as_str()).collect();
        roles.sort_unstable();
        f.debug_struct("ClientRegistry").field("roles", &roles).finish()
    }
}

/// Bounded retry with exponential backoff for transient backend failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

pub const DEFAULT_RETRY_ATTEMPTS: u32 = 3;

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: DEFAULT_RETRY_ATTEMPTS,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn new(attempts: u32, base_delay: Duration) -> Self {
        RetryPolicy { attempts: attempts.max(1), base_delay }
    }

    /// Policy without sleeps, for tests and stub-backed runs.
    pub fn no_delay(attempts: u32) -> Self {
        Self::new(attempts, Duration::ZERO)
    }

    /// Sleeps for the backoff delay after the given 1-based attempt.
    pub fn pause(&self, attempt: u32) {
        if self.base_delay > Duration::ZERO {
            let factor = 1u32 << attempt.saturating_sub(1).min(16);
            std::thread::sleep(self.base_delay.saturating_mul(factor));
        }
    }

    /// Runs `op`, retrying retryable errors up to the attempt budget.
    /// Non-retryable errors propagate immediately.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = None;
        for attempt in 1..=self.attempts.max(1) {
            match op() {
                Ok(value) => return Ok(value),
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    last = Some(e);
                    self.pause(attempt);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::backend("retry", "no attempts made", false)))
    }
}
