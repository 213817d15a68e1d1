//! Multimodal annotation: fans one fetched segment out to the role-addressed
//! inference backends and folds the replies into an `AnnotationBundle`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{ClientRegistry, InferenceRequest, InferenceResponse, RetryPolicy, Role, WireLabel};
use crate::error::{Error, Result};
use crate::media::FramePlan;

/// A label with a confidence score in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: String,
    pub score: f64,
}

impl ScoredLabel {
    pub fn new(label: impl Into<String>, score: f64) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::InvalidInput("label must not be empty".into()));
        }
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(Error::InvalidInput(format!(
                "score for {label:?} outside [0, 1]: {score}"
            )));
        }
        Ok(ScoredLabel { label, score })
    }
}

/// A deduplicated label: mean score over `count` raw occurrences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupedLabel {
    pub label: String,
    pub score: f64,
    pub count: usize,
}

/// Merges duplicate labels by averaging their scores. Output is sorted by
/// descending score, ties broken lexicographically by label, so the result
/// is independent of input order.
pub fn dedup_average(labels: &[ScoredLabel]) -> Vec<DedupedLabel> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for l in labels {
        let entry = acc.entry(&l.label).or_insert((0.0, 0));
        entry.0 += l.score;
        entry.1 += 1;
    }
    let mut out: Vec<DedupedLabel> = acc
        .into_iter()
        .map(|(label, (sum, count))| DedupedLabel {
            label: label.to_string(),
            score: sum / count as f64,
            count,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
    out
}

/// Deduplicates, then keeps the `k` highest-scoring labels.
pub fn top_k(labels: &[ScoredLabel], k: usize) -> Vec<DedupedLabel> {
    let mut deduped = dedup_average(labels);
    deduped.truncate(k);
    deduped
}

/// One detected object, with an optional relative-coordinate bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AudioAnnotation {
    pub general_caption: String,
    /// Top tags after dedup, at most `top_k_tags` of them.
    pub tags: Vec<DedupedLabel>,
    /// Event classes pooled over all per-second calls.
    pub event_classes: Vec<DedupedLabel>,
    pub contextual_caption: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub music_caption: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisualAnnotation {
    pub frame_captions: Vec<String>,
    pub detections: Vec<Detection>,
    pub scene_classes: Vec<DedupedLabel>,
}

/// Everything the annotation stage learned about one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBundle {
    pub sample_id: String,
    pub audio: AudioAnnotation,
    pub visual: VisualAnnotation,
    pub video_caption: String,
    /// Raw per-second event labels, keyed by whole second from segment
    /// start.
    pub per_second_events: BTreeMap<u32, Vec<ScoredLabel>>,
}

pub const DEFAULT_DETECTION_CONFIDENCE: f64 = 0.3;
pub const DEFAULT_MUSIC_SCORE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_TOP_K_TAGS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSettings {
    /// Detections below this confidence are discarded.
    pub detection_confidence: f64,
    /// A deduplicated "music" tag at or above this score triggers the music
    /// caption call.
    pub music_score_threshold: f64,
    pub top_k_tags: usize,
}

impl Default for AnnotateSettings {
    fn default() -> Self {
        AnnotateSettings {
            detection_confidence: DEFAULT_DETECTION_CONFIDENCE,
            music_score_threshold: DEFAULT_MUSIC_SCORE_THRESHOLD,
            top_k_tags: DEFAULT_TOP_K_TAGS,
        }
    }
}

/// Media references for one sample entering annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMedia {
    pub sample_id: String,
    pub audio_ref: String,
    pub video_ref: String,
    pub duration_s: f64,
}

fn call(
    clients: &ClientRegistry,
    role: Role,
    request: InferenceRequest,
    retry: &RetryPolicy,
) -> Result<InferenceResponse> {
    let client = clients
        .get(role)
        .ok_or_else(|| Error::Config(format!("no backend registered for role {role}")))?;
    retry.run(|| client.infer(&request))
}

fn expect_text(response: InferenceResponse, role: Role) -> Result<String> {
    match response.text {
        Some(text) if !text.trim().is_empty() => Ok(text),
        _ => Err(Error::backend(role.as_str(), "backend returned no text", false)),
    }
}

fn expect_labels(response: InferenceResponse, role: Role) -> Result<Vec<WireLabel>> {
    let labels = response
        .labels
        .ok_or_else(|| Error::backend(role.as_str(), "backend returned no labels", false))?;
    for l in &labels {
        // Re-validate on the way in; wire data is untrusted.
        ScoredLabel::new(l.label.clone(), l.score)?;
    }
    Ok(labels)
}

fn scored(labels: &[WireLabel]) -> Vec<ScoredLabel> {
    labels
        .iter()
        .map(|l| ScoredLabel { label: l.label.clone(), score: l.score })
        .collect()
}

/// Deduplicates detections by label: mean score, occurrence count folded
/// away, first-seen bounding box kept.
fn dedup_detections(raw: &[WireLabel]) -> Vec<Detection> {
    let mut boxes: BTreeMap<&str, Option<[f64; 4]>> = BTreeMap::new();
    for l in raw {
        let entry = boxes.entry(&l.label).or_insert(l.bbox);
        if entry.is_none() {
            *entry = l.bbox;
        }
    }
    dedup_average(&scored(raw))
        .into_iter()
        .map(|d| Detection {
            bbox: boxes.get(d.label.as_str()).copied().flatten(),
            label: d.label,
            score: d.score,
        })
        .collect()
}

/// Seconds covered by a segment: one call per whole second, with a final
/// partial second rounded up, and at least one second for very short clips.
fn covered_seconds(duration_s: f64) -> u32 {
    (duration_s.ceil() as u32).max(1)
}

/// Annotates one segment. Audio roles are mandatory; visual and video roles
/// run over the non-black frames and are skipped entirely when every frame
/// is black. The music caption is requested only when the deduplicated tags
/// show a sufficiently confident music tag and a client is registered for
/// the role.
pub fn annotate_segment(
    media: &SegmentMedia,
    frames: &FramePlan,
    clients: &ClientRegistry,
    settings: &AnnotateSettings,
    retry: &RetryPolicy,
) -> Result<AnnotationBundle> {
    let general_caption = expect_text(
        call(clients, Role::AudioCaption, InferenceRequest::for_media(Role::AudioCaption, &media.audio_ref), retry)?,
        Role::AudioCaption,
    )?;

    let tag_labels = expect_labels(
        call(clients, Role::AudioTags, InferenceRequest::for_media(Role::AudioTags, &media.audio_ref), retry)?,
        Role::AudioTags,
    )?;
    let deduped_tags = dedup_average(&scored(&tag_labels));
    let tags: Vec<DedupedLabel> = deduped_tags.iter().take(settings.top_k_tags).cloned().collect();

    let mut per_second_events = BTreeMap::new();
    let mut pooled_events = Vec::new();
    for second in 0..covered_seconds(media.duration_s) {
        let request = InferenceRequest::for_media(Role::AudioEvents, &media.audio_ref)
            .with_prompt(format!("second={second}"));
        let labels = expect_labels(call(clients, Role::AudioEvents, request, retry)?, Role::AudioEvents)?;
        let labels = scored(&labels);
        pooled_events.extend(labels.iter().cloned());
        per_second_events.insert(second, labels);
    }
    let event_classes = dedup_average(&pooled_events);

    let contextual_caption = expect_text(
        call(clients, Role::AudioContext, InferenceRequest::for_media(Role::AudioContext, &media.audio_ref), retry)?,
        Role::AudioContext,
    )?;

    let music_gate = deduped_tags
        .iter()
        .any(|t| t.label.to_ascii_lowercase().contains("music") && t.score >= settings.music_score_threshold);
    let music_caption = if music_gate && clients.has(Role::MusicCaption) {
        Some(expect_text(
            call(clients, Role::MusicCaption, InferenceRequest::for_media(Role::MusicCaption, &media.audio_ref), retry)?,
            Role::MusicCaption,
        )?)
    } else {
        None
    };

    let image_frames = frames.non_black_image();
    let mut visual = VisualAnnotation::default();
    if !image_frames.is_empty() {
        let mut captions = Vec::new();
        let mut object_labels: Vec<WireLabel> = Vec::new();
        let mut scene_labels: Vec<ScoredLabel> = Vec::new();
        for frame in &image_frames {
            let at = format!("t={:.3}", frame.timestamp_s);

            let caption = expect_text(
                call(
                    clients,
                    Role::ImageCaption,
                    InferenceRequest::for_media(Role::ImageCaption, &media.video_ref).with_prompt(at.clone()),
                    retry,
                )?,
                Role::ImageCaption,
            )?;
            if !captions.contains(&caption) {
                captions.push(caption);
            }

            for role in [Role::ObjectDetect, Role::ImageClassify] {
                let labels = expect_labels(
                    call(
                        clients,
                        role,
                        InferenceRequest::for_media(role, &media.video_ref).with_prompt(at.clone()),
                        retry,
                    )?,
                    role,
                )?;
                object_labels.extend(
                    labels
                        .into_iter()
                        .filter(|l| l.score >= settings.detection_confidence),
                );
            }

            let scenes = expect_labels(
                call(
                    clients,
                    Role::SceneClassify,
                    InferenceRequest::for_media(Role::SceneClassify, &media.video_ref).with_prompt(at),
                    retry,
                )?,
                Role::SceneClassify,
            )?;
            scene_labels.extend(scored(&scenes));
        }
        visual = VisualAnnotation {
            frame_captions: captions,
            detections: dedup_detections(&object_labels),
            scene_classes: dedup_average(&scene_labels),
        };
    }

    let video_frames = frames.non_black_video();
    let video_caption = if video_frames.is_empty() {
        String::new()
    } else {
        expect_text(
            call(
                clients,
                Role::VideoCaption,
                InferenceRequest::for_media(Role::VideoCaption, &media.video_ref)
                    .with_prompt(format!("duration={:.3} frames={}", media.duration_s, video_frames.len())),
                retry,
            )?,
            Role::VideoCaption,
        )?
    };

    Ok(AnnotationBundle {
        sample_id: media.sample_id.clone(),
        audio: AudioAnnotation {
            general_caption,
            tags,
            event_classes,
            contextual_caption,
            music_caption,
        },
        visual,
        video_caption,
        per_second_events,
    })
}
