//! Media acquisition planning: segment targets, download and transcode
//! command construction, frame sampling, black-frame detection, and media
//! validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::sample_key;
use crate::util::fmt_seconds as seconds_arg;

pub const VIDEO_TARGET_HEIGHT: u32 = 360;
pub const VIDEO_TARGET_FPS: u32 = 2;
pub const AUDIO_TARGET_SAMPLE_RATE_HZ: u32 = 32_000;
pub const AUDIO_TARGET_BIT_DEPTH: u16 = 16;
pub const AUDIO_TARGET_CHANNELS: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoTarget {
    pub height: u32,
    pub fps: u32,
    pub container: String,
}

impl Default for VideoTarget {
    fn default() -> Self {
        VideoTarget {
            height: VIDEO_TARGET_HEIGHT,
            fps: VIDEO_TARGET_FPS,
            container: "mp4".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioTarget {
    pub sample_rate_hz: u32,
    pub bit_depth: u16,
    pub channels: u16,
    pub container: String,
}

impl Default for AudioTarget {
    fn default() -> Self {
        AudioTarget {
            sample_rate_hz: AUDIO_TARGET_SAMPLE_RATE_HZ,
            bit_depth: AUDIO_TARGET_BIT_DEPTH,
            channels: AUDIO_TARGET_CHANNELS,
            container: "wav".into(),
        }
    }
}

/// One segment to acquire, with the fixed output targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaSegmentSpec {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub video: VideoTarget,
    pub audio: AudioTarget,
}

impl MediaSegmentSpec {
    pub fn new(video_id: impl Into<String>, start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(Error::InvalidInput(format!(
                "invalid segment bounds {start_s} -> {end_s}"
            )));
        }
        Ok(MediaSegmentSpec {
            video_id: video_id.into(),
            start_s,
            end_s,
            video: VideoTarget::default(),
            audio: AudioTarget::default(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn sample_key(&self) -> String {
        sample_key(&self.video_id, self.start_s, self.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownloaderConfig {
    pub program: String,
    pub extra_args: Vec<String>,
}

impl Default for DownloaderConfig {
    fn default() -> Self {
        DownloaderConfig { program: "yt-dlp".into(), extra_args: Vec::new() }
    }
}

/// Argument vector for downloading one segment. The section expression
/// always precedes the video identifier; the output path is passed through
/// `-o`.
pub fn build_download_command(
    spec: &MediaSegmentSpec,
    config: &DownloaderConfig,
    output: &Path,
) -> Vec<String> {
    let mut argv = vec![config.program.clone()];
    argv.extend(config.extra_args.iter().cloned());
    argv.push("--download-sections".into());
    argv.push(format!("*{}-{}", seconds_arg(spec.start_s), seconds_arg(spec.end_s)));
    argv.push("-o".into());
    argv.push(output.to_string_lossy().into_owned());
    argv.push(spec.video_id.clone());
    argv
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscoderConfig {
    pub program: String,
    pub extra_args: Vec<String>,
}

impl Default for TranscoderConfig {
    fn default() -> Self {
        TranscoderConfig { program: "ffmpeg".into(), extra_args: Vec::new() }
    }
}

/// Argument vectors for the two transcode passes: the video normalized to
/// the low-fps target, and the audio extracted to PCM WAV.
pub fn build_transcode_commands(
    spec: &MediaSegmentSpec,
    config: &TranscoderConfig,
    input: &Path,
    video_out: &Path,
    audio_out: &Path,
) -> (Vec<String>, Vec<String>) {
    let base = |out_args: &[String]| -> Vec<String> {
        let mut argv = vec![config.program.clone()];
        argv.extend(config.extra_args.iter().cloned());
        argv.push("-y".into());
        argv.push("-i".into());
        argv.push(input.to_string_lossy().into_owned());
        argv.extend(out_args.iter().cloned());
        argv
    };
    let video = base(&[
        "-vf".into(),
        format!("scale=-2:{}", spec.video.height),
        "-r".into(),
        spec.video.fps.to_string(),
        "-an".into(),
        video_out.to_string_lossy().into_owned(),
    ]);
    let audio = base(&[
        "-vn".into(),
        "-ar".into(),
        spec.audio.sample_rate_hz.to_string(),
        "-ac".into(),
        spec.audio.channels.to_string(),
        "-c:a".into(),
        "pcm_s16le".into(),
        audio_out.to_string_lossy().into_owned(),
    ]);
    (video, audio)
}

/// Timestamps (seconds from segment start) for still-image annotation.
/// Segments under two seconds get two frames at the one-third and two-thirds
/// points; longer segments get four frames at bin midpoints.
pub fn plan_image_frames(duration_s: f64) -> Result<Vec<f64>> {
    check_duration(duration_s)?;
    if duration_s < 2.0 {
        Ok(vec![duration_s / 3.0, duration_s * 2.0 / 3.0])
    } else {
        Ok(midpoints(duration_s, 4))
    }
}

/// Eight uniformly spaced timestamps for video-level annotation.
pub fn plan_video_frames(duration_s: f64) -> Result<Vec<f64>> {
    check_duration(duration_s)?;
    Ok(midpoints(duration_s, 8))
}

fn check_duration(duration_s: f64) -> Result<()> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "frame planning needs a positive duration, got {duration_s}"
        )));
    }
    Ok(())
}

fn midpoints(duration_s: f64, bins: usize) -> Vec<f64> {
    (0..bins)
        .map(|i| (i as f64 + 0.5) / bins as f64 * duration_s)
        .collect()
}

pub const DEFAULT_BLACK_FRAME_THRESHOLD: f64 = 10.0;

/// True when a frame's mean intensity falls below the black threshold.
/// Intensity is on the 0-255 scale.
pub fn is_black_frame(mean_intensity: f64, threshold: f64) -> Result<bool> {
    if !(0.0..=255.0).contains(&mean_intensity) {
        return Err(Error::InvalidInput(format!(
            "mean intensity {mean_intensity} outside [0, 255]"
        )));
    }
    Ok(mean_intensity < threshold)
}

/// One probed frame: where it was sampled and how bright it is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbedFrame {
    pub timestamp_s: f64,
    pub mean_intensity: f64,
}

/// Probe sidecar produced alongside fetched media: intensities for every
/// planned frame timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameProbe {
    pub image: Vec<ProbedFrame>,
    pub video: Vec<ProbedFrame>,
}

/// A frame with its black-frame classification applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub timestamp_s: f64,
    pub mean_intensity: f64,
    pub is_black: bool,
}

/// The frames available to annotation, after black-frame classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub image: Vec<FrameSample>,
    pub video: Vec<FrameSample>,
}

impl FramePlan {
    pub fn from_probe(probe: &FrameProbe, black_threshold: f64) -> Result<Self> {
        let classify = |frames: &[ProbedFrame]| -> Result<Vec<FrameSample>> {
            frames
                .iter()
                .map(|f| {
                    Ok(FrameSample {
                        timestamp_s: f.timestamp_s,
                        mean_intensity: f.mean_intensity,
                        is_black: is_black_frame(f.mean_intensity, black_threshold)?,
                    })
                })
                .collect()
        };
        Ok(FramePlan {
            image: classify(&probe.image)?,
            video: classify(&probe.video)?,
        })
    }

    pub fn non_black_image(&self) -> Vec<FrameSample> {
        self.image.iter().copied().filter(|f| !f.is_black).collect()
    }

    pub fn non_black_video(&self) -> Vec<FrameSample> {
        self.video.iter().copied().filter(|f| !f.is_black).collect()
    }

    /// True when every probed frame is black.
    pub fn all_black(&self) -> bool {
        self.image.iter().chain(self.video.iter()).all(|f| f.is_black)
    }
}

/// Paths of one sample's fetched media.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaAssets {
    pub video_path: Option<PathBuf>,
    pub audio_path: Option<PathBuf>,
}

/// A single validation problem with a fetched sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediaIssue {
    MissingVideo,
    MissingAudio,
    EmptyVideo,
    EmptyAudio,
    InvalidVideo,
    InvalidAudio,
}

impl MediaIssue {
    pub fn code(self) -> &'static str {
        match self {
            MediaIssue::MissingVideo => "missing-video",
            MediaIssue::MissingAudio => "missing-audio",
            MediaIssue::EmptyVideo => "empty-video",
            MediaIssue::EmptyAudio => "empty-audio",
            MediaIssue::InvalidVideo => "invalid-video",
            MediaIssue::InvalidAudio => "invalid-audio",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaValidation {
    pub issues: Vec<MediaIssue>,
}

impl MediaValidation {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn reason(&self) -> Option<String> {
        self.issues.first().map(|i| i.code().to_string())
    }
}

fn file_head(path: &Path, n: usize) -> std::io::Result<Vec<u8>> {
    use std::io::Read;
    let mut file = std::fs::File::open(path)?;
    let mut buf = vec![0u8; n];
    let mut read = 0;
    while read < n {
        let got = file.read(&mut buf[read..])?;
        if got == 0 {
            break;
        }
        read += got;
    }
    buf.truncate(read);
    Ok(buf)
}

fn looks_like_wav(head: &[u8]) -> bool {
    head.len() >= 12 && &head[0..4] == b"RIFF" && &head[8..12] == b"WAVE"
}

fn looks_like_mp4(head: &[u8]) -> bool {
    head.len() >= 8 && &head[4..8] == b"ftyp"
}

/// Checks that both media files exist, are non-empty, and start with the
/// right container magic. Unreadable files count as invalid.
pub fn validate_media(assets: &MediaAssets) -> MediaValidation {
    let mut issues = Vec::new();

    let check = |path: &Option<PathBuf>,
                 missing: MediaIssue,
                 empty: MediaIssue,
                 invalid: MediaIssue,
                 magic: fn(&[u8]) -> bool,
                 issues: &mut Vec<MediaIssue>| {
        let Some(path) = path else {
            issues.push(missing);
            return;
        };
        if !path.is_file() {
            issues.push(missing);
            return;
        }
        match file_head(path, 12) {
            Ok(head) if head.is_empty() => issues.push(empty),
            Ok(head) if !magic(&head) => issues.push(invalid),
            Ok(_) => {}
            Err(_) => issues.push(invalid),
        }
    };

    check(
        &assets.video_path,
        MediaIssue::MissingVideo,
        MediaIssue::EmptyVideo,
        MediaIssue::InvalidVideo,
        looks_like_mp4,
        &mut issues,
    );
    check(
        &assets.audio_path,
        MediaIssue::MissingAudio,
        MediaIssue::EmptyAudio,
        MediaIssue::InvalidAudio,
        looks_like_wav,
        &mut issues,
    );
    MediaValidation { issues }
}
