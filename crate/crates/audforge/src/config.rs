//! Run configuration: one TOML file with a table per pipeline area. Every
//! field has a default, so an empty file is a valid configuration and a
//! missing file means "all defaults". Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotateSettings;
use crate::backend::{RetryPolicy, DEFAULT_RETRY_ATTEMPTS};
use crate::embedding::FilterThresholds;
use crate::error::{Error, Result};
use crate::media::DEFAULT_BLACK_FRAME_THRESHOLD;
use crate::mining::MiningBounds;
use crate::reward::LengthParams;
use crate::synth::{SynthesisBounds, TaskSplit, DEFAULT_MAX_SYNTH_ATTEMPTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run_id: String,
    pub seed: u64,
    pub workers: usize,
    pub paths: PathsConfig,
    pub mining: MiningConfig,
    pub media: MediaConfig,
    pub annotate: AnnotateConfig,
    pub filter: FilterConfig,
    pub synth: SynthConfig,
    pub split: TaskSplit,
    pub package: PackageConfig,
    pub pipeline: PipelineConfig,
    pub reward: RewardConfig,
    pub backends: BackendsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            run_id: "default".into(),
            seed: 7,
            workers: 1,
            paths: PathsConfig::default(),
            mining: MiningConfig::default(),
            media: MediaConfig::default(),
            annotate: AnnotateConfig::default(),
            filter: FilterConfig::default(),
            synth: SynthConfig::default(),
            split: TaskSplit::default(),
            package: PackageConfig::default(),
            pipeline: PipelineConfig::default(),
            reward: RewardConfig::default(),
            backends: BackendsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Parent directory for per-run working directories.
    pub runs_root: PathBuf,
    /// Directory of input `.srt` files; the file stem is the video id.
    pub srt_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { runs_root: "runs".into(), srt_dir: "captions".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Stems added to the built-in sound lexicon of the rule classifier.
    pub extra_lexicon: Vec<String>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        let bounds = MiningBounds::default();
        MiningConfig {
            min_duration_s: bounds.min_duration_s,
            max_duration_s: bounds.max_duration_s,
            extra_lexicon: Vec::new(),
        }
    }
}

impl MiningConfig {
    pub fn bounds(&self) -> MiningBounds {
        MiningBounds {
            min_duration_s: self.min_duration_s,
            max_duration_s: self.max_duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediaConfig {
    /// Segment downloader executable for live runs.
    pub downloader: String,
    pub downloader_args: Vec<String>,
    /// Transcoder executable used to hit the video and audio targets.
    pub transcoder: String,
    pub black_frame_threshold: f64,
}

impl Default for MediaConfig {
    fn default() -> Self {
        MediaConfig {
            downloader: "yt-dlp".into(),
            downloader_args: Vec::new(),
            transcoder: "ffmpeg".into(),
            black_frame_threshold: DEFAULT_BLACK_FRAME_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub detection_confidence: f64,
    pub music_score_threshold: f64,
    pub top_k_tags: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        let s = AnnotateSettings::default();
        AnnotateConfig {
            detection_confidence: s.detection_confidence,
            music_score_threshold: s.music_score_threshold,
            top_k_tags: s.top_k_tags,
        }
    }
}

impl AnnotateConfig {
    pub fn settings(&self) -> AnnotateSettings {
        AnnotateSettings {
            detection_confidence: self.detection_confidence,
            music_score_threshold: self.music_score_threshold,
            top_k_tags: self.top_k_tags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub outlier_distance: f64,
    pub alignment_similarity: f64,
    pub min_duration_s: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let t = FilterThresholds::default();
        FilterConfig {
            outlier_distance: t.outlier_distance,
            alignment_similarity: t.alignment_similarity,
            min_duration_s: t.min_duration_s,
        }
    }
}

impl FilterConfig {
    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            outlier_distance: self.outlier_distance,
            alignment_similarity: self.alignment_similarity,
            min_duration_s: self.min_duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// When set, targets carry the semantic descriptor section.
    pub semantic_mode: bool,
    pub max_attempts: u32,
    pub min_thinking_words: usize,
    /// Strict word cap on answers; absent means uncapped.
    pub max_answer_words: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let bounds = SynthesisBounds::default();
        SynthConfig {
            semantic_mode: true,
            max_attempts: DEFAULT_MAX_SYNTH_ATTEMPTS,
            min_thinking_words: bounds.min_thinking_words,
            max_answer_words: bounds.max_answer_words,
        }
    }
}

impl SynthConfig {
    pub fn bounds(&self) -> SynthesisBounds {
        SynthesisBounds {
            min_thinking_words: self.min_thinking_words,
            max_answer_words: self.max_answer_words,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackageConfig {
    pub shard_size: usize,
}

impl Default for PackageConfig {
    fn default() -> Self {
        PackageConfig { shard_size: crate::shard::SHARD_SIZE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// A stage aborts when its failure fraction strictly exceeds this.
    pub failure_ceiling: f64,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            failure_ceiling: 0.10,
            retry_attempts: DEFAULT_RETRY_ATTEMPTS,
            retry_base_ms: 250,
        }
    }
}

impl PipelineConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.retry_attempts,
            base_delay: Duration::from_millis(self.retry_base_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub delta: f64,
    pub n_gold: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let p = LengthParams::default();
        RewardConfig { alpha: p.alpha, delta: p.delta, n_gold: p.n_gold }
    }
}

impl RewardConfig {
    pub fn length_params(&self) -> LengthParams {
        LengthParams { alpha: self.alpha, delta: self.delta, n_gold: self.n_gold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    /// Deterministic in-process backends, for tests and dry runs.
    Stub,
    /// HTTP backends at the configured URLs.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub mode: BackendMode,
    pub judge_url: String,
    pub generator_url: String,
    pub embedding_url: String,
    pub inference_url: String,
    /// Optional; when empty the built-in rule classifier is used even in
    /// http mode.
    pub classifier_url: String,
    pub timeout_s: u64,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig {
            mode: BackendMode::Stub,
            judge_url: String::new(),
            generator_url: String::new(),
            embedding_url: String::new(),
            inference_url: String::new(),
            classifier_url: String::new(),
            timeout_s: 60,
        }
    }
}

impl Config {
    /// Reads and validates a configuration file. Every failure is a config
    /// error so the caller can map it to the config exit code.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.trim().is_empty()
            || self.run_id.contains('/')
            || self.run_id.contains(char::is_whitespace)
        {
            return Err(Error::Config(format!(
                "run_id must be a non-empty path segment, got {:?}",
                self.run_id
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.mining.bounds().validate()?;
        for (name, value) in [
            ("detection_confidence", self.annotate.detection_confidence),
            ("music_score_threshold", self.annotate.music_score_threshold),
        ] {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(Error::Config(format!(
                    "annotate.{name} must be in [0, 1], got {value}"
                )));
            }
        }
        if self.annotate.top_k_tags == 0 {
            return Err(Error::Config("annotate.top_k_tags must be at least 1".into()));
        }
        self.filter.thresholds().validate()?;
        self.split.validate()?;
        if self.synth.max_attempts == 0 {
            return Err(Error::Config("synth.max_attempts must be at least 1".into()));
        }
        if self.synth.min_thinking_words == 0 {
            return Err(Error::Config("synth.min_thinking_words must be at least 1".into()));
        }
        if self.package.shard_size == 0 {
            return Err(Error::Config("package.shard_size must be at least 1".into()));
        }
        if !(self.pipeline.failure_ceiling.is_finite()
            && (0.0..=1.0).contains(&self.pipeline.failure_ceiling))
        {
            return Err(Error::Config(format!(
                "pipeline.failure_ceiling must be in [0, 1], got {}",
                self.pipeline.failure_ceiling
            )));
        }
        if self.pipeline.retry_attempts == 0 {
            return Err(Error::Config("pipeline.retry_attempts must be at least 1".into()));
        }
        LengthParams::new(self.reward.alpha, self.reward.delta, self.reward.n_gold)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.media.black_frame_threshold.is_finite()
            && (0.0..=255.0).contains(&self.media.black_frame_threshold))
        {
            return Err(Error::Config(format!(
                "media.black_frame_threshold must be in [0, 255], got {}",
                self.media.black_frame_threshold
            )));
        }
        if self.backends.mode == BackendMode::Http {
            for (name, url) in [
                ("judge_url", &self.backends.judge_url),
                ("generator_url", &self.backends.generator_url),
                ("embedding_url", &self.backends.embedding_url),
                ("inference_url", &self.backends.inference_url),
            ] {
                if url.trim().is_empty() {
                    return Err(Error::Config(format!(
                        "backends.{name} is required in http mode"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The working directory for this configuration's run.
    pub fn run_dir(&self) -> PathBuf {
        self.paths.runs_root.join(&self.run_id)
    }
}
