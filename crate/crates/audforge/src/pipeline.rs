//! Stage orchestration over the run manifest. Each stage picks up the
//! samples its predecessor finished, records per-sample success or terminal
//! failure, and leaves everything else untouched, so any stage can be
//! re-invoked or resumed after an interruption without changing outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_segment, AnnotationBundle, SegmentMedia};
use crate::backend::{
    ClassifierBackend, ClientRegistry, EmbeddingBackend, EmbeddingKind, GeneratorBackend,
    JudgeBackend, ALL_ROLES,
};
use crate::backend::http::{
    HttpClassifier, HttpEmbedding, HttpEndpoint, HttpGenerator, HttpInference, HttpJudge,
};
use crate::backend::stub::{
    stub_frame_probe, write_stub_mp4, write_stub_wav, StubEmbedding, StubGenerator, StubInference,
    StubLexiconJudge, StubSynthJudge,
};
use crate::config::{BackendMode, Config};
use crate::embedding::{
    filter_means, run_filters_with_means, FilterCandidate, FilterMeans, FilterReport,
};
use crate::error::{Error, Result};
use crate::manifest::{RunManifest, StageStatus};
use crate::media::{
    build_download_command, build_transcode_commands, validate_media, DownloaderConfig,
    FramePlan, FrameProbe, MediaAssets, MediaSegmentSpec, TranscoderConfig,
};
use crate::mining::{classify_candidate, mine_line, parse_srt, CaptionCandidate, RuleClassifier};
use crate::shard::{pack_shards, PackOutcome, PackRecord, SampleMetadata};
use crate::synth::{
    build_prompt, expand_tasks, judge_and_retry, serialize_tagged, GeneratorTaskSource,
    StructuredTriplet, SynthesisOutcome, TaskRecord,
};

/// File layout of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(runs_root: &Path, run_id: &str) -> Self {
        RunPaths { root: runs_root.join(run_id) }
    }

    pub fn for_config(config: &Config) -> Self {
        RunPaths { root: config.run_dir() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.ldjson")
    }

    pub fn mined_dir(&self) -> PathBuf {
        self.root.join("mined")
    }

    pub fn mined_path(&self, key: &str) -> PathBuf {
        self.mined_dir().join(format!("{key}.json"))
    }

    pub fn mine_report_path(&self) -> PathBuf {
        self.mined_dir().join("report.json")
    }

    pub fn media_dir(&self) -> PathBuf {
        self.root.join("media")
    }

    pub fn video_path(&self, key: &str) -> PathBuf {
        self.media_dir().join(format!("{key}.mp4"))
    }

    pub fn audio_path(&self, key: &str) -> PathBuf {
        self.media_dir().join(format!("{key}.wav"))
    }

    pub fn probe_path(&self, key: &str) -> PathBuf {
        self.media_dir().join(format!("{key}.frames.json"))
    }

    pub fn annotations_dir(&self) -> PathBuf {
        self.root.join("annotations")
    }

    pub fn annotation_path(&self, key: &str) -> PathBuf {
        self.annotations_dir().join(format!("{key}.json"))
    }

    pub fn filter_dir(&self) -> PathBuf {
        self.root.join("filter")
    }

    pub fn filter_means_path(&self) -> PathBuf {
        self.filter_dir().join("means.json")
    }

    pub fn filter_report_path(&self) -> PathBuf {
        self.filter_dir().join("report.json")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn synth_path(&self, key: &str) -> PathBuf {
        self.synth_dir().join(format!("{key}.json"))
    }

    pub fn tasks_path(&self) -> PathBuf {
        self.root.join("tasks.ldjson")
    }

    pub fn meta_dir(&self) -> PathBuf {
        self.root.join("meta")
    }

    pub fn meta_path(&self, key: &str) -> PathBuf {
        self.meta_dir().join(format!("{key}.json"))
    }

    pub fn shards_dir(&self) -> PathBuf {
        self.root.join("shards")
    }

    pub fn stats_json_path(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn stats_csv_path(&self) -> PathBuf {
        self.root.join("stats.csv")
    }

    pub fn counts_path(&self) -> PathBuf {
        self.root.join("counts.json")
    }

    pub fn open_manifest(&self, run_id: &str) -> Result<RunManifest> {
        RunManifest::open(&self.manifest_path(), run_id)
    }
}

/// All service backends one run needs, resolved from configuration.
pub struct BackendSet {
    pub classifier: Box<dyn ClassifierBackend>,
    pub mining_judge: Box<dyn JudgeBackend>,
    pub inference: ClientRegistry,
    pub embedding: Box<dyn EmbeddingBackend>,
    pub generator: Box<dyn GeneratorBackend>,
    pub synth_judge: Box<dyn JudgeBackend>,
}

impl BackendSet {
    /// Deterministic in-process backends for desk runs and tests.
    pub fn stubs(config: &Config) -> Self {
        let mut inference = ClientRegistry::new();
        for role in ALL_ROLES {
            inference = inference.register(role, Box::new(StubInference));
        }
        BackendSet {
            classifier: Box::new(rule_classifier(config)),
            mining_judge: Box::new(StubLexiconJudge::new()),
            inference,
            embedding: Box::new(StubEmbedding),
            generator: Box::new(StubGenerator::new()),
            synth_judge: Box::new(StubSynthJudge),
        }
    }

    /// Backends per the configured mode: stubs, or HTTP clients at the
    /// configured URLs. The classifier stays the built-in rule when no
    /// classifier URL is given.
    pub fn from_config(config: &Config) -> Result<Self> {
        match config.backends.mode {
            BackendMode::Stub => Ok(Self::stubs(config)),
            BackendMode::Http => {
                let b = &config.backends;
                let timeout = std::time::Duration::from_secs(b.timeout_s);
                let endpoint = |service: &str, url: &str| {
                    HttpEndpoint::with_timeout(service, url, timeout)
                };
                let mut inference = ClientRegistry::new();
                for role in ALL_ROLES {
                    inference = inference.register(
                        role,
                        Box::new(HttpInference::new(endpoint(role.as_str(), &b.inference_url)?)),
                    );
                }
                let classifier: Box<dyn ClassifierBackend> = if b.classifier_url.trim().is_empty() {
                    Box::new(rule_classifier(config))
                } else {
                    Box::new(HttpClassifier::new(endpoint("classifier", &b.classifier_url)?))
                };
                Ok(BackendSet {
                    classifier,
                    mining_judge: Box::new(HttpJudge::new(endpoint("judge", &b.judge_url)?)),
                    inference,
                    embedding: Box::new(HttpEmbedding::new(endpoint("embedding", &b.embedding_url)?)),
                    generator: Box::new(HttpGenerator::new(endpoint("generator", &b.generator_url)?)),
                    synth_judge: Box::new(HttpJudge::new(endpoint("judge", &b.judge_url)?)),
                })
            }
        }
    }
}

fn rule_classifier(config: &Config) -> RuleClassifier {
    if config.mining.extra_lexicon.is_empty() {
        RuleClassifier::with_default_lexicon()
    } else {
        let stems = crate::mining::DEFAULT_SOUND_LEXICON
            .iter()
            .map(|s| s.to_string())
            .chain(config.mining.extra_lexicon.iter().cloned());
        RuleClassifier::new(stems)
    }
}

/// What a fetcher produced for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutputs {
    pub assets: MediaAssets,
    pub probe: FrameProbe,
}

/// Acquires one segment's media into the run's media directory.
pub trait MediaFetcher: Send + Sync {
    fn fetch(
        &self,
        spec: &MediaSegmentSpec,
        candidate: &CaptionCandidate,
        paths: &RunPaths,
    ) -> Result<FetchOutputs>;
}

/// Desk fetcher: materializes deterministic stub media carrying the caption
/// content, plus a synthetic brightness probe. Video ids containing "novid"
/// get no video file, exercising the validation path.
pub struct StubFetcher;

impl MediaFetcher for StubFetcher {
    fn fetch(
        &self,
        spec: &MediaSegmentSpec,
        candidate: &CaptionCandidate,
        paths: &RunPaths,
    ) -> Result<FetchOutputs> {
        let key = candidate.sample_key();
        let audio_path = paths.audio_path(&key);
        write_stub_wav(&audio_path, candidate.content())?;
        let video_path = if spec.video_id.contains("novid") {
            None
        } else {
            let path = paths.video_path(&key);
            write_stub_mp4(&path, candidate.content())?;
            Some(path)
        };
        Ok(FetchOutputs {
            assets: MediaAssets { video_path, audio_path: Some(audio_path) },
            probe: stub_frame_probe(&spec.video_id, candidate.duration_s())?,
        })
    }
}

/// Live fetcher: downloads the segment, transcodes it to the media targets,
/// and probes frame brightness, all through external commands.
pub struct CommandFetcher {
    pub downloader: DownloaderConfig,
    pub transcoder: TranscoderConfig,
}

impl CommandFetcher {
    pub fn from_config(config: &Config) -> Self {
        CommandFetcher {
            downloader: DownloaderConfig {
                program: config.media.downloader.clone(),
                extra_args: config.media.downloader_args.clone(),
            },
            transcoder: TranscoderConfig {
                program: config.media.transcoder.clone(),
                extra_args: Vec::new(),
            },
        }
    }

    fn run(argv: &[String], service: &str) -> Result<String> {
        let output = Command::new(&argv[0])
            .args(&argv[1..])
            .output()
            .map_err(|e| Error::backend(service, format!("spawn {}: {e}", argv[0]), false))?;
        if !output.status.success() {
            return Err(Error::backend(
                service,
                format!("{} exited with {}", argv[0], output.status),
                false,
            ));
        }
        Ok(String::from_utf8_lossy(&output.stderr).into_owned())
    }

    /// Probe command: decode the listed timestamps and print per-frame mean
    /// luma through the transcoder's signalstats filter.
    fn probe_argv(&self, video: &Path, timestamps: &[f64]) -> Vec<String> {
        let select = timestamps
            .iter()
            .map(|t| format!("lt(prev_pts*TB\\,{t})*gte(pts*TB\\,{t})", t = crate::util::fmt_seconds(*t)))
            .collect::<Vec<_>>()
            .join("+");
        vec![
            self.transcoder.program.clone(),
            "-i".into(),
            video.to_string_lossy().into_owned(),
            "-vf".into(),
            format!("select='{select}',signalstats,metadata=mode=print"),
            "-f".into(),
            "null".into(),
            "-".into(),
        ]
    }
}

/// Pulls the YAVG means out of a transcoder metadata printout, in order.
pub fn parse_yavg_metadata(log: &str) -> Vec<f64> {
    log.lines()
        .filter_map(|line| line.split("signalstats.YAVG=").nth(1))
        .filter_map(|v| v.trim().parse::<f64>().ok())
        .collect()
}

impl MediaFetcher for CommandFetcher {
    fn fetch(
        &self,
        spec: &MediaSegmentSpec,
        candidate: &CaptionCandidate,
        paths: &RunPaths,
    ) -> Result<FetchOutputs> {
        let key = candidate.sample_key();
        let raw = paths.media_dir().join(format!("{key}.raw.mp4"));
        let video = paths.video_path(&key);
        let audio = paths.audio_path(&key);

        Self::run(&build_download_command(spec, &self.downloader, &raw), "downloader")?;
        let (video_argv, audio_argv) =
            build_transcode_commands(spec, &self.transcoder, &raw, &video, &audio);
        Self::run(&video_argv, "transcoder")?;
        Self::run(&audio_argv, "transcoder")?;
        let _ = std::fs::remove_file(&raw);

        let duration = candidate.duration_s();
        let image_ts = crate::media::plan_image_frames(duration)?;
        let video_ts = crate::media::plan_video_frames(duration)?;
        let mut all_ts = image_ts.clone();
        all_ts.extend(&video_ts);
        let log = Self::run(&self.probe_argv(&video, &all_ts), "transcoder")?;
        let means = parse_yavg_metadata(&log);
        if means.len() < all_ts.len() {
            return Err(Error::backend(
                "transcoder",
                format!("probe returned {} frames, expected {}", means.len(), all_ts.len()),
                false,
            ));
        }
        let frame = |ts: f64, mean: f64| crate::media::ProbedFrame {
            timestamp_s: ts,
            mean_intensity: mean.clamp(0.0, 255.0),
        };
        let probe = FrameProbe {
            image: image_ts.iter().zip(&means).map(|(t, m)| frame(*t, *m)).collect(),
            video: video_ts
                .iter()
                .zip(means[image_ts.len()..].iter())
                .map(|(t, m)| frame(*t, *m))
                .collect(),
        };
        Ok(FetchOutputs {
            assets: MediaAssets { video_path: Some(video), audio_path: Some(audio) },
            probe,
        })
    }
}

/// Per-invocation stage controls. `max_samples` caps how many pending
/// samples the invocation touches, which tests use to simulate a mid-run
/// kill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOptions {
    pub max_samples: Option<usize>,
    pub workers: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        StageOptions { max_samples: None, workers: 1 }
    }
}

impl StageOptions {
    pub fn for_config(config: &Config) -> Self {
        StageOptions { max_samples: None, workers: config.workers.max(1) }
    }
}

/// What one stage invocation did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub pending: usize,
    pub processed: usize,
    pub succeeded: usize,
    pub failed: usize,
}

/// Mining tallies for one invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineSummary {
    pub files: usize,
    pub lines: usize,
    pub mined: usize,
    pub skipped_existing: usize,
    pub rejects: BTreeMap<String, usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Maps items through `f` on up to `workers` scoped threads, preserving
/// input order in the result.
fn parallel_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    let workers = workers.max(1);
    if workers == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk_size = items.len().div_ceil(workers);
    let mut chunks: Vec<(usize, Vec<T>)> = Vec::new();
    let mut items = items;
    let mut offset = 0;
    while !items.is_empty() {
        let rest = items.split_off(items.len().min(chunk_size));
        chunks.push((offset, std::mem::replace(&mut items, rest)));
        offset += chunks.last().map(|(_, c)| c.len()).unwrap_or(0);
    }
    let f = &f;
    let mut indexed: Vec<(usize, Vec<R>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|(start, chunk)| {
                scope.spawn(move || (start, chunk.into_iter().map(f).collect::<Vec<R>>()))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("stage worker panicked")).collect()
    });
    indexed.sort_by_key(|(start, _)| *start);
    indexed.into_iter().flat_map(|(_, results)| results).collect()
}

/// A worker's verdict on one sample; manifest writes happen afterwards, on
/// the coordinating thread, in input order.
enum WorkOutcome {
    Done,
    Failed { reason: String },
}

struct WorkResult {
    key: String,
    outcome: WorkOutcome,
}

/// Aborts when the stage's cumulative failure fraction strictly exceeds the
/// ceiling. The fraction is over every sample the stage has ever decided,
/// so resumed runs abort exactly when uninterrupted ones would.
fn check_ceiling(
    manifest: &RunManifest,
    stage: &str,
    target: StageStatus,
    ceiling: f64,
) -> Result<()> {
    let prefix = format!("failed:{stage}:");
    let failed: usize = manifest
        .counts()
        .failed
        .iter()
        .filter(|(label, _)| label.starts_with(&prefix))
        .map(|(_, n)| *n)
        .sum();
    let decided = manifest.reached(target) + failed;
    if decided == 0 {
        return Ok(());
    }
    let rate = failed as f64 / decided as f64;
    if rate > ceiling {
        return Err(Error::FailureCeiling {
            stage: stage.to_string(),
            rate: rate * 100.0,
            ceiling: ceiling * 100.0,
        });
    }
    Ok(())
}

fn apply_results(
    manifest: &mut RunManifest,
    stage: &str,
    target: StageStatus,
    results: Vec<Result<WorkResult>>,
    summary: &mut StageSummary,
) -> Result<()> {
    for result in results {
        let result = result?;
        summary.processed += 1;
        match result.outcome {
            WorkOutcome::Done => {
                manifest.advance(&result.key, target)?;
                summary.succeeded += 1;
            }
            WorkOutcome::Failed { reason } => {
                manifest.fail(&result.key, stage, &reason)?;
                summary.failed += 1;
            }
        }
    }
    Ok(())
}

fn pending_for(
    manifest: &RunManifest,
    target: StageStatus,
    options: &StageOptions,
) -> (Vec<String>, usize) {
    let source = target.predecessor().expect("entry stage does not pull from the manifest");
    let mut pending = manifest.samples_at(source);
    let total = pending.len();
    if let Some(max) = options.max_samples {
        pending.truncate(max);
    }
    (pending, total)
}

fn failure_reason(e: &Error) -> String {
    match e {
        Error::Backend { service, .. } => service.clone(),
        Error::InvalidInput(_) => "invalid-input".into(),
        _ => "error".into(),
    }
}

/// Mines caption candidates from every `.srt` file in the configured
/// directory. Lines whose sample key is already in the manifest are skipped;
/// rejected lines are re-evaluated on each invocation, which keeps the
/// reject tally complete without touching sample state.
pub fn run_mine(
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    backends: &BackendSet,
    options: &StageOptions,
) -> Result<MineSummary> {
    let srt_dir = &config.paths.srt_dir;
    let mut files: Vec<PathBuf> = std::fs::read_dir(srt_dir)
        .map_err(|e| Error::Config(format!("paths.srt_dir {}: {e}", srt_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "srt"))
        .collect();
    files.sort();
    std::fs::create_dir_all(paths.mined_dir())?;

    let bounds = config.mining.bounds();
    let retry = config.pipeline.retry_policy();
    let mut summary = MineSummary { files: files.len(), ..MineSummary::default() };
    'files: for file in &files {
        let video_id = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let content = std::fs::read_to_string(file)?;
        for line in parse_srt(&video_id, &content)? {
            summary.lines += 1;
            let candidate = match mine_line(&line, &bounds) {
                Ok(c) => c,
                Err(reason) => {
                    *summary.rejects.entry(reason.code().to_string()).or_insert(0) += 1;
                    continue;
                }
            };
            let key = candidate.sample_key();
            if manifest.contains(&key) {
                summary.skipped_existing += 1;
                continue;
            }
            let decision = classify_candidate(
                &candidate,
                backends.classifier.as_ref(),
                backends.mining_judge.as_ref(),
                &retry,
            )?;
            if let Some(reason) = decision.reject_reason() {
                *summary.rejects.entry(reason.code().to_string()).or_insert(0) += 1;
                continue;
            }
            write_json(&paths.mined_path(&key), &candidate)?;
            manifest.advance(&key, StageStatus::Mined)?;
            summary.mined += 1;
            if options.max_samples.is_some_and(|max| summary.mined >= max) {
                break 'files;
            }
        }
    }
    write_json(&paths.mine_report_path(), &summary)?;
    Ok(summary)
}

/// Fetches media for mined samples and validates the results against the
/// media targets. Samples failing validation are terminally failed with the
/// first issue code as the reason.
pub fn run_fetch(
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    fetcher: &dyn MediaFetcher,
    options: &StageOptions,
) -> Result<StageSummary> {
    let (pending, total) = pending_for(manifest, StageStatus::Fetched, options);
    let mut summary = StageSummary {
        stage: "fetch".into(),
        pending: total,
        ..StageSummary::default()
    };
    std::fs::create_dir_all(paths.media_dir())?;

    let work = |key: String| -> Result<WorkResult> {
        let candidate: CaptionCandidate = read_json(&paths.mined_path(&key))?;
        let spec =
            MediaSegmentSpec::new(candidate.video_id.clone(), candidate.start_s, candidate.end_s)?;
        let outputs = match fetcher.fetch(&spec, &candidate, paths) {
            Ok(outputs) => outputs,
            Err(e) if matches!(e, Error::Backend { .. }) => {
                return Ok(WorkResult {
                    key,
                    outcome: WorkOutcome::Failed { reason: failure_reason(&e) },
                })
            }
            Err(e) => return Err(e),
        };
        let validation = validate_media(&outputs.assets);
        if let Some(reason) = validation.reason() {
            return Ok(WorkResult { key, outcome: WorkOutcome::Failed { reason } });
        }
        write_json(&paths.probe_path(&key), &outputs.probe)?;
        Ok(WorkResult { key, outcome: WorkOutcome::Done })
    };
    let results = parallel_map(pending, options.workers, work);
    apply_results(manifest, "fetch", StageStatus::Fetched, results, &mut summary)?;
    check_ceiling(manifest, "fetch", StageStatus::Fetched, config.pipeline.failure_ceiling)?;
    Ok(summary)
}

/// Runs the annotation protocol over fetched samples, persisting one bundle
/// per sample.
pub fn run_annotate(
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    backends: &BackendSet,
    options: &StageOptions,
) -> Result<StageSummary> {
    let (pending, total) = pending_for(manifest, StageStatus::Annotated, options);
    let mut summary = StageSummary {
        stage: "annotate".into(),
        pending: total,
        ..StageSummary::default()
    };
    std::fs::create_dir_all(paths.annotations_dir())?;

    let settings = config.annotate.settings();
    let retry = config.pipeline.retry_policy();
    let threshold = config.media.black_frame_threshold;
    let work = |key: String| -> Result<WorkResult> {
        let candidate: CaptionCandidate = read_json(&paths.mined_path(&key))?;
        let probe: FrameProbe = read_json(&paths.probe_path(&key))?;
        let frames = FramePlan::from_probe(&probe, threshold)?;
        let media = SegmentMedia {
            sample_id: key.clone(),
            audio_ref: paths.audio_path(&key).to_string_lossy().into_owned(),
            video_ref: paths.video_path(&key).to_string_lossy().into_owned(),
            duration_s: candidate.duration_s(),
        };
        match annotate_segment(&media, &frames, &backends.inference, &settings, &retry) {
            Ok(bundle) => {
                write_json(&paths.annotation_path(&key), &bundle)?;
                Ok(WorkResult { key, outcome: WorkOutcome::Done })
            }
            Err(e) if matches!(e, Error::Backend { .. }) => Ok(WorkResult {
                key,
                outcome: WorkOutcome::Failed { reason: failure_reason(&e) },
            }),
            Err(e) => Err(e),
        }
    };
    let results = parallel_map(pending, options.workers, work);
    apply_results(manifest, "annotate", StageStatus::Annotated, results, &mut summary)?;
    check_ceiling(manifest, "annotate", StageStatus::Annotated, config.pipeline.failure_ceiling)?;
    Ok(summary)
}

fn filter_candidate_for(
    key: &str,
    paths: &RunPaths,
    embedding: &dyn EmbeddingBackend,
) -> Result<(FilterCandidate, CaptionCandidate)> {
    let candidate: CaptionCandidate = read_json(&paths.mined_path(key))?;
    let bundle: AnnotationBundle = read_json(&paths.annotation_path(key))?;
    let audio_ref = paths.audio_path(key).to_string_lossy().into_owned();
    Ok((
        FilterCandidate {
            audio: embedding.embed(EmbeddingKind::Audio, &audio_ref)?,
            text: embedding.embed(EmbeddingKind::Text, &bundle.audio.general_caption)?,
            closed_caption: embedding.embed(EmbeddingKind::Text, candidate.content())?,
            duration_s: candidate.duration_s(),
        },
        candidate,
    ))
}

/// Filters annotated samples through the embedding cascade. The modality
/// centroids are computed once over the full annotated set and persisted, so
/// a resumed run measures the remaining samples against identical means.
pub fn run_filter(
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    backends: &BackendSet,
    options: &StageOptions,
) -> Result<StageSummary> {
    let source_set = manifest.samples_at(StageStatus::Annotated);
    let mut summary = StageSummary {
        stage: "filter".into(),
        pending: source_set.len(),
        ..StageSummary::default()
    };
    std::fs::create_dir_all(paths.filter_dir())?;

    if !source_set.is_empty() {
        let means: FilterMeans = if paths.filter_means_path().is_file() {
            read_json(&paths.filter_means_path())?
        } else {
            let mut all = Vec::with_capacity(source_set.len());
            for key in &source_set {
                all.push(filter_candidate_for(key, paths, backends.embedding.as_ref())?.0);
            }
            let means = filter_means(&all)?;
            write_json(&paths.filter_means_path(), &means)?;
            means
        };

        let mut decide = source_set;
        if let Some(max) = options.max_samples {
            decide.truncate(max);
        }
        let mut candidates = Vec::with_capacity(decide.len());
        for key in &decide {
            candidates.push(filter_candidate_for(key, paths, backends.embedding.as_ref())?.0);
        }
        let outcome = run_filters_with_means(&candidates, &means, &config.filter.thresholds())?;
        let mut verdicts: Vec<(usize, Option<String>)> =
            outcome.kept.iter().map(|i| (*i, None)).collect();
        verdicts.extend(
            outcome
                .drops
                .iter()
                .map(|(i, reason)| (*i, Some(reason.code().to_string()))),
        );
        verdicts.sort_by_key(|(i, _)| *i);
        for (index, drop) in verdicts {
            summary.processed += 1;
            match drop {
                None => {
                    manifest.advance(&decide[index], StageStatus::Filtered)?;
                    summary.succeeded += 1;
                }
                Some(reason) => {
                    manifest.fail(&decide[index], "filter", &reason)?;
                    summary.failed += 1;
                }
            }
        }
    }

    let counts = manifest.counts();
    let drop_count = |code: &str| -> usize {
        counts.failed.get(&format!("failed:filter:{code}")).copied().unwrap_or(0)
    };
    let report = FilterReport {
        input_count: manifest.reached(StageStatus::Annotated),
        dropped_outlier_audio: drop_count("outlier-audio"),
        dropped_outlier_text: drop_count("outlier-text"),
        dropped_alignment: drop_count("alignment"),
        dropped_duration: drop_count("duration"),
        kept: manifest.reached(StageStatus::Filtered),
    };
    write_json(&paths.filter_report_path(), &report)?;
    check_ceiling(manifest, "filter", StageStatus::Filtered, config.pipeline.failure_ceiling)?;
    Ok(summary)
}

/// One sample's synthesis artifact: the accepted triplet, its tagged target,
/// the expanded task records, and the generator budget spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisArtifact {
    pub sample_id: String,
    pub triplet: StructuredTriplet,
    pub target: String,
    pub records: Vec<TaskRecord>,
    pub generator_calls: u32,
}

/// Synthesizes structured captions for filtered samples through the judged
/// retry loop, then expands each accepted caption into its task records.
/// After the pass, `tasks.ldjson` is rebuilt from every synthesized sample
/// in key order.
pub fn run_synthesize(
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    backends: &BackendSet,
    options: &StageOptions,
) -> Result<StageSummary> {
    let (pending, total) = pending_for(manifest, StageStatus::Synthesized, options);
    let mut summary = StageSummary {
        stage: "synthesize".into(),
        pending: total,
        ..StageSummary::default()
    };
    std::fs::create_dir_all(paths.synth_dir())?;

    let semantic_mode = config.synth.semantic_mode;
    let bounds = config.synth.bounds();
    let work = |key: String| -> Result<WorkResult> {
        let candidate: CaptionCandidate = read_json(&paths.mined_path(&key))?;
        let bundle: AnnotationBundle = read_json(&paths.annotation_path(&key))?;
        let prompt = build_prompt(&bundle, &candidate)?;
        let outcome = judge_and_retry(
            backends.generator.as_ref(),
            backends.synth_judge.as_ref(),
            &prompt,
            config.synth.max_attempts,
            semantic_mode,
            &bounds,
        );
        match outcome {
            SynthesisOutcome::Accepted { triplet, generator_calls } => {
                let source = GeneratorTaskSource {
                    generator: backends.generator.as_ref(),
                    semantic_mode,
                };
                let records = expand_tasks(
                    &key,
                    &triplet,
                    &source,
                    config.seed,
                    &config.split,
                    semantic_mode,
                )?;
                let artifact = SynthesisArtifact {
                    sample_id: key.clone(),
                    target: serialize_tagged(&triplet, semantic_mode),
                    triplet,
                    records,
                    generator_calls,
                };
                write_json(&paths.synth_path(&key), &artifact)?;
                Ok(WorkResult { key, outcome: WorkOutcome::Done })
            }
            SynthesisOutcome::Skipped { generator_calls, failures } => {
                let reason = format!("judge-exhausted-after-{generator_calls}");
                log::info!("synthesize {key}: skipped: {}", failures.join("; "));
                Ok(WorkResult { key, outcome: WorkOutcome::Failed { reason } })
            }
        }
    };
    let results = parallel_map(pending, options.workers, work);
    apply_results(manifest, "synthesize", StageStatus::Synthesized, results, &mut summary)?;

    let mut tasks_file = std::fs::File::create(paths.tasks_path())?;
    for key in manifest.samples_at_or_beyond(StageStatus::Synthesized) {
        let artifact: SynthesisArtifact = read_json(&paths.synth_path(&key))?;
        for record in &artifact.records {
            let mut line = serde_json::to_string(record)?;
            line.push('\n');
            tasks_file.write_all(line.as_bytes())?;
        }
    }
    tasks_file.sync_all()?;

    check_ceiling(manifest, "synthesize", StageStatus::Synthesized, config.pipeline.failure_ceiling)?;
    Ok(summary)
}

fn metadata_for(key: &str, paths: &RunPaths) -> Result<SampleMetadata> {
    let candidate: CaptionCandidate = read_json(&paths.mined_path(key))?;
    let bundle: AnnotationBundle = read_json(&paths.annotation_path(key))?;
    let artifact: SynthesisArtifact = read_json(&paths.synth_path(key))?;
    let mut task_counts = BTreeMap::new();
    for record in &artifact.records {
        *task_counts.entry(record.kind).or_insert(0) += 1;
    }
    Ok(SampleMetadata {
        key: key.to_string(),
        video_id: candidate.video_id.clone(),
        start_s: candidate.start_s,
        end_s: candidate.end_s,
        duration_s: candidate.duration_s(),
        closed_caption: candidate.raw_text.clone(),
        content: candidate.content().to_string(),
        audio_caption: bundle.audio.general_caption.clone(),
        tags: bundle.audio.tags.clone(),
        music_caption: bundle.audio.music_caption.clone(),
        caption: artifact.triplet.answer.clone(),
        target: artifact.target.clone(),
        semantic: artifact.triplet.semantic.clone(),
        task_counts,
        generator_calls: artifact.generator_calls,
    })
}

/// Packages synthesized samples into tar shards. The full packaged set is
/// rebuilt every invocation (already-packaged samples included), so shard
/// boundaries and bytes are identical however many times the stage ran.
/// Samples whose media disappeared are skipped with a manifest note and stay
/// pending.
pub fn run_package(
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    _options: &StageOptions,
) -> Result<StageSummary> {
    let keys = manifest.samples_at_or_beyond(StageStatus::Synthesized);
    let mut summary = StageSummary {
        stage: "package".into(),
        pending: manifest.samples_at(StageStatus::Synthesized).len(),
        ..StageSummary::default()
    };
    std::fs::create_dir_all(paths.meta_dir())?;

    let mut records = Vec::with_capacity(keys.len());
    for key in &keys {
        let metadata = metadata_for(key, paths)?;
        let mut metadata_json = serde_json::to_vec(&metadata)?;
        metadata_json.push(b'\n');
        std::fs::write(paths.meta_path(key), &metadata_json)?;
        records.push(PackRecord {
            key: key.clone(),
            video_path: paths.video_path(key),
            audio_path: paths.audio_path(key),
            metadata_json,
        });
    }

    let outcome: PackOutcome =
        pack_shards(&records, &paths.shards_dir(), config.package.shard_size)?;
    for (key, reason) in &outcome.skipped {
        manifest.note(key, "package", &format!("skipped: {reason}"))?;
    }
    for key in &outcome.packed_keys {
        if manifest.status(key) == Some(StageStatus::Synthesized) {
            manifest.advance(key, StageStatus::Packaged)?;
            summary.succeeded += 1;
        }
        summary.processed += 1;
    }
    write_json(&paths.counts_path(), &manifest.counts())?;
    Ok(summary)
}

/// The named pipeline stages, in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mine,
    Fetch,
    Annotate,
    Filter,
    Synthesize,
    Package,
}

pub const ALL_STAGES: [Stage; 6] = [
    Stage::Mine,
    Stage::Fetch,
    Stage::Annotate,
    Stage::Filter,
    Stage::Synthesize,
    Stage::Package,
];

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Mine => "mine",
            Stage::Fetch => "fetch",
            Stage::Annotate => "annotate",
            Stage::Filter => "filter",
            Stage::Synthesize => "synthesize",
            Stage::Package => "package",
        }
    }

    /// The status a sample must hold for this stage to pick it up; `None`
    /// for the entry stage, which reads external input.
    pub fn source_status(self) -> Option<StageStatus> {
        match self {
            Stage::Mine => None,
            Stage::Fetch => Some(StageStatus::Mined),
            Stage::Annotate => Some(StageStatus::Fetched),
            Stage::Filter => Some(StageStatus::Annotated),
            Stage::Synthesize => Some(StageStatus::Filtered),
            Stage::Package => Some(StageStatus::Synthesized),
        }
    }
}

/// Runs one named stage with the stub fetcher for media acquisition when in
/// stub mode and the command fetcher otherwise.
pub fn run_stage(
    stage: Stage,
    config: &Config,
    paths: &RunPaths,
    manifest: &mut RunManifest,
    backends: &BackendSet,
    options: &StageOptions,
) -> Result<StageSummary> {
    match stage {
        Stage::Mine => {
            let mined = run_mine(config, paths, manifest, backends, options)?;
            Ok(StageSummary {
                stage: "mine".into(),
                pending: mined.lines,
                processed: mined.mined + mined.rejects.values().sum::<usize>(),
                succeeded: mined.mined,
                failed: 0,
            })
        }
        Stage::Fetch => {
            let fetcher: Box<dyn MediaFetcher> = match config.backends.mode {
                BackendMode::Stub => Box::new(StubFetcher),
                BackendMode::Http => Box::new(CommandFetcher::from_config(config)),
            };
            run_fetch(config, paths, manifest, fetcher.as_ref(), options)
        }
        Stage::Annotate => run_annotate(config, paths, manifest, backends, options),
        Stage::Filter => run_filter(config, paths, manifest, backends, options),
        Stage::Synthesize => run_synthesize(config, paths, manifest, backends, options),
        Stage::Package => run_package(config, paths, manifest, options),
    }
}
