//! Corpus packaging: fixed-size tar shards in which each sample's video,
//! audio, and metadata appear as adjacent entries sharing a key prefix, so
//! a sequential reader reassembles samples without an index.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::DedupedLabel;
use crate::error::{Error, Result};
use crate::synth::{SemanticDescriptors, TaskKind};

/// Samples per shard; only the final shard may hold fewer.
pub const SHARD_SIZE: usize = 4096;

/// The metadata document stored as `<key>.json` beside each sample's media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub key: String,
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub duration_s: f64,
    /// The mined caption line, brackets included.
    pub closed_caption: String,
    /// The caption text with brackets stripped and whitespace collapsed.
    pub content: String,
    pub audio_caption: String,
    pub tags: Vec<DedupedLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub music_caption: Option<String>,
    /// The synthesized answer text.
    pub caption: String,
    /// The full tagged target string.
    pub target: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub semantic: Option<SemanticDescriptors>,
    pub task_counts: BTreeMap<TaskKind, usize>,
    pub generator_calls: u32,
}

/// One sample queued for packaging.
#[derive(Debug, Clone)]
pub struct PackRecord {
    pub key: String,
    pub video_path: PathBuf,
    pub audio_path: PathBuf,
    pub metadata_json: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub index: usize,
    pub path: PathBuf,
    pub keys: Vec<String>,
}

/// Result of a packaging pass: the shards written and any records skipped
/// because their media files were missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PackOutcome {
    pub shards: Vec<ShardInfo>,
    pub packed_keys: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

pub fn shard_file_name(index: usize) -> String {
    format!("shard-{index:05}.tar")
}

fn tar_header(name: &str, size: u64) -> tar::Header {
    let mut header = tar::Header::new_ustar();
    header.set_path(name).expect("entry names are short ascii");
    header.set_size(size);
    header.set_mode(0o644);
    header.set_uid(0);
    header.set_gid(0);
    header.set_mtime(0);
    header.set_cksum();
    header
}

/// Packs records into `shard_size`-sample tar files under `out_dir`,
/// named `shard-00000.tar` onward. Records are sorted by key; duplicate
/// keys are an error. A record whose media is missing on disk is skipped
/// and reported, never packed partially.
pub fn pack_shards(records: &[PackRecord], out_dir: &Path, shard_size: usize) -> Result<PackOutcome> {
    if shard_size == 0 {
        return Err(Error::InvalidInput("shard size must be positive".into()));
    }
    let mut sorted: Vec<&PackRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    for pair in sorted.windows(2) {
        if pair[0].key == pair[1].key {
            return Err(Error::InvalidInput(format!("duplicate shard key {:?}", pair[0].key)));
        }
    }

    let mut outcome = PackOutcome::default();
    let mut ready: Vec<&PackRecord> = Vec::with_capacity(sorted.len());
    for record in sorted {
        if !record.video_path.is_file() {
            outcome.skipped.push((record.key.clone(), "missing-video-file".into()));
        } else if !record.audio_path.is_file() {
            outcome.skipped.push((record.key.clone(), "missing-audio-file".into()));
        } else {
            ready.push(record);
        }
    }

    std::fs::create_dir_all(out_dir)?;
    for (index, group) in ready.chunks(shard_size).enumerate() {
        let path = out_dir.join(shard_file_name(index));
        let mut builder = tar::Builder::new(std::fs::File::create(&path)?);
        let mut keys = Vec::with_capacity(group.len());
        for record in group {
            let video = std::fs::read(&record.video_path)?;
            let audio = std::fs::read(&record.audio_path)?;
            let entries: [(&str, &[u8]); 3] = [
                ("mp4", &video),
                ("wav", &audio),
                ("json", &record.metadata_json),
            ];
            for (ext, bytes) in entries {
                let name = format!("{}.{ext}", record.key);
                let header = tar_header(&name, bytes.len() as u64);
                builder.append(&header, bytes)?;
            }
            keys.push(record.key.clone());
            outcome.packed_keys.push(record.key.clone());
        }
        builder.into_inner()?.sync_all()?;
        outcome.shards.push(ShardInfo { index, path, keys });
    }
    Ok(outcome)
}

/// One sample read back from a shard: its files keyed by extension.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSample {
    pub key: String,
    pub files: BTreeMap<String, Vec<u8>>,
}

/// Reads a shard back into per-key samples, verifying that entries for a
/// key are adjacent and that every sample carries mp4, wav, and json parts.
pub fn read_shard(path: &Path) -> Result<Vec<ShardSample>> {
    let mut archive = tar::Archive::new(std::fs::File::open(path)?);
    let mut samples: Vec<ShardSample> = Vec::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.to_string_lossy().into_owned();
        let (key, ext) = name.rsplit_once('.').ok_or_else(|| {
            Error::InvalidInput(format!("shard entry without extension: {name:?}"))
        })?;
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes)?;
        match samples.last_mut() {
            Some(sample) if sample.key == key => {
                if sample.files.insert(ext.to_string(), bytes).is_some() {
                    return Err(Error::InvalidInput(format!("duplicate entry {name:?}")));
                }
            }
            _ => {
                if samples.iter().any(|s| s.key == key) {
                    return Err(Error::InvalidInput(format!(
                        "entries for key {key:?} are not adjacent"
                    )));
                }
                let mut files = BTreeMap::new();
                files.insert(ext.to_string(), bytes);
                samples.push(ShardSample { key: key.to_string(), files });
            }
        }
    }
    for sample in &samples {
        for ext in ["mp4", "wav", "json"] {
            if !sample.files.contains_key(ext) {
                return Err(Error::InvalidInput(format!(
                    "sample {:?} is missing its {ext} entry",
                    sample.key
                )));
            }
        }
    }
    Ok(samples)
}
