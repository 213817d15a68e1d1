//! Resumable run state: an append-only, line-delimited JSON event log per
//! run, replayed on open. A sample's status only ever advances through the
//! stage order or moves to a terminal failure, so re-running a stage skips
//! completed samples and interrupted runs continue where they stopped.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pipeline stage statuses in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Mined,
    Fetched,
    Annotated,
    Filtered,
    Synthesized,
    Packaged,
}

pub const ALL_STATUSES: [StageStatus; 6] = [
    StageStatus::Mined,
    StageStatus::Fetched,
    StageStatus::Annotated,
    StageStatus::Filtered,
    StageStatus::Synthesized,
    StageStatus::Packaged,
];

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Mined => "mined",
            StageStatus::Fetched => "fetched",
            StageStatus::Annotated => "annotated",
            StageStatus::Filtered => "filtered",
            StageStatus::Synthesized => "synthesized",
            StageStatus::Packaged => "packaged",
        }
    }

    /// The status a sample must hold before advancing to this one; `None`
    /// for the entry status.
    pub fn predecessor(self) -> Option<StageStatus> {
        let i = ALL_STATUSES.iter().position(|s| *s == self).expect("status listed");
        i.checked_sub(1).map(|p| ALL_STATUSES[p])
    }
}

impl std::fmt::Display for StageStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest event body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventEntry {
    /// The sample reached `status`.
    Advanced { status: StageStatus },
    /// The sample failed terminally at `stage` for `reason`.
    Failed { stage: String, reason: String },
    /// Free-form annotation attached to a sample; changes no state.
    Note { stage: String, message: String },
}

/// One line of the manifest log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub seq: u64,
    pub sample_id: String,
    #[serde(flatten)]
    pub entry: EventEntry,
}

/// Current state of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleState {
    Advanced(StageStatus),
    Failed { stage: String, reason: String },
}

impl SampleState {
    pub fn status(&self) -> Option<StageStatus> {
        match self {
            SampleState::Advanced(s) => Some(*s),
            SampleState::Failed { .. } => None,
        }
    }

    /// The status string as recorded, "failed:stage:reason" for failures.
    pub fn label(&self) -> String {
        match self {
            SampleState::Advanced(s) => s.as_str().to_string(),
            SampleState::Failed { stage, reason } => format!("failed:{stage}:{reason}"),
        }
    }
}

/// Aggregate view of a manifest: samples currently at each status, terminal
/// failures by label, and how many samples ever reached each status.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub current: BTreeMap<String, usize>,
    pub reached: BTreeMap<String, usize>,
    pub failed: BTreeMap<String, usize>,
}

/// The append-only run manifest. One writer per run; opening replays the
/// log and enforces the same transition rules that writes do, so a replayed
/// manifest always equals the live one.
#[derive(Debug)]
pub struct RunManifest {
    run_id: String,
    path: PathBuf,
    file: File,
    next_seq: u64,
    states: BTreeMap<String, SampleState>,
    reached: BTreeMap<StageStatus, usize>,
}

impl RunManifest {
    /// Opens a manifest log, creating it when absent, and replays any
    /// existing events.
    pub fn open(path: &Path, run_id: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut manifest = RunManifest {
            run_id: run_id.to_string(),
            path: path.to_path_buf(),
            file: OpenOptions::new().create(true).append(true).open(path)?,
            next_seq: 1,
            states: BTreeMap::new(),
            reached: BTreeMap::new(),
        };
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: ManifestEvent = serde_json::from_str(&line)?;
            if event.seq != manifest.next_seq {
                return Err(Error::InvalidInput(format!(
                    "manifest {}: event seq {} where {} was expected",
                    path.display(),
                    event.seq,
                    manifest.next_seq
                )));
            }
            manifest.apply(&event)?;
            manifest.next_seq += 1;
        }
        Ok(manifest)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn apply(&mut self, event: &ManifestEvent) -> Result<()> {
        match &event.entry {
            EventEntry::Advanced { status } => {
                self.check_advance(&event.sample_id, *status)?;
                self.states.insert(event.sample_id.clone(), SampleState::Advanced(*status));
                *self.reached.entry(*status).or_insert(0) += 1;
            }
            EventEntry::Failed { stage, reason } => {
                self.check_fail(&event.sample_id)?;
                self.states.insert(
                    event.sample_id.clone(),
                    SampleState::Failed { stage: stage.clone(), reason: reason.clone() },
                );
            }
            EventEntry::Note { .. } => {}
        }
        Ok(())
    }

    fn check_advance(&self, sample_id: &str, status: StageStatus) -> Result<()> {
        let held = match self.states.get(sample_id) {
            None => None,
            Some(SampleState::Advanced(s)) => Some(*s),
            Some(failed @ SampleState::Failed { .. }) => {
                return Err(Error::ManifestRegression {
                    sample_id: sample_id.to_string(),
                    from: failed.label(),
                    to: status.as_str().to_string(),
                })
            }
        };
        if held == status.predecessor() {
            Ok(())
        } else {
            Err(Error::ManifestRegression {
                sample_id: sample_id.to_string(),
                from: held.map(|s| s.as_str().to_string()).unwrap_or_else(|| "absent".into()),
                to: status.as_str().to_string(),
            })
        }
    }

    fn check_fail(&self, sample_id: &str) -> Result<()> {
        match self.states.get(sample_id) {
            Some(SampleState::Advanced(_)) => Ok(()),
            Some(failed @ SampleState::Failed { .. }) => Err(Error::ManifestRegression {
                sample_id: sample_id.to_string(),
                from: failed.label(),
                to: "failed".into(),
            }),
            None => Err(Error::InvalidInput(format!(
                "cannot fail unknown sample {sample_id}"
            ))),
        }
    }

    fn append(&mut self, sample_id: &str, entry: EventEntry) -> Result<()> {
        let event = ManifestEvent {
            seq: self.next_seq,
            sample_id: sample_id.to_string(),
            entry,
        };
        self.apply(&event)?;
        let mut line = serde_json::to_string(&event)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.next_seq += 1;
        Ok(())
    }

    /// Records that a sample reached `status`. The first status must be the
    /// entry status; later ones must follow their predecessor exactly.
    pub fn advance(&mut self, sample_id: &str, status: StageStatus) -> Result<()> {
        self.append(sample_id, EventEntry::Advanced { status })
    }

    /// Marks a known sample as terminally failed.
    pub fn fail(&mut self, sample_id: &str, stage: &str, reason: &str) -> Result<()> {
        self.append(
            sample_id,
            EventEntry::Failed { stage: stage.to_string(), reason: reason.to_string() },
        )
    }

    /// Attaches a free-form note to a sample.
    pub fn note(&mut self, sample_id: &str, stage: &str, message: &str) -> Result<()> {
        self.append(
            sample_id,
            EventEntry::Note { stage: stage.to_string(), message: message.to_string() },
        )
    }

    pub fn state(&self, sample_id: &str) -> Option<&SampleState> {
        self.states.get(sample_id)
    }

    pub fn status(&self, sample_id: &str) -> Option<StageStatus> {
        self.states.get(sample_id).and_then(SampleState::status)
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.states.contains_key(sample_id)
    }

    /// Sample ids currently at `status`, in sorted order.
    pub fn samples_at(&self, status: StageStatus) -> Vec<String> {
        self.states
            .iter()
            .filter(|(_, state)| state.status() == Some(status))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Sample ids currently at or beyond `status`, in sorted order.
    pub fn samples_at_or_beyond(&self, status: StageStatus) -> Vec<String> {
        self.states
            .iter()
            .filter(|(_, state)| state.status().is_some_and(|s| s >= status))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn counts(&self) -> ManifestCounts {
        let mut counts = ManifestCounts::default();
        for state in self.states.values() {
            match state {
                SampleState::Advanced(s) => {
                    *counts.current.entry(s.as_str().to_string()).or_insert(0) += 1;
                }
                SampleState::Failed { .. } => {
                    *counts.failed.entry(state.label()).or_insert(0) += 1;
                }
            }
        }
        for (status, n) in &self.reached {
            counts.reached.insert(status.as_str().to_string(), *n);
        }
        counts
    }

    /// How many samples ever reached `status`.
    pub fn reached(&self, status: StageStatus) -> usize {
        self.reached.get(&status).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(dir: &tempfile::TempDir) -> RunManifest {
        RunManifest::open(&dir.path().join("manifest.ldjson"), "test-run").unwrap()
    }

    #[test]
    fn advances_through_the_stage_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = open(&dir);
        m.advance("s1", StageStatus::Mined).unwrap();
        m.advance("s1", StageStatus::Fetched).unwrap();
        assert_eq!(m.status("s1"), Some(StageStatus::Fetched));
        assert_eq!(m.samples_at(StageStatus::Fetched), vec!["s1".to_string()]);
        assert!(m.samples_at(StageStatus::Mined).is_empty());
    }

    #[test]
    fn rejects_regressions_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = open(&dir);
        m.advance("s1", StageStatus::Mined).unwrap();
        // Entering anywhere but the entry status is rejected.
        assert!(matches!(
            m.advance("s2", StageStatus::Fetched),
            Err(Error::ManifestRegression { .. })
        ));
        // Re-recording the held status is rejected.
        assert!(m.advance("s1", StageStatus::Mined).is_err());
        // Skipping a stage is rejected.
        assert!(m.advance("s1", StageStatus::Annotated).is_err());
        // Moving backwards is rejected.
        m.advance("s1", StageStatus::Fetched).unwrap();
        assert!(m.advance("s1", StageStatus::Mined).is_err());
    }

    #[test]
    fn failure_is_terminal() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = open(&dir);
        m.advance("s1", StageStatus::Mined).unwrap();
        m.fail("s1", "fetch", "missing-video").unwrap();
        assert_eq!(m.status("s1"), None);
        assert_eq!(m.state("s1").unwrap().label(), "failed:fetch:missing-video");
        assert!(m.advance("s1", StageStatus::Fetched).is_err());
        assert!(m.fail("s1", "fetch", "again").is_err());
        assert!(m.fail("unknown", "fetch", "x").is_err());
    }

    #[test]
    fn notes_change_no_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = open(&dir);
        m.advance("s1", StageStatus::Mined).unwrap();
        m.note("s1", "package", "media missing, skipped").unwrap();
        assert_eq!(m.status("s1"), Some(StageStatus::Mined));
    }

    #[test]
    fn replay_reconstructs_identical_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.ldjson");
        let mut m = RunManifest::open(&path, "r").unwrap();
        m.advance("a", StageStatus::Mined).unwrap();
        m.advance("b", StageStatus::Mined).unwrap();
        m.advance("a", StageStatus::Fetched).unwrap();
        m.fail("b", "fetch", "missing-audio").unwrap();
        m.note("a", "fetch", "ok").unwrap();
        let live_counts = m.counts();
        let live_states: Vec<_> = ["a", "b"].iter().map(|s| m.state(s).cloned()).collect();
        drop(m);

        let replayed = RunManifest::open(&path, "r").unwrap();
        assert_eq!(replayed.counts(), live_counts);
        let states: Vec<_> = ["a", "b"].iter().map(|s| replayed.state(s).cloned()).collect();
        assert_eq!(states, live_states);
        assert_eq!(replayed.reached(StageStatus::Mined), 2);
        assert_eq!(replayed.reached(StageStatus::Fetched), 1);
    }

    #[test]
    fn reopened_manifest_continues_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.ldjson");
        {
            let mut m = RunManifest::open(&path, "r").unwrap();
            m.advance("a", StageStatus::Mined).unwrap();
        }
        {
            let mut m = RunManifest::open(&path, "r").unwrap();
            m.advance("a", StageStatus::Fetched).unwrap();
        }
        let m = RunManifest::open(&path, "r").unwrap();
        assert_eq!(m.status("a"), Some(StageStatus::Fetched));
        let text = std::fs::read_to_string(&path).unwrap();
        let seqs: Vec<u64> = text
            .lines()
            .map(|l| serde_json::from_str::<ManifestEvent>(l).unwrap().seq)
            .collect();
        assert_eq!(seqs, vec![1, 2]);
    }

    #[test]
    fn corrupt_ordering_is_rejected_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.ldjson");
        std::fs::write(
            &path,
            "{\"seq\":1,\"sample_id\":\"a\",\"kind\":\"advanced\",\"status\":\"mined\"}\n{\"seq\":3,\"sample_id\":\"a\",\"kind\":\"advanced\",\"status\":\"fetched\"}\n",
        )
        .unwrap();
        assert!(RunManifest::open(&path, "r").is_err());
    }

    #[test]
    fn counts_cover_current_reached_and_failed() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = open(&dir);
        for id in ["a", "b", "c"] {
            m.advance(id, StageStatus::Mined).unwrap();
        }
        m.advance("a", StageStatus::Fetched).unwrap();
        m.fail("c", "fetch", "missing-video").unwrap();
        let counts = m.counts();
        assert_eq!(counts.current.get("mined"), Some(&1));
        assert_eq!(counts.current.get("fetched"), Some(&1));
        assert_eq!(counts.reached.get("mined"), Some(&3));
        assert_eq!(counts.failed.get("failed:fetch:missing-video"), Some(&1));
    }

    #[test]
    fn status_order_supports_at_or_beyond() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = open(&dir);
        m.advance("a", StageStatus::Mined).unwrap();
        m.advance("b", StageStatus::Mined).unwrap();
        m.advance("b", StageStatus::Fetched).unwrap();
        assert_eq!(m.samples_at_or_beyond(StageStatus::Mined).len(), 2);
        assert_eq!(m.samples_at_or_beyond(StageStatus::Fetched), vec!["b".to_string()]);
        assert_eq!(StageStatus::Packaged.predecessor(), Some(StageStatus::Synthesized));
        assert_eq!(StageStatus::Mined.predecessor(), None);
    }
}
