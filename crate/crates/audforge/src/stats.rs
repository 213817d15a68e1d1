//! Corpus reporting: task-kind counts and shares, a coarse category
//! histogram, a tag histogram, and a caption length histogram, emitted as
//! JSON and as a flat three-column CSV.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::EvalCategory;
use crate::shard::SampleMetadata;
use crate::synth::{TaskKind, TaskRecord};
use crate::util::word_count;

/// Caption lengths are bucketed by 10 words; the map key is the bucket
/// floor (0, 10, 20, ...).
pub const CAPTION_LENGTH_BUCKET_WORDS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_samples: usize,
    pub total_records: usize,
    pub task_counts: BTreeMap<TaskKind, usize>,
    pub task_shares: BTreeMap<TaskKind, f64>,
    pub category_histogram: BTreeMap<EvalCategory, usize>,
    pub tag_histogram: BTreeMap<String, usize>,
    pub caption_length_histogram: BTreeMap<usize, usize>,
}

/// Coarse top-level category of a sample, derived from its annotations:
/// music when a music caption or music tag is present, speech when a tag
/// names speech or voice, sound otherwise.
pub fn sample_category(sample: &SampleMetadata) -> EvalCategory {
    if sample.music_caption.is_some()
        || sample.tags.iter().any(|t| t.label.to_lowercase().contains("music"))
    {
        return EvalCategory::Music;
    }
    let speechy = ["speech", "voice", "talking", "speaking"];
    if sample
        .tags
        .iter()
        .any(|t| speechy.iter().any(|w| t.label.to_lowercase().contains(w)))
    {
        return EvalCategory::Speech;
    }
    EvalCategory::Sound
}

/// Builds the corpus report. An empty corpus yields an all-zero report.
pub fn corpus_stats(samples: &[SampleMetadata], records: &[TaskRecord]) -> CorpusStats {
    let mut stats = CorpusStats {
        total_samples: samples.len(),
        total_records: records.len(),
        ..CorpusStats::default()
    };
    for record in records {
        *stats.task_counts.entry(record.kind).or_insert(0) += 1;
    }
    if !records.is_empty() {
        let total = records.len() as f64;
        for (kind, count) in &stats.task_counts {
            stats.task_shares.insert(*kind, *count as f64 / total);
        }
    }
    for sample in samples {
        *stats.category_histogram.entry(sample_category(sample)).or_insert(0) += 1;
        for tag in &sample.tags {
            *stats.tag_histogram.entry(tag.label.clone()).or_insert(0) += 1;
        }
        let words = word_count(&sample.caption);
        let bucket = words / CAPTION_LENGTH_BUCKET_WORDS * CAPTION_LENGTH_BUCKET_WORDS;
        *stats.caption_length_histogram.entry(bucket).or_insert(0) += 1;
    }
    stats
}

/// Flattens the report to `section,key,value` CSV rows in a fixed order.
pub fn stats_to_csv(stats: &CorpusStats) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["section", "key", "value"]).map_err(csv_err)?;
    let mut row = |section: &str, key: &str, value: String| {
        writer.write_record([section, key, &value]).map_err(csv_err)
    };
    row("totals", "samples", stats.total_samples.to_string())?;
    row("totals", "records", stats.total_records.to_string())?;
    for (kind, count) in &stats.task_counts {
        row("task_counts", kind.as_str(), count.to_string())?;
    }
    for (kind, share) in &stats.task_shares {
        row("task_shares", kind.as_str(), format!("{share:.6}"))?;
    }
    for (category, count) in &stats.category_histogram {
        row("category_histogram", category.as_str(), count.to_string())?;
    }
    for (label, count) in &stats.tag_histogram {
        row("tag_histogram", label, count.to_string())?;
    }
    for (bucket, count) in &stats.caption_length_histogram {
        row("caption_length_histogram", &bucket.to_string(), count.to_string())?;
    }
    let bytes = writer.into_inner().map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| crate::Error::InvalidInput(e.to_string()))
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::InvalidInput(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::DedupedLabel;

    fn sample(key: &str, tags: &[&str], music: bool, caption_words: usize) -> SampleMetadata {
        SampleMetadata {
            key: key.into(),
            video_id: "vid".into(),
            start_s: 0.0,
            end_s: 4.0,
            duration_s: 4.0,
            closed_caption: "(x)".into(),
            content: "x".into(),
            audio_caption: "x heard".into(),
            tags: tags
                .iter()
                .map(|t| DedupedLabel { label: (*t).into(), score: 0.5, count: 1 })
                .collect(),
            music_caption: music.then(|| "gentle piano".into()),
            caption: vec!["word"; caption_words].join(" "),
            target: "<think>t</think>\n<answer>a</answer>".into(),
            semantic: None,
            task_counts: BTreeMap::new(),
            generator_calls: 1,
        }
    }

    fn record(kind: TaskKind) -> TaskRecord {
        TaskRecord {
            sample_id: "s".into(),
            kind,
            instruction: "i".into(),
            choices: None,
            correct_index: None,
            target: "t".into(),
        }
    }

    #[test]
    fn empty_corpus_yields_an_empty_report() {
        let stats = corpus_stats(&[], &[]);
        assert_eq!(stats, CorpusStats::default());
        let csv = stats_to_csv(&stats).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("section,key,value\n"));
    }

    #[test]
    fn task_shares_sum_to_one() {
        let records = vec![
            record(TaskKind::Caption),
            record(TaskKind::Caption),
            record(TaskKind::OpenQa),
            record(TaskKind::Mcqa),
        ];
        let stats = corpus_stats(&[], &records);
        assert_eq!(stats.task_counts[&TaskKind::Caption], 2);
        assert!((stats.task_shares[&TaskKind::Caption] - 0.5).abs() < 1e-12);
        let sum: f64 = stats.task_shares.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn categories_follow_tags_and_music_caption() {
        let samples = vec![
            sample("a", &["dog", "bark"], false, 5),
            sample("b", &["music", "piano"], false, 5),
            sample("c", &["rain"], true, 5),
            sample("d", &["speech", "crowd"], false, 5),
        ];
        let stats = corpus_stats(&samples, &[]);
        assert_eq!(stats.category_histogram[&EvalCategory::Sound], 1);
        assert_eq!(stats.category_histogram[&EvalCategory::Music], 2);
        assert_eq!(stats.category_histogram[&EvalCategory::Speech], 1);
        assert_eq!(stats.tag_histogram["music"], 1);
        assert_eq!(stats.tag_histogram["dog"], 1);
    }

    #[test]
    fn caption_lengths_bucket_by_ten_words() {
        let samples = vec![
            sample("a", &[], false, 0),
            sample("b", &[], false, 9),
            sample("c", &[], false, 10),
            sample("d", &[], false, 25),
        ];
        let stats = corpus_stats(&samples, &[]);
        assert_eq!(stats.caption_length_histogram[&0], 2);
        assert_eq!(stats.caption_length_histogram[&10], 1);
        assert_eq!(stats.caption_length_histogram[&20], 1);
    }

    #[test]
    fn csv_rows_cover_every_section() {
        let samples = vec![sample("a", &["dog, loud"], false, 5)];
        let records = vec![record(TaskKind::Caption)];
        let csv = stats_to_csv(&corpus_stats(&samples, &records)).unwrap();
        for section in [
            "totals,samples,1",
            "task_counts,caption,1",
            "task_shares,caption,1.000000",
            "category_histogram,sound,1",
            "caption_length_histogram,0,1",
        ] {
            assert!(csv.contains(section), "missing {section:?} in {csv}");
        }
        // Labels containing commas are quoted, keeping three columns per row.
        assert!(csv.contains("tag_histogram,\"dog, loud\",1"));
    }
}
