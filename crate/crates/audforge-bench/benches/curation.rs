//! Curation hot paths: mining, embedding filters, and shard packing.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use audforge::embedding::{run_filters, EmbeddingVector, FilterCandidate, FilterThresholds};
use audforge::mining::{mine_line, MiningBounds, SubtitleLine};
use audforge::shard::{pack_shards, PackRecord};

fn bench_mine_line(c: &mut Criterion) {
    let bounds = MiningBounds::default();
    let lines: Vec<SubtitleLine> = (0..512)
        .map(|i| {
            let start = i as f64 * 6.0;
            let text = if i % 3 == 0 {
                "(dog barking loudly)".to_string()
            } else if i % 3 == 1 {
                "plain dialogue without brackets".to_string()
            } else {
                format!("(engine sound number {i})")
            };
            SubtitleLine::new("vid", start, start + 4.0, text).unwrap()
        })
        .collect();
    c.bench_function("mine_line_512_lines", |b| {
        b.iter(|| {
            let mut kept = 0;
            for line in &lines {
                if mine_line(black_box(line), &bounds).is_ok() {
                    kept += 1;
                }
            }
            kept
        })
    });
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0) + 3.0).collect()).unwrap()
}

fn bench_run_filters(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let candidates: Vec<FilterCandidate> = (0..1000)
        .map(|_| {
            let text = random_vector(&mut rng, 64);
            FilterCandidate {
                audio: random_vector(&mut rng, 64),
                closed_caption: text.clone(),
                text,
                duration_s: rng.random_range(1.0..10.0),
            }
        })
        .collect();
    let thresholds = FilterThresholds::default();
    c.bench_function("run_filters_1000x64", |b| {
        b.iter(|| run_filters(black_box(&candidates), &thresholds).unwrap())
    });
}

fn bench_pack_shards(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let media_dir = dir.path().join("media");
    std::fs::create_dir_all(&media_dir).unwrap();
    let records: Vec<PackRecord> = (0..256)
        .map(|i| {
            let key = format!("vid_{:09}_{:09}", i * 1000, i * 1000 + 4000);
            let video = media_dir.join(format!("{key}.mp4"));
            let audio = media_dir.join(format!("{key}.wav"));
            std::fs::write(&video, vec![0u8; 512]).unwrap();
            std::fs::write(&audio, vec![0u8; 512]).unwrap();
            PackRecord {
                key: key.clone(),
                video_path: video,
                audio_path: audio,
                metadata_json: format!("{{\"key\":\"{key}\"}}").into_bytes(),
            }
        })
        .collect();
    let out_dir = dir.path().join("shards");
    c.bench_function("pack_shards_256_records", |b| {
        b.iter(|| pack_shards(black_box(&records), &out_dir, 4096).unwrap())
    });
}

criterion_group!(benches, bench_mine_line, bench_run_filters, bench_pack_shards);
criterion_main!(benches);
