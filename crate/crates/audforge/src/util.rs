//! Small helpers shared across modules.

/// 64-bit FNV-1a over raw bytes.
///
/// Used wherever a stable, platform-independent hash is needed (sample seeds,
/// stub payload derivation). `std::hash::DefaultHasher` is explicitly not
/// guaranteed stable across releases, so golden outputs cannot depend on it.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Folds a run seed and a sample identifier into one stable per-sample seed.
pub fn sample_seed(seed: u64, sample_id: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + sample_id.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(sample_id.as_bytes());
    fnv1a(&bytes)
}

/// Whitespace-token count, the unit used by every length bound in the pipeline.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Shortest-round-trip decimal for seconds values in prompts and command
/// lines, so 3.0 renders as "3.0" and 7.25 as "7.25" stably.
pub fn fmt_seconds(value: f64) -> String {
    format!("{value:?}")
}
