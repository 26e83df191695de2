//! Word tokenization shared by the lexical retrievers, the hashing embedder
//! and the dataset filters.

use std::collections::BTreeSet;

/// Lowercased alphanumeric runs, in order of appearance.
///
/// `"[HEAD] Kanye West"` yields `["head", "kanye", "west"]`.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn word_set(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().collect()
}

/// 64-bit FNV-1a. Stable across platforms and releases, which the hashing
/// embedder relies on for reproducible fingerprints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
