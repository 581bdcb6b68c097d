//! Deterministic character n-gram hashing embedder.
//!
//! Text is lowercased, whitespace runs collapse to one space, and the result
//! is padded with a space on each side. Every character trigram is hashed
//! with the seed into one of `dim` buckets with a hash-derived sign, and the
//! bucket vector is L2-normalized. Strings sharing many trigrams land close
//! together, which gives dedup and clustering real structure offline.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::vector::Vector;

const NGRAM: usize = 3;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Lowercased, whitespace-collapsed, space-padded form of `text`.
pub fn canonical_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push(' ');
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.ends_with(' ') {
            out.push(' ');
        }
        pending_space = false;
        out.extend(c.to_lowercase());
    }
    if !out.ends_with(' ') {
        out.push(' ');
    }
    out
}

fn hash_gram(seed: u64, gram: &[char]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut buf = [0u8; 4];
    for c in gram {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    // splitmix64 finalizer; FNV alone leaves low bits poorly mixed.
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Embeds `text` into a unit vector of length `dim` (at least 1). Text that
/// is empty after trimming maps to the zero vector.
pub fn embed_ngrams(text: &str, dim: usize, seed: u64) -> Vector {
    let dim = dim.max(1);
    let canon = canonical_text(text);
    let chars: Vec<char> = canon.chars().collect();
    let mut buckets = vec![0.0f64; dim];
    if chars.len() > 2 {
        for gram in chars.windows(NGRAM) {
            let h = hash_gram(seed, gram);
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            buckets[bucket] += sign;
        }
    }
    let mut v = Vector::new(buckets).expect("bucket counts are finite");
    v.normalize();
    v
}
