//! Seed plumbing: every random draw in a run descends from one top-level
//! seed through stable hashing, so any sample can be replayed exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over arbitrary bytes; stable across platforms and versions.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mix(seed: u64, tag: &[u8]) -> u64 {
    let mut bytes = Vec::with_capacity(8 + tag.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(tag);
    fnv1a(&bytes)
}

/// RNG for a named subsystem (weight init, dataset, splits, ...).
pub fn subsystem_rng(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, name.as_bytes()))
}

/// RNG for the Gumbel noise of one (iteration, cell, edge) triple.
/// Reseeding per triple makes every sample independent of evaluation order.
pub fn noise_rng(seed: u64, iteration: u64, cell: u64, edge: u64) -> ChaCha12Rng {
    let mut tag = Vec::with_capacity(30);
    tag.extend_from_slice(b"noise");
    tag.extend_from_slice(&iteration.to_le_bytes());
    tag.extend_from_slice(&cell.to_le_bytes());
    tag.extend_from_slice(&edge.to_le_bytes());
    ChaCha12Rng::seed_from_u64(mix(seed, &tag))
}
