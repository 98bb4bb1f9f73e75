//! Hierarchical seed derivation.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream whose key
//! is a pure function of the master seed and a short path of integers, e.g.
//! `(seed, NOISE, neuron)`. Streams are never shared between work items, so a
//! result only depends on `(seed, path)` and never on how work is scheduled.
//!
//! Derivation path used throughout:
//!
//! ```text
//! master seed
//!   -> stage tag (POSITIONS, COUPLINGS, ...)        derive(seed, &[stage])
//!   -> replicate / iteration index                  derive(seed, &[stage, rep])
//!   -> item index (neuron, particle, draw, row)     stream(seed, &[stage, item])
//!   -> step index: k-th draw of the item's stream
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POSITIONS: u64 = 0x01;
pub const COUPLINGS: u64 = 0x02;
pub const INITIAL: u64 = 0x03;
pub const NOISE: u64 = 0x04;
pub const GAUSSIAN: u64 = 0x05;
pub const SUBSAMPLE: u64 = 0x06;
pub const MEANFIELD: u64 = 0x07;
pub const COMPARE: u64 = 0x08;
pub const REPLICATE: u64 = 0x09;
pub const PAIRS: u64 = 0x0a;
pub const IDENTITY: u64 = 0x0b;
pub const NETWORK: u64 = 0x0c;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` along `path`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    for (depth, &p) in path.iter().enumerate() {
        h = mix64(h.wrapping_add(GOLDEN.wrapping_mul(depth as u64 + 1)) ^ mix64(p.wrapping_add(GOLDEN)));
    }
    h
}

/// Independent generator for the item at `path` below `seed`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let key = derive(seed, path);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(key.wrapping_add((i as u64).wrapping_mul(GOLDEN))).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
