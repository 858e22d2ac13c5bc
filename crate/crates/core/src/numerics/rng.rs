//! Seedable random streams.
//!
//! Every stream is a ChaCha12 generator keyed by the 64-bit experiment seed
//! and positioned on a 64-bit stream id. ChaCha output is defined bit-exactly
//! by its reference algorithm, so the same `(seed, stream_id)` pair produces
//! the same sequence on every platform. Stream ids are derived from context
//! labels by [`stream_id`], which lets each client and round own an
//! independent stream without any shared generator state.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Stable 64-bit stream id for `(context, client, round)`.
///
/// The context string is length-prefixed before hashing so that label
/// boundaries cannot shift between the string and the integer fields.
pub fn stream_id(context: &str, client: u64, round: u64) -> u64 {
    let mut h = fnv1a(&(context.len() as u64).to_le_bytes(), FNV_OFFSET);
    h = fnv1a(context.as_bytes(), h);
    h = fnv1a(&client.to_le_bytes(), h);
    h = fnv1a(&round.to_le_bytes(), h);
    splitmix64(h)
}

/// Derives a child seed from a parent seed and a label; used where a whole
/// sub-experiment (rather than one stream) needs its own seed.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(seed ^ stream_id(label, index, 0))
}

/// A deterministic random stream. Not `Sync`-shared: each worker gets its own.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// Stream for a labelled context, optionally scoped to a client and round.
    pub fn derive(seed: u64, context: &str, client: u64, round: u64) -> Self {
        Self::new(seed, stream_id(context, client, round))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform integer in `0..n` without modulo bias. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
