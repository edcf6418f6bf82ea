//! Counter-based normal variates.
//!
//! Draw `k` of stream `s` under key `seed` is a pure function of
//! `(seed, s, k)`: ChaCha8 keyed by `seed`, stream id `s`, block position
//! derived from `k`. Workers can therefore generate any path or step in any
//! order and get the same numbers.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 32-bit words consumed per draw (two `u64`s).
const WORDS_PER_DRAW: u128 = 4;

pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    /// Stream positioned at draw `counter`.
    pub fn new(seed: u64, stream: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(counter as u128 * WORDS_PER_DRAW);
        Self { rng }
    }

    /// Next standard normal (Box–Muller, cosine branch only so each draw
    /// uses exactly one counter slot).
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let u1 = unit_open(self.rng.next_u64());
        let u2 = unit_open(self.rng.next_u64());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Single keyed draw.
pub fn keyed_normal(seed: u64, stream: u64, counter: u64) -> f64 {
    NormalStream::new(seed, stream, counter).next_normal()
}

/// Maps 53 random bits into (0, 1].
#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent sub-seed; used to split one user seed into
/// several roles without correlated streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
