//! Seeded, stream-addressed randomness with cross-platform stable output.
//!
//! All randomized operations draw from ChaCha8 keyed by a `(seed, stream)`
//! pair. The key schedule and every distribution transform live in this file
//! and never change, so a given `(seed, stream)` yields the same draw
//! sequence on every platform, independent of thread count or evaluation
//! order.
//!
//! Stream id assignment, shared by the whole crate so that independent
//! consumers of one seed never collide:
//!
//! | stream range            | used for                                  |
//! |-------------------------|-------------------------------------------|
//! | `c` (0 .. 2^32)         | per-class mechanism draws for class `c`   |
//! | `STREAM_TRAIN_BASE + c` | synthetic mixture training samples        |
//! | `STREAM_TEST_BASE + c`  | synthetic mixture held-out samples        |
//! | `STREAM_IMBALANCE_BASE + c` | within-class subsampling              |
//! | `STREAM_CENTERS`        | mixture center construction               |
//! | `STREAM_DISTRACTORS`    | synthetic public distractor candidates    |

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const STREAM_TRAIN_BASE: u64 = 0x0000_0001_0000_0000;
pub const STREAM_TEST_BASE: u64 = 0x0000_0002_0000_0000;
pub const STREAM_IMBALANCE_BASE: u64 = 0x0000_0003_0000_0000;
pub const STREAM_CENTERS: u64 = u64::MAX;
pub const STREAM_DISTRACTORS: u64 = u64::MAX - 1;

/// Identifies one reproducible draw sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream used by per-class mechanism draws (noise, selection) for `class`.
    pub fn for_class(seed: u64, class: u32) -> Self {
        Self::new(seed, class as u64)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator bound to one `(seed, stream)` pair.
pub struct DeterministicRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl DeterministicRng {
    /// Keys ChaCha8 from the state: two splitmix64 chains, one seeded with
    /// `seed` and one with `stream` offset by a domain constant, interleaved
    /// into the 256-bit key.
    pub fn from_state(state: RngState) -> Self {
        let mut a = state.seed;
        let mut b = state.stream ^ 0xD1B5_4A32_D192_ED03;
        let mut key = [0u8; 32];
        for half in 0..2 {
            let base = half * 16;
            key[base..base + 8].copy_from_slice(&splitmix64(&mut a).to_le_bytes());
            key[base + 8..base + 16].copy_from_slice(&splitmix64(&mut b).to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(key),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased uniform index in [0, n), by rejection.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_index requires n > 0");
        let n = n as u64;
        let rem = (u64::MAX % n + 1) % n; // 2^64 mod n
        let threshold = 0u64.wrapping_sub(rem); // 2^64 - rem, or 0 when rem == 0
        loop {
            let x = self.next_u64();
            if rem == 0 || x < threshold {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal draw via the Box-Muller transform. Draws are produced
    /// in pairs and the second of each pair is cached, so a sequence of k
    /// normals always consumes the same underlying words regardless of how
    /// the calls are batched.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Standard Gumbel draw, -ln(-ln U), with U clamped away from {0, 1}.
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform().clamp(1e-12, 1.0 - 1e-12);
        -(-u.ln()).ln()
    }
}
