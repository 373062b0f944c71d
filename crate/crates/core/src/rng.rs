//! Counter-based random streams.
//!
//! A stream is fully determined by `(seed, stream_id)`; drawing from it never
//! touches shared state, so replicate-parallel simulations are
//! schedule-independent. The generator is a splitmix-style counter mixer:
//! state advances by a fixed odd constant and每 output is a finalizer of the
//! state, so distinct `(seed, stream_id)` pairs map to distinct counter
//! sequences.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer; bijective on u64.
#[inline(always)]
pub(crate) fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a key with a tag into a fresh 64-bit key.
#[inline(always)]
pub(crate) fn mix2(a: u64, b: u64) -> u64 {
    mix(mix(a).wrapping_add(b.wrapping_mul(GOLDEN)))
}

/// A reproducible random stream identified by `(seed, stream_id)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    state: u64,
}

/// Derive the stream for one replicate. Distinct replicates give
/// statistically independent streams; the same pair always replays the same
/// byte sequence.
pub fn derive_stream(seed: u64, replicate: u64) -> RngStream {
    RngStream::new(seed, replicate)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream {
            seed,
            stream_id,
            state: mix2(seed, stream_id),
        }
    }

    /// Child stream keyed off this stream's identity plus a tag. Used to hand
    /// each (point, replicate) pair of an estimator its own stream.
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: mix2(self.stream_id, tag),
            state: mix2(mix2(self.seed, self.stream_id), tag),
        }
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via widening multiply.
    #[inline(always)]
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl rand_core::RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (RngStream::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        RngStream::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = RngStream::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
