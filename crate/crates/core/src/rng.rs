//! Counter-based random streams.
//!
//! Every random draw of a particle run is addressed by
//! `(seed, replicate, epoch, lane, particle, counter)`. The output is a pure
//! function of that address, so schedules that evaluate particles in a
//! different order (or on a different number of workers) see identical draws.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const COUNTER_OFFSET: u64 = 0x6a09_e667_f3bc_c909;

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Purpose of a stream within one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lane {
    Initial = 0,
    Selection = 1,
    Mutation = 2,
    Backward = 3,
    Probe = 4,
}

/// Factory for the streams of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomStreams {
    seed: u64,
    replicate: u64,
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        Self::for_replicate(seed, 0)
    }

    pub fn for_replicate(seed: u64, replicate: u64) -> Self {
        Self { seed, replicate }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    /// The stream owned by `particle` for `lane` at `epoch`.
    pub fn stream(&self, epoch: usize, lane: Lane, particle: usize) -> StreamRng {
        let mut key = mix64(self.seed ^ 0x243f_6a88_85a3_08d3);
        key = mix64(key ^ self.replicate);
        key = mix64(key ^ ((epoch as u64) << 3 | lane as u64));
        key = mix64(key ^ particle as u64);
        StreamRng { key, counter: 0 }
    }

    /// A stream not tied to any particle, e.g. for drawing backward paths.
    pub fn auxiliary(&self, tag: u64) -> StreamRng {
        self.stream(usize::MAX, Lane::Probe, tag as usize)
    }
}

/// Keyed counter generator: draw `c` is `mix(mix(c * gamma + offset) ^ key)`.
///
/// Distinct keys do not produce shifted copies of one sequence, unlike plain
/// SplitMix64 seeded at different points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn from_key(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(c.wrapping_mul(GOLDEN_GAMMA).wrapping_add(COUNTER_OFFSET)) ^ self.key)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
