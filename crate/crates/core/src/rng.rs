//! Splittable, reproducible random streams.
//!
//! A stream is identified by a root seed and a derivation path of
//! `(index, tag)` pairs. The path is folded into a 64-bit key with a
//! splitmix finalizer, and the key seeds a ChaCha8 generator. Deriving a
//! child never touches the parent's state, so any work item can rebuild its
//! stream from `(seed, path)` alone.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Substream tags used across the crate.
pub mod tags {
    pub const SAMPLE: u64 = 0x5341;
    pub const REPLICA: u64 = 0x5245;
    pub const CLUSTER: u64 = 0x434c;
    pub const LOCATIONS: u64 = 0x4c4f;
    pub const TAIL: u64 = 0x5441;
    pub const ATTEMPT: u64 = 0x4154;
    pub const EXPERIMENT: u64 = 0x4558;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream; see the module docs.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    key: u64,
    depth: u32,
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Root stream for `seed` (empty path).
    pub fn new(seed: u64) -> Self {
        Self::from_key(seed, splitmix(seed), 0)
    }

    fn from_key(seed: u64, key: u64, depth: u32) -> Self {
        let mut bytes = [0u8; 32];
        let mut s = key;
        for chunk in bytes.chunks_exact_mut(8) {
            s = splitmix(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        Self { seed, key, depth, rng: ChaCha8Rng::from_seed(bytes) }
    }

    /// Child stream at `path + [(index, tag)]`. Pure in `self`'s identity:
    /// the parent's consumption state does not matter.
    pub fn derive(&self, index: u64, tag: u64) -> Self {
        let step = splitmix(index ^ splitmix(tag.wrapping_mul(GOLDEN) ^ u64::from(self.depth + 1)));
        Self::from_key(self.seed, splitmix(self.key ^ step), self.depth + 1)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on the open interval (0, 1), with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Fair coin.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.rng.next_u64() >> 63 == 1
    }

    /// Fair sign, `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.coin() {
            1.0
        } else {
            -1.0
        }
    }

    /// Unit-mean exponential.
    #[inline]
    pub fn exponential(&mut self) -> f64 {
        -self.uniform().ln()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
