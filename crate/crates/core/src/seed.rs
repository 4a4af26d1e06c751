//! Stable seed derivation. Every stochastic component draws from a ChaCha
//! stream whose seed is a pure function of its inputs, so results do not
//! depend on thread scheduling or process state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a hasher used to mix seed components.
#[derive(Debug, Clone, Copy)]
pub struct SeedMixer(u64);

impl Default for SeedMixer {
    fn default() -> Self {
        Self(FNV_OFFSET)
    }
}

impl SeedMixer {
    pub fn new(domain: &str) -> Self {
        Self::default().str(domain)
    }

    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn str(self, s: &str) -> Self {
        // length prefix keeps ("ab","c") distinct from ("a","bc")
        self.u64(s.len() as u64).bytes(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn finish(self) -> u64 {
        // splitmix64 finalizer to spread low-entropy inputs
        let mut z = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.finish())
    }
}
