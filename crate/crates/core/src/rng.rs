//! Counter-based, splittable random streams.
//!
//! A stream is a `(key, counter)` pair; the n-th output is a bijective mix of
//! the key and n, so any stream can be reconstructed from its key alone.
//! Splitting derives a child key from the parent key and its current counter,
//! which makes every lineage's randomness independent of how replicas or
//! particles are scheduled.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SPLIT_TAG: u64 = 0xd1b5_4a32_d192_ed03;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    /// Root stream for a run seed.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x6a09_e667_f3bc_c908),
            counter: 0,
        }
    }

    /// Independent stream for replica `index` of a run.
    pub fn for_replica(seed: u64, index: u64) -> Self {
        Self {
            key: mix64(mix64(seed ^ 0x6a09_e667_f3bc_c908) ^ mix64(index.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Child stream; advances the parent by one draw.
    pub fn split(&mut self) -> StreamRng {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        StreamRng {
            key: mix64(self.key ^ mix64(c ^ SPLIT_TAG)),
            counter: 0,
        }
    }

    /// Uniform on [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
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
        mix64(self.key ^ mix64(c.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
