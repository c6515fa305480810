//! Reproducible per-agent random streams.
//!
//! Every `(phase, agent)` pair owns one ChaCha8 stream. The 256-bit key is
//! expanded from the master seed (SplitMix64, four outputs) and the 64-bit
//! stream id is `mix64(phase << 40 | agent)`, where `mix64` is the SplitMix64
//! finalizer. `mix64` is a bijection, so distinct pairs (agent < 2^40) never
//! share a stream, and no stream depends on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPlan {
    pub master_seed: u64,
}

impl RngPlan {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        key
    }

    pub fn stream_id(phase: usize, agent: usize) -> u64 {
        debug_assert!((agent as u64) < (1 << 40));
        mix64(((phase as u64) << 40) | agent as u64)
    }

    /// The stream owned by `agent` in `phase`.
    pub fn stream(&self, phase: usize, agent: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(Self::stream_id(phase, agent));
        rng
    }

    /// A child plan for an independent experiment trial.
    pub fn derive(&self, label: u64) -> RngPlan {
        RngPlan::new(mix64(self.master_seed ^ mix64(label.wrapping_add(0xD134_2543_DE82_EF95))))
    }
}
