//! Seed plumbing. Every stochastic operation takes an [`RngState`] by value
//! and derives its own generator, so no generator is ever shared.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState(pub u64);

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState(seed)
    }

    /// Derive an independent child state for `(stream, index)`.
    pub fn fork(self, stream: u64, index: u64) -> Self {
        let mut z = splitmix(self.0 ^ splitmix(stream.wrapping_add(0x9E37_79B9)));
        z = splitmix(z ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        RngState(z)
    }

    pub fn generator(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
