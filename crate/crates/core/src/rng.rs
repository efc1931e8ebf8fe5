//! Named, counter-based random streams.
//!
//! All randomness is derived from one root seed. A stream is identified by a
//! name (`"theta"`, `"env"`, `"init"`, `"eval"`, ...) and an index such as the
//! episode number, so concurrent rollouts never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a; only needs to be stable, not strong.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed(&self, name: &str, index: u64) -> u64 {
        mix64(mix64(self.root ^ name_hash(name)).wrapping_add(mix64(index)))
    }

    pub fn stream(&self, name: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.seed(name, index))
    }

    /// A child tree, e.g. one per training seed or per suite.
    pub fn child(&self, name: &str, index: u64) -> SeedTree {
        SeedTree { root: self.seed(name, index) }
    }
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
