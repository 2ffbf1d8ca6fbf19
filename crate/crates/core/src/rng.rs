//! Named random sub-streams derived from a single experiment seed.
//!
//! Every consumer of randomness asks for its own stream by name (and an
//! optional index, e.g. the task position), so changing how one component
//! draws numbers never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream names used across the crate.
pub mod names {
    pub const TASK_GEN: &str = "task-gen";
    pub const TEST_GEN: &str = "test-gen";
    pub const INIT: &str = "init";
    pub const ROLLOUT: &str = "rollout";
    pub const BUFFER: &str = "buffer";
    pub const SAMPLING: &str = "sampling";
    pub const FISHER: &str = "fisher";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    root: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, name: &str) -> Stream {
        self.indexed(name, 0)
    }

    pub fn indexed(&self, name: &str, index: u64) -> Stream {
        ChaCha8Rng::seed_from_u64(derive(self.root, name, index))
    }
}

fn derive(root: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name, then splitmix64 mixing with the root and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut x = splitmix(root ^ h);
    x = splitmix(x ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
