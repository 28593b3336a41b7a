//! Seed tree for reproducible randomness.
//!
//! Every random stream in a run is a ChaCha8 generator seeded from a path
//! under the replica seed:
//!
//! ```text
//! replica seed
//! ├── DATA / task_id                       dataset generation and partitioning
//! ├── PROFILES                             speed-class assignment
//! ├── SELECT / task_id                     client selection for that task's requests
//! ├── DELAY / task_id / client / counter   duration of one request
//! ├── BATCH / task_id / client / counter   minibatches of one request
//! └── SYNC / round                         availability and partition of a sync round
//! ```
//!
//! `counter` is the per-task dispatch counter (0 for the first request sent
//! for that task). Because a request's streams depend only on its path, the
//! order in which the engine processes events never changes sampled batches.
//! Path components are mixed with SplitMix64, so external tools can rebuild
//! any stream with [`SeedTree::derive`] and `ChaCha8Rng::seed_from_u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 0xD1;
pub const PROFILES: u64 = 0xD2;
pub const SELECT: u64 = 0xD3;
pub const DELAY: u64 = 0xD4;
pub const BATCH: u64 = 0xD5;
pub const SYNC: u64 = 0xD6;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn derive(&self, path: &[u64]) -> u64 {
        path.iter()
            .fold(splitmix64(self.root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
    }

    pub fn rng(&self, path: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(path))
    }

    pub fn request_rng(&self, stream: u64, task: usize, client: usize, counter: u64) -> ChaCha8Rng {
        self.rng(&[stream, task as u64, client as u64, counter])
    }
}
