//! Structured seed derivation. Every random stream in an experiment is
//! named by `(run seed, purpose, index)` so streams for different purposes
//! can never collide and any single episode can be regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Validation,
    Test,
    /// Predictor training data; stage 0 is the random-policy dataset.
    Train(u32),
    /// Extra random-policy data for the doubled-data baseline.
    RandomExtra,
    /// Policy-optimization rollouts of one meta-iteration.
    PolicyRollout(u32),
    /// Network initialization and minibatch order.
    Optimizer(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Validation => 1,
            Purpose::Test => 2,
            Purpose::RandomExtra => 3,
            Purpose::Train(k) => 0x100 + k as u64,
            Purpose::PolicyRollout(k) => 0x200 + k as u64,
            Purpose::Optimizer(k) => 0x300 + k as u64,
        }
    }
}

/// Identifier stored with an episode: purpose in the high bits, index in
/// the low 40. Distinct purposes give disjoint id ranges.
pub fn episode_id(purpose: Purpose, index: u64) -> u64 {
    debug_assert!(index < 1 << 40);
    (purpose.tag() << 40) | index
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(run_seed: u64, id: u64) -> u64 {
    splitmix(splitmix(run_seed) ^ id)
}

pub fn stream(run_seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, episode_id(purpose, index)))
}
