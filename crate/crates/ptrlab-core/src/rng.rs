//! Deterministic random-number plumbing.
//!
//! Every stochastic component draws from a ChaCha8 generator seeded from the
//! run seed, with one independent stream per purpose. Keeping the purposes on
//! separate streams means that enabling or disabling one consumer (for
//! example pseudo-target generation) cannot shift the draws seen by any
//! other, which is what makes paired baseline/regularized runs share their
//! initialization, shuffle order, dropout masks, and augmentation exactly.

pub use rand_chacha::ChaCha8Rng;

use rand::SeedableRng;

/// Stream ids assigned to each consumer of randomness within a training run.
pub mod streams {
    /// Parameter initialization.
    pub const INIT: u64 = 0;
    /// Per-epoch shuffling of the training set.
    pub const SHUFFLE: u64 = 1;
    /// Dropout masks.
    pub const DROPOUT: u64 = 2;
    /// Pseudo-regression targets.
    pub const TARGETS: u64 = 3;
    /// Data augmentation draws.
    pub const AUGMENT: u64 = 4;
}

/// Generator for `seed`, positioned on the given stream.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
