//! Seeded random streams. Each consumer gets its own ChaCha stream derived
//! from the run seed, so adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Well-known stream identifiers used by the training pipeline.
pub mod ids {
    pub const AUDIO_INIT: u64 = 1;
    pub const VISUAL_INIT: u64 = 2;
    pub const AUDIO_AUGMENT: u64 = 3;
    pub const VISUAL_AUGMENT: u64 = 4;
    pub const RECON_INIT: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const FOLDS: u64 = 7;
    pub const FOLD_SEEDS: u64 = 8;
    pub const CLIPS: u64 = 9;
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
