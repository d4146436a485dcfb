use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` of generator `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids, kept distinct so components never share randomness.
pub(crate) mod streams {
    pub const SUBSAMPLE: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const BALANCE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const HEADS: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const HOLDOUT: u64 = 7;
    pub const SYNTHETIC: u64 = 8;
    pub const GRID: u64 = 9;
    pub const DROPOUT: u64 = 10;
    pub const LATENT: u64 = 11;
    /// Batch permutations use `BATCH_BASE + epoch`.
    pub const BATCH_BASE: u64 = 1 << 32;
}
