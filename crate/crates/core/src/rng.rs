//! Seeded, domain-separated random streams.
//!
//! Every source of randomness in the library draws from a [`ChaCha8Rng`]
//! whose 256-bit seed mixes the master seed, a domain tag, and an index.
//! Separate domains (weight init, shuffling, augmentation, ...) therefore
//! never share a stream, and adding draws to one domain cannot perturb
//! another. This is what makes whole runs reproducible from one `u64` seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent randomness domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    /// Network weight initialization.
    Init = 1,
    /// Per-epoch shuffling of the training set.
    DataOrder = 2,
    /// Brightness/contrast augmentation.
    Augment = 3,
    /// Synthetic sample generation (indexed per sample).
    Generator = 4,
    /// Pixel subsampling inside the contrastive losses.
    LossSubsample = 5,
    /// k-means initialization and tie-breaking for prototypes.
    KMeans = 6,
}

/// Deterministic substream for `(master_seed, domain, index)`.
pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8] = domain as u8;
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
