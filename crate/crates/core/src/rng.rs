//! Deterministic RNG stream derivation.
//!
//! Every random draw in the crate flows from a single experiment seed through
//! `derive_stream(seed, purpose, entity, step)`. Streams are independent of
//! thread scheduling: each (purpose, entity, step) triple owns its own
//! generator, so parallel execution cannot reorder draws within a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. The discriminant is part of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    /// Model weight initialization.
    Init = 1,
    /// Dirichlet class-proportion draws (entity = class).
    Partition = 2,
    /// Per-client train/test splitting (entity = client).
    Split = 3,
    /// Synthetic class templates (entity = class).
    SynthTemplate = 4,
    /// Synthetic per-sample noise (entity = class, step = sample).
    SynthNoise = 5,
    /// Per-round client sampling (step = round).
    ClientSampling = 6,
    /// Mini-batch shuffling during local training (entity = client, step = round).
    LocalTrain = 7,
}

/// Derive an independent ChaCha stream from (seed, purpose, entity, step).
pub fn derive_stream(seed: u64, purpose: StreamPurpose, entity: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&entity.to_le_bytes());
    key[24..32].copy_from_slice(&step.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
