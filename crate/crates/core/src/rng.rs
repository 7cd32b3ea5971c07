//! Deterministic RNG stream derivation.
//!
//! Replications, scenario cells and model fits each get an independent
//! ChaCha stream derived from a base seed and a task index, so results do
//! not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Slot for the stream that generates a replication's dataset.
pub const STREAM_DATASET: u64 = 0;

/// First slot for per-method chain streams within a replication.
pub const STREAM_METHOD_BASE: u64 = 1;

/// RNG for task `(cell, rep, slot)` under `seed`.
///
/// Indices must stay below 2^20 each; they are packed into the ChaCha
/// stream id, which selects one of 2^64 non-overlapping streams.
pub fn task_rng(seed: u64, cell: u64, rep: u64, slot: u64) -> ChaCha8Rng {
    debug_assert!(cell < (1 << 20) && rep < (1 << 20) && slot < (1 << 20));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((cell << 40) | (rep << 20) | slot);
    rng
}

/// RNG for a standalone run (single fit) under `seed`.
pub fn seed_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
