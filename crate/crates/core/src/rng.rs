//! Seeded counter-based randomness.
//!
//! Every consumer draws from its own ChaCha stream, derived from the run
//! seed plus a namespace tag, so weight-estimation coins and sampling coins
//! never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Namespace {
    EstimatorCoins = 1,
    SamplingCoins = 2,
    WindowMerge = 3,
    Oracle = 4,
    Glm = 5,
    Synthetic = 6,
}

/// Generator for `namespace`, further split by `sub` (merge counter, trial id, ...).
pub fn stream(seed: u64, namespace: Namespace, sub: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((namespace as u64) << 48) ^ sub);
    rng
}
