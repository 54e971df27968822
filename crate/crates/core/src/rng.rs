//! Seeding conventions.
//!
//! Every stochastic routine takes an explicit RNG. Top-level drivers derive
//! independent child seeds from a master seed with SplitMix64 and seed a
//! ChaCha8 generator from each, so replicate `i` or chain `c` is reproducible
//! on its own regardless of how many others run or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finaliser applied to `master + (index + 1)·γ`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the `index`-th child stream of `master`.
pub fn child_rng(master: u64, index: u64) -> Rng {
    rng_from_seed(child_seed(master, index))
}
