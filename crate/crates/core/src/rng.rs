//! Seed derivation for reproducible multi-chain runs.
//!
//! Every chain owns one ChaCha8 key derived from `(master_seed, chain_index)`.
//! Independent draws for the same chain come from distinct ChaCha streams of
//! that key, so swapping the data model never perturbs the Gaussian noise and
//! vice versa. Results do not depend on how chains are scheduled on threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// Stream ids within a chain key.
const NOISE_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const READOUT_STREAM: u64 = 2;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-chain seed: a hash of the master seed and the chain index.
pub fn chain_seed(master: u64, chain: u64) -> u64 {
    mix64(mix64(master ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(chain.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn stream(seed: u64, id: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Gaussian innovations of the Langevin update.
pub fn noise_rng(seed: u64) -> ChainRng {
    stream(seed, NOISE_STREAM)
}

/// Data samples fed to the stochastic gradient.
pub fn data_rng(seed: u64) -> ChainRng {
    stream(seed, DATA_STREAM)
}

/// Fresh draws used for post-run read-outs (e.g. plug-in CVaR).
pub fn readout_rng(seed: u64) -> ChainRng {
    stream(seed, READOUT_STREAM)
}
