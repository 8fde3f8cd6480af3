//! Deterministic seed derivation for Monte Carlo ensembles.
//!
//! Runs execute in parallel, so each one derives its own counter-based
//! ChaCha stream from `(master_seed, run_index, stream_tag)` instead of
//! splitting one sequential generator. Two tags exist per run: the
//! observation stream and the gate stream. Keeping them separate means
//! every estimator kind sees byte-identical measurement noise for a given
//! `(master_seed, run_index)` even though only the gated estimator draws
//! gate variates — common random numbers across the estimators under
//! comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag for measurement noise and model generation.
pub const STREAM_OBSERVATIONS: u64 = 0;
/// Stream tag for communication gate draws.
pub const STREAM_GATES: u64 = 1;
/// Stream tag for random graph generation.
pub const STREAM_TOPOLOGY: u64 = 3;
/// Stream tag for random sensing-model generation.
pub const STREAM_SENSING: u64 = 4;
/// Stream tag for dataset partitioning.
pub const STREAM_PARTITION: u64 = 5;

/// The 64-bit avalanche finalizer from Vigna's `splitmix64`.
///
/// A bijection on `u64` with full avalanche; `splitmix64(k * GAMMA)` for
/// k = 1, 2, ... reproduces the reference generator's output sequence.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(master_seed, run_index, stream_tag)` into one 64-bit seed.
///
/// The finalizer is chained once per component so that seeds for
/// neighboring runs, streams, or master seeds share no visible structure.
pub fn derive_seed(master_seed: u64, run_index: u64, stream_tag: u64) -> u64 {
    let mut s = splitmix64(master_seed);
    s = splitmix64(s ^ run_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    s = splitmix64(s ^ stream_tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    s
}

/// Seeded generator for one `(run, stream)` pair.
pub fn stream_rng(master_seed: u64, run_index: u64, stream_tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, run_index, stream_tag))
}

/// The pair of independent streams one run consumes.
pub struct RunStreams {
    pub observations: ChaCha8Rng,
    pub gates: ChaCha8Rng,
}

impl RunStreams {
    pub fn derive(master_seed: u64, run_index: u64) -> Self {
        Self {
            observations: stream_rng(master_seed, run_index, STREAM_OBSERVATIONS),
            gates: stream_rng(master_seed, run_index, STREAM_GATES),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    // Reference outputs of splitmix64 seeded with 0, i.e. finalizer
    // applied at successive multiples of the golden gamma.
    #[test]
    fn splitmix64_matches_reference_sequence() {
        const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(GAMMA), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(splitmix64(GAMMA.wrapping_mul(2)), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let base = derive_seed(42, 0, 0);
        assert_eq!(base, derive_seed(42, 0, 0));
        let neighbors = [
            derive_seed(42, 0, 1),
            derive_seed(42, 1, 0),
            derive_seed(43, 0, 0),
        ];
        for n in neighbors {
            assert_ne!(base, n);
        }
    }

    #[test]
    fn streams_differ_but_reproduce() {
        let mut a = RunStreams::derive(7, 3);
        let mut b = RunStreams::derive(7, 3);
        assert_eq!(a.observations.next_u64(), b.observations.next_u64());
        assert_eq!(a.gates.next_u64(), b.gates.next_u64());
        let mut c = RunStreams::derive(7, 4);
        assert_ne!(a.observations.next_u64(), c.observations.next_u64());
    }
}
