use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic seeding policy: a master seed plus a pure batch-index ->
/// sub-seed derivation, so that the stream a batch consumes never depends on
/// scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        RngSpec { master_seed }
    }

    /// SplitMix64 over (master_seed, batch index). Distinct indices give
    /// distinct sub-seeds (the map is a bijection for fixed master seed).
    pub fn sub_seed(&self, batch_index: u64) -> u64 {
        let mut z = self
            .master_seed
            .wrapping_add(batch_index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn batch_rng(&self, batch_index: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.sub_seed(batch_index))
    }
}
