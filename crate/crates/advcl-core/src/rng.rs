//! Seeded randomness helpers.
//!
//! Everything stochastic in the toolkit draws from a `ChaCha8Rng` seeded
//! either directly or via [`derive_seed`], so runs are reproducible from a
//! single `u64` and independent stages don't share streams by accident.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a stage-specific seed from a base seed and a label.
///
/// Hash-based so that adding a new stage never shifts the streams of
/// existing ones.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Seeded generator for one named stage.
pub fn stage_rng(base: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label))
}

/// Standard normal draw via Box–Muller.
pub fn gauss(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 1e-12 {
            let v: f64 = rng.gen();
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}
