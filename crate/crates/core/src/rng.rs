//! Seeded randomness and stable hashing.
//!
//! Every stochastic component in this crate draws from a [`ChaCha8Rng`] built
//! here, and every digest goes through the FNV-1a implementation below, so
//! runs are reproducible byte-for-byte across platforms. `std`'s hashers are
//! deliberately avoided: their output is not stable between releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a hasher over byte and integer streams.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn write_u64(&mut self, v: u64) -> &mut Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_u32(&mut self, v: u32) -> &mut Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Hash a label plus a list of integers into a single digest.
pub fn digest_parts(label: &str, parts: &[u64]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_bytes(label.as_bytes());
    for &p in parts {
        h.write_u64(p);
    }
    h.finish()
}

/// Deterministic RNG from a bare seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a structured path.
///
/// Separates e.g. per-instance, per-sample, and per-iteration streams without
/// manual seed bookkeeping at call sites.
pub fn derive_seed(base: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(base);
    h.write_bytes(label.as_bytes());
    for &p in parts {
        h.write_u64(p);
    }
    h.finish()
}

/// RNG for a derived stream; see [`derive_seed`].
pub fn derive_rng(base: u64, label: &str, parts: &[u64]) -> ChaCha8Rng {
    rng_from_seed(derive_seed(base, label, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn digests_are_stable() {
        // Frozen values: a change here breaks replay compatibility.
        assert_eq!(digest_parts("", &[]), 0xcbf2_9ce4_8422_2325);
        assert_eq!(digest_parts("lock", &[3, 7]), digest_parts("lock", &[3, 7]));
        assert_ne!(digest_parts("lock", &[3, 7]), digest_parts("lock", &[7, 3]));
    }

    #[test]
    fn derived_streams_are_independent_and_reproducible() {
        let mut a1 = derive_rng(42, "rollout", &[0]);
        let mut a2 = derive_rng(42, "rollout", &[0]);
        let mut b = derive_rng(42, "rollout", &[1]);
        let xs1: Vec<u32> = (0..4).map(|_| a1.gen()).collect();
        let xs2: Vec<u32> = (0..4).map(|_| a2.gen()).collect();
        let ys: Vec<u32> = (0..4).map(|_| b.gen()).collect();
        assert_eq!(xs1, xs2);
        assert_ne!(xs1, ys);
    }
}
