//! Deterministic RNG streams.
//!
//! A master seed expands into independent child streams through a documented
//! splitting scheme: the child seed is `splitmix64(master ^ fnv1a(label))`,
//! applied once per label segment. Labels are plain strings such as
//! `"domain/3/base"` or `"method/rpo/seed/4/phase/2"`, so toggling one stage
//! never perturbs the draws of another.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Finalizer from the splitmix64 generator; good avalanche for seed mixing.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a label.
pub fn child_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label.as_bytes()))
}

/// ChaCha stream seeded from `(master, label)`.
pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(master, label))
}

/// Uniform draw in [0,1).
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    // 53 random bits, the standard double construction.
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw via the Marsaglia polar method.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    loop {
        let u = 2.0 * uniform01(rng) - 1.0;
        let v = 2.0 * uniform01(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Bernoulli draw.
pub fn bernoulli(rng: &mut impl RngCore, p: f64) -> bool {
    uniform01(rng) < p
}
