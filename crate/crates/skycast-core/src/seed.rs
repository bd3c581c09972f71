//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a [`rand_chacha::ChaCha8Rng`]
//! whose seed is derived from the run's root seed plus a short label naming
//! the purpose (`"init"`, `"split"`, `"epoch:7"`, …). Labels decouple the
//! streams: reordering or adding consumers never perturbs the others, and the
//! same root seed reproduces every stream bit-for-bit on any platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a root seed and a label into an independent 64-bit seed
/// (FNV-1a over the label, then a splitmix64 finalizer).
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 generator for the given purpose.
pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}

/// A uniform draw in `[0, 1)` with 53 bits of precision, built directly from
/// the generator's raw output so the mapping is fixed forever.
pub fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    use rand_chacha::rand_core::RngCore;
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A standard normal draw via the Box–Muller transform (no internal state,
/// two uniforms per sample).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_chacha::rand_core::RngCore;
    // Offset by one ulp so the log argument is never zero.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A uniform integer in `[0, bound)` by rejection sampling (no modulo bias).
pub fn uniform_index(rng: &mut ChaCha8Rng, bound: usize) -> usize {
    use rand_chacha::rand_core::RngCore;
    assert!(bound > 0, "uniform_index needs a non-empty range");
    let bound = bound as u64;
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % bound) as usize;
        }
    }
}

/// In-place Fisher–Yates shuffle driven by [`uniform_index`], so the
/// permutation depends only on the generator stream.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}
