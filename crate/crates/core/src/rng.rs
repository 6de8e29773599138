//! Portable seeded randomness.
//!
//! Shuffles must reproduce bit-for-bit in any language that binds the
//! engine, so the generator and the permutation are fixed here rather than
//! delegated to a library whose stream may change between releases.

/// SplitMix64 (Steele, Lea, Flood 2014).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..bound` by modulo reduction. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Fisher–Yates permutation of `0..n`: for `i` from `n-1` down to `1`, swap
/// `i` with `below(i + 1)`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    permutation(items.len(), seed).into_iter().map(|i| items[i].clone()).collect()
}

/// FNV-1a over the bytes; used to turn identifiers into seed material.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Named sub-seed: `splitmix(seed ^ fnv1a(name))`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    SplitMix64::new(seed ^ fnv1a(name.as_bytes())).next_u64()
}

/// Per-instance sub-seed for a named stream.
pub fn instance_seed(run_seed: u64, stream: &str, instance_id: &str) -> u64 {
    derive_seed(derive_seed(run_seed, stream), instance_id)
}
