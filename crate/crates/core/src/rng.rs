//! Deterministic pseudo-random numbers.
//!
//! Every stochastic step in this crate (weight init, dropout, Gibbs
//! sampling, shuffles, bootstraps) draws from [`SplitMix64`], a 64-bit
//! shift-and-multiply generator. It is seeded explicitly from
//! configuration, so a run is reproducible bit-for-bit on any platform;
//! matching other languages' generators is a non-goal.
//!
//! SplitMix64 steps a 64-bit counter by the golden-ratio constant and
//! scrambles it with two xor-shift/multiply rounds (Steele, Lea & Flood,
//! "Fast splittable pseudorandom number generators", OOPSLA 2014). It is
//! tiny, passes BigCrush, and supports cheap stream derivation, which we
//! use to give threads and repeated runs independent substreams.

/// 64-bit shift-and-multiply PRNG with splittable substreams.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Creates a generator from an explicit seed.
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift bounded draw; bias is < 2^-64 * n, negligible here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Derives an independent substream keyed by `index`.
    ///
    /// Streams for distinct indices are generated from disjoint jumps of
    /// the scrambled counter, so per-run / per-thread randomness never
    /// overlaps regardless of how much each stream consumes.
    pub fn substream(&self, index: u64) -> Self {
        let mut mixer = Self {
            state: self
                .state
                .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)),
        };
        let seed = mixer.next_u64();
        Self { state: seed }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
