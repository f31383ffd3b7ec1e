//! Seeded, cross-platform deterministic random numbers.
//!
//! The generator is xoshiro256** (Blackman & Vigna) seeded through
//! SplitMix64, both fixed here in full so the stream is identical on every
//! platform and toolchain. Floats take the high 53 bits of a draw, so
//! `next_f64` is exact and reproducible bit for bit.

/// SplitMix64 step, used for seed expansion and seed derivation.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and a purpose label.
///
/// Folds the label bytes into the SplitMix64 stream so distinct purposes
/// get statistically independent streams from one user-facing seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &b in purpose.as_bytes() {
        state ^= u64::from(b);
        out ^= splitmix64(&mut state);
    }
    out
}

/// Deterministic xoshiro256** generator.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: [u64; 4],
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self { state, seed }
    }

    /// The seed this generator was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via the 128-bit multiply reduction.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
