//! Portable 64-bit random number generation for reproducible simulation runs.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood; the reference
//! implementation popularized by Vigna). It was chosen because it is tiny,
//! has no state beyond a single `u64`, and its output sequence is published,
//! so independent implementations in any language can reproduce a trajectory
//! bit for bit.
//!
//! Reference sequence, also recorded in `docs/determinism.md`:
//!
//! * seed 0: `0xe220a8397b1dcdaf`, `0x6e789e6aa1b965f4`, `0x06c45d188009454f`
//! * seed 1: `0x910a2dec89025cc1`, `0xbeeb8da1658eec67`, `0xf893a2eefb32555e`

/// SplitMix64 generator. One `next_u64` call advances the state once.
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

    /// Uniform draw in the half-open interval (0, 1].
    ///
    /// The transform is `((x >> 11) + 1) * 2^-53`: the top 53 bits of the
    /// raw output shifted into the mantissa range, offset by one so the
    /// result is never zero and `ln` is always finite.
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Exponential draw with the given rate: `-ln(u) / rate` with `u` from
    /// [`next_unit`](Self::next_unit). Consumes exactly one raw output.
    pub fn next_exp(&mut self, rate: f64) -> f64 {
        -self.next_unit().ln() / rate
    }
}
