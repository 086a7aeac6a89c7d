//! Deterministic pseudo-random numbers (SplitMix64).
//!
//! Every random choice in the crate flows through [`Rng`] so that a single
//! seed pins an entire run bit-for-bit, independent of platform and crate
//! versions.

use crate::math;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stable per-index sub-seed, e.g. one stream per sequence, so
/// that workers can be scheduled in any order without changing output.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix(seed ^ index.wrapping_mul(GAMMA).wrapping_add(GAMMA))
}

#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
    gauss_spare: Option<f64>,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            state: seed,
            gauss_spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be non-zero.
    pub fn gen_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller; the second value is cached.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        // next_f64 can return exactly 0; flip to (0, 1] for the log.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.gauss_spare = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    /// Split off an independent child stream.
    pub fn fork(&mut self) -> Rng {
        Rng::from_seed(self.next_u64())
    }
}
