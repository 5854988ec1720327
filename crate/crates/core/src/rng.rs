//! Seeded, splittable pseudo-random streams.
//!
//! Every random draw in the crate (weight init, synthetic data, corruption,
//! jitter) comes from this generator so runs can be reproduced byte for byte
//! by any implementation. The recipe:
//!
//! * **Stream key.** `state = mix(seed ^ fnv1a64(tag))`, where `tag` is a
//!   short ASCII label naming the consumer (for example `"gaussian"`) and
//!   `fnv1a64` is 64-bit FNV-1a (offset `0xcbf29ce484222325`, prime
//!   `0x100000001b3`).
//! * **Step.** SplitMix64: `state += 0x9e3779b97f4a7c15; out = mix(state)`
//!   with `mix(z) = z ^= z >> 30; z *= 0xbf58476d1ce4e5b9; z ^= z >> 27;
//!   z *= 0x94d049bb133111eb; z ^ (z >> 31)` (wrapping arithmetic).
//! * **Uniform.** `(out >> 11) * 2^-53`, in `[0, 1)`.
//! * **Normal.** Box-Muller, cosine branch only: draw `u1`, `u2`;
//!   `z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`. Two uniforms per normal.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over the tag bytes.
pub fn fnv1a64(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    /// Independent stream for `(seed, tag)`.
    pub fn stream(seed: u64, tag: &str) -> Self {
        Self {
            state: mix(seed ^ fnv1a64(tag)),
        }
    }

    /// Derive a child stream; the parent is not advanced.
    pub fn split(&self, tag: &str) -> Self {
        Self::stream(self.state, tag)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Index in `0..bound` via `floor(u * bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        let j = (self.next_f64() * bound as f64) as usize;
        j.min(bound - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
