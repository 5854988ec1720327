//! Seeded input corruptions.
//!
//! Every call draws from its own [`SplitMix64`] stream keyed by the seed and
//! a fixed tag (`"gaussian"`, `"salt_pepper"`), so the same call reproduces
//! the same noise in any implementation of the generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Default share of entries hit by salt-and-pepper noise.
pub const DEFAULT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// noise1: additive `sigma * N(0, 1)`.
    Gaussian,
    /// noise2: entries replaced by the input's global extrema.
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub kind: CorruptionKind,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    pub seed: u64,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}

impl CorruptionConfig {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Gaussian,
            sigma,
            fraction: DEFAULT_FRACTION,
            seed,
        }
    }

    pub fn salt_pepper(fraction: f64, seed: u64) -> Self {
        Self {
            kind: CorruptionKind::SaltPepper,
            sigma: default_sigma(),
            fraction,
            seed,
        }
    }

    pub fn apply(&self, data: &Tensor) -> Result<Tensor> {
        match self.kind {
            CorruptionKind::Gaussian => gaussian_noise(data, self.sigma, self.seed),
            CorruptionKind::SaltPepper => salt_pepper(data, self.fraction, self.seed),
        }
    }
}

/// `x + sigma * z` with `z` drawn in row-major order.
pub fn gaussian_noise(data: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let mut g = SplitMix64::stream(seed, "gaussian");
    let out = data.data().iter().map(|&x| x + sigma * g.normal()).collect();
    Tensor::new(data.shape(), out)
}

/// Replace `floor(fraction * count)` distinct entries by the global maximum
/// or minimum of the input, each with probability 1/2.
///
/// Entries are chosen by a partial Fisher-Yates shuffle: for
/// `i in 0..m`, swap position `i` with `i + below(count - i)`. The
/// max/min coin for each chosen entry is drawn right after its index.
pub fn salt_pepper(data: &Tensor, fraction: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let values = data.data();
    let count = values.len();
    if count == 0 {
        return Err(Error::Domain("salt-and-pepper needs a non-empty input".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = (fraction * count as f64).floor() as usize;
    let mut g = SplitMix64::stream(seed, "salt_pepper");
    let mut order: Vec<usize> = (0..count).collect();
    let mut out = values.to_vec();
    for i in 0..m {
        let j = i + g.below(count - i);
        order.swap(i, j);
        out[order[i]] = if g.next_f64() < 0.5 { hi } else { lo };
    }
    Tensor::new(data.shape(), out)
}
