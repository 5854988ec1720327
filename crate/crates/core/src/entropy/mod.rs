//! Differential entropy of layer activations.
//!
//! The default estimator is the k-nearest-neighbour estimator
//!
//! ```text
//! H(X, k) = -psi(k) + psi(n) + ln V_d + (d / n) * sum_i ln r_k(x_i)
//! ```
//!
//! where `r_k(x_i)` is the Euclidean distance from row `i` to its k-th
//! nearest other row and `V_d` the volume of the `d`-dimensional unit ball.
//! With `k = 1` this is the Kozachenko-Leonenko estimator. A diagonal
//! Gaussian fit is available as a cheap proxy. All values are in nats.

mod neighbors;
mod samples;
mod special;

pub use neighbors::{kth_neighbors, KdTree, Neighbor, NeighborSearch, KD_TREE_MAX_DIM};
pub use samples::{features_to_samples, SampleAxis, SampleMatrix};
pub use special::{digamma, log_unit_ball_volume, unit_ball_volume, EULER_GAMMA};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor, Var};

/// Variance floor of the diagonal-Gaussian proxy.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Magnitude of the opt-in jitter applied to degenerate sample sets.
pub const JITTER_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Knn,
    GaussianDiag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Nats.
    pub value: f64,
    pub estimator: Estimator,
    /// Neighbour order; `None` for the Gaussian proxy.
    pub k: Option<usize>,
}

/// Configuration of the kNN estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnEstimator {
    pub k: usize,
    #[serde(default)]
    pub search: NeighborSearch,
    /// Seed for the zero-distance retry; `None` reports degenerate samples
    /// as errors.
    #[serde(default)]
    pub jitter: Option<u64>,
}

impl Default for KnnEstimator {
    fn default() -> Self {
        Self {
            k: 1,
            search: NeighborSearch::Auto,
            jitter: None,
        }
    }
}

/// Result of a kNN fit, kept for the frozen-neighbour gradient.
#[derive(Debug, Clone)]
pub struct KnnFit {
    pub estimate: EntropyEstimate,
    /// Samples the estimate was computed on (jittered when a retry ran).
    pub samples: SampleMatrix,
    pub neighbors: Vec<usize>,
    pub radii: Vec<f64>,
}

fn check_k(s: &SampleMatrix, k: usize) -> Result<()> {
    if k == 0 || k >= s.n() {
        return Err(Error::Domain(format!(
            "k must satisfy 1 <= k <= n - 1 (k = {k}, n = {})",
            s.n()
        )));
    }
    Ok(())
}

/// Distance from every row to its k-th nearest other row.
pub fn knn_distances(s: &SampleMatrix, k: usize) -> Result<Vec<f64>> {
    check_k(s, k)?;
    Ok(kth_neighbors(s, k, NeighborSearch::Auto)
        .into_iter()
        .map(|nb| nb.distance)
        .collect())
}

/// Deterministic per-coordinate perturbation in `[-JITTER_SCALE, JITTER_SCALE)`.
pub fn jitter_samples(s: &SampleMatrix, seed: u64) -> Result<SampleMatrix> {
    let mut g = SplitMix64::stream(seed, "jitter");
    s.map(|v| v + JITTER_SCALE * (2.0 * g.next_f64() - 1.0))
}

impl KnnEstimator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    fn fit_once(&self, s: &SampleMatrix) -> Result<KnnFit> {
        let nbrs = kth_neighbors(s, self.k, self.search);
        let zero_rows: Vec<usize> = nbrs
            .iter()
            .enumerate()
            .filter(|(_, nb)| nb.distance == 0.0)
            .map(|(i, _)| i)
            .collect();
        if !zero_rows.is_empty() {
            return Err(Error::DegenerateSamples {
                rows: zero_rows,
                at: None,
            });
        }
        let (n, d) = (s.n(), s.d());
        let log_r_sum: f64 = nbrs.iter().map(|nb| nb.distance.ln()).sum();
        let value = -digamma(self.k as f64)? + digamma(n as f64)? + log_unit_ball_volume(d)?
            + d as f64 / n as f64 * log_r_sum;
        Ok(KnnFit {
            estimate: EntropyEstimate {
                value,
                estimator: Estimator::Knn,
                k: Some(self.k),
            },
            samples: s.clone(),
            neighbors: nbrs.iter().map(|nb| nb.index).collect(),
            radii: nbrs.iter().map(|nb| nb.distance).collect(),
        })
    }

    pub fn fit(&self, s: &SampleMatrix) -> Result<KnnFit> {
        check_k(s, self.k)?;
        match (self.fit_once(s), self.jitter) {
            (Err(Error::DegenerateSamples { .. }), Some(seed)) => {
                self.fit_once(&jitter_samples(s, seed)?)
            }
            (res, _) => res,
        }
    }

    pub fn estimate(&self, s: &SampleMatrix) -> Result<EntropyEstimate> {
        self.fit(s).map(|f| f.estimate)
    }
}

/// kNN differential entropy with the default neighbour search.
pub fn knn_entropy(s: &SampleMatrix, k: usize) -> Result<EntropyEstimate> {
    KnnEstimator::new(k).estimate(s)
}

/// Gradient of the `(d/n) sum ln r` term with neighbour indices held fixed.
/// Row-major `n x d`.
pub fn knn_gradient_frozen(s: &SampleMatrix, neighbors: &[usize], radii: &[f64]) -> Vec<f64> {
    let (n, d) = (s.n(), s.d());
    let scale = d as f64 / n as f64;
    let mut g = vec![0.0; n * d];
    for i in 0..n {
        let j = neighbors[i];
        let r2 = radii[i] * radii[i];
        let (xi, xj) = (s.row(i), s.row(j));
        for c in 0..d {
            let t = scale * (xi[c] - xj[c]) / r2;
            g[i * d + c] += t;
            g[j * d + c] -= t;
        }
    }
    g
}

/// Gradient of [`knn_entropy`] with respect to every sample coordinate.
pub fn knn_entropy_grad(s: &SampleMatrix, k: usize) -> Result<Vec<f64>> {
    let fit = KnnEstimator::new(k).fit(s)?;
    Ok(knn_gradient_frozen(&fit.samples, &fit.neighbors, &fit.radii))
}

fn column_moments(s: &SampleMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (s.n() as f64, s.d());
    let mut mean = vec![0.0; d];
    for row in s.rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in s.rows() {
        for c in 0..d {
            let t = row[c] - mean[c];
            var[c] += t * t;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// `sum_j 0.5 ln(2 pi e max(var_j, 1e-12))` with population variances.
pub fn gaussian_proxy_entropy(s: &SampleMatrix) -> EntropyEstimate {
    let (_, var) = column_moments(s);
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    let value = var
        .iter()
        .map(|&v| 0.5 * (two_pi_e * v.max(VARIANCE_FLOOR)).ln())
        .sum();
    EntropyEstimate {
        value,
        estimator: Estimator::GaussianDiag,
        k: None,
    }
}

/// Gradient of [`gaussian_proxy_entropy`]; floored columns get zero.
pub fn gaussian_proxy_gradient(s: &SampleMatrix) -> Vec<f64> {
    let (mean, var) = column_moments(s);
    let (n, d) = (s.n(), s.d());
    let mut g = vec![0.0; n * d];
    for (i, row) in s.rows().enumerate() {
        for c in 0..d {
            if var[c] > VARIANCE_FLOOR {
                g[i * d + c] = (row[c] - mean[c]) / (n as f64 * var[c]);
            }
        }
    }
    g
}

/// Estimator choice plus the tensor-to-samples convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub knn: KnnEstimator,
    #[serde(default)]
    pub axis: SampleAxis,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Knn,
            knn: KnnEstimator::default(),
            axis: SampleAxis::ChannelsAsSamples,
        }
    }
}

impl EntropyConfig {
    pub fn knn(k: usize, axis: SampleAxis) -> Self {
        Self {
            estimator: Estimator::Knn,
            knn: KnnEstimator::new(k),
            axis,
        }
    }

    /// Entropy of a feature tensor, detached from any tape.
    pub fn estimate(&self, feature: &Tensor) -> Result<EntropyEstimate> {
        let s = features_to_samples(feature, self.axis)?;
        self.estimate_samples(&s)
    }

    pub fn estimate_samples(&self, s: &SampleMatrix) -> Result<EntropyEstimate> {
        match self.estimator {
            Estimator::Knn => self.knn.estimate(s),
            Estimator::GaussianDiag => Ok(gaussian_proxy_entropy(s)),
        }
    }

    /// Entropy of a feature tensor recorded on `tape` as a scalar node.
    pub fn estimate_on_tape(&self, tape: &mut Tape, feature: Var) -> Result<Var> {
        let shape = tape.value(feature).shape().to_vec();
        let (n, d) = self.axis.split(&shape)?;
        let samples = if shape == [n, d] {
            feature
        } else {
            tape.reshape(feature, &[n, d])?
        };
        match self.estimator {
            Estimator::Knn => tape.knn_entropy(samples, &self.knn),
            Estimator::GaussianDiag => tape.gaussian_entropy(samples),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(n: usize, d: usize, seed: u64) -> SampleMatrix {
        let mut g = SplitMix64::stream(seed, "test-gauss");
        SampleMatrix::new(n, d, (0..n * d).map(|_| g.normal()).collect()).unwrap()
    }

    #[test]
    fn knn_distance_examples() {
        let s = SampleMatrix::from_column(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(knn_distances(&s, 1).unwrap(), vec![1.0, 1.0, 2.0]);
        assert_eq!(knn_distances(&s, 2).unwrap(), vec![3.0, 2.0, 3.0]);
        assert!(matches!(knn_distances(&s, 3), Err(Error::Domain(_))));
        assert!(matches!(knn_distances(&s, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn knn_entropy_matches_hand_evaluation() {
        // rows {0, 1, 3}: r = [1, 1, 2], n = 3, d = 1, k = 1
        let s = SampleMatrix::from_column(&[0.0, 1.0, 3.0]).unwrap();
        let want = EULER_GAMMA + (-EULER_GAMMA + 1.0 + 0.5) + 2f64.ln() + (2f64.ln()) / 3.0;
        assert_abs_diff_eq!(knn_entropy(&s, 1).unwrap().value, want, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_rows_are_degenerate() {
        let s = SampleMatrix::from_column(&[0.0, 0.0]).unwrap();
        match knn_entropy(&s, 1) {
            Err(Error::DegenerateSamples { rows, .. }) => assert_eq!(rows, vec![0, 1]),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn jitter_is_opt_in_and_deterministic() {
        let s = SampleMatrix::from_column(&[0.0, 0.0, 1.0, 2.0]).unwrap();
        assert!(knn_entropy(&s, 1).is_err());
        let est = KnnEstimator {
            jitter: Some(11),
            ..KnnEstimator::default()
        };
        let a = est.estimate(&s).unwrap().value;
        let b = est.estimate(&s).unwrap().value;
        assert!(a.is_finite());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn uniform_unit_interval_has_zero_entropy() {
        let mut g = SplitMix64::stream(5, "uniform");
        let vals: Vec<f64> = (0..10_000).map(|_| g.next_f64()).collect();
        let s = SampleMatrix::from_column(&vals).unwrap();
        assert_abs_diff_eq!(knn_entropy(&s, 1).unwrap().value, 0.0, epsilon = 0.05);
    }

    #[test]
    fn standard_normal_entropy() {
        let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let s = gaussian(10_000, 1, 9);
        assert_abs_diff_eq!(knn_entropy(&s, 1).unwrap().value, h, epsilon = 0.05);
    }

    #[test]
    fn gradient_matches_finite_differences_on_two_points() {
        let s = SampleMatrix::from_column(&[0.0, 1.0]).unwrap();
        let g = knn_entropy_grad(&s, 1).unwrap();
        // H = const + (1/2)(ln|x1 - x0| * 2) => dH/dx0 = -1, dH/dx1 = +1
        let h = 1e-6;
        for i in 0..2 {
            let mut plus = s.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = knn_entropy(&SampleMatrix::from_column(&plus).unwrap(), 1).unwrap().value;
            let fm = knn_entropy(&SampleMatrix::from_column(&minus).unwrap(), 1).unwrap().value;
            let fd = (fp - fm) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "{} vs {fd}", g[i]);
        }
        assert_eq!(g, vec![-1.0, 1.0]);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let s = gaussian(50, 3, 2);
        let g = knn_entropy_grad(&s, 2).unwrap();
        for c in 0..3 {
            let total: f64 = (0..50).map(|i| g[i * 3 + c]).sum();
            assert!(total.abs() < 1e-10, "{total}");
        }
    }

    #[test]
    fn gaussian_proxy_examples() {
        let h1 = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        // population variance exactly 1
        let s = SampleMatrix::from_column(&[-1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(gaussian_proxy_entropy(&s).value, h1, epsilon = 1e-12);
        let s = SampleMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_abs_diff_eq!(gaussian_proxy_entropy(&s).value, 2.0 * h1, epsilon = 1e-12);
        let s = SampleMatrix::from_column(&[4.0, 4.0, 4.0]).unwrap();
        let floored = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 1e-12).ln();
        assert_abs_diff_eq!(gaussian_proxy_entropy(&s).value, floored, epsilon = 1e-12);
    }

    #[test]
    fn estimate_on_tape_reshapes_channels() {
        let mut tape = Tape::new();
        let mut g = SplitMix64::stream(1, "t");
        let t = Tensor::new(&[6, 2, 2], (0..24).map(|_| g.normal()).collect()).unwrap();
        let cfg = EntropyConfig::knn(1, SampleAxis::ChannelsAsSamples);
        let v = tape.constant(t.clone());
        let h = cfg.estimate_on_tape(&mut tape, v).unwrap();
        assert_eq!(tape.value(h).item().unwrap(), cfg.estimate(&t).unwrap().value);
    }
}
