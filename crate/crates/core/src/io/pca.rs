//! Two-component PCA density summary of activations.

use serde::{Deserialize, Serialize};

use crate::entropy::SampleMatrix;
use crate::error::{Error, Result};

/// Relative eigenvalue below which the second axis is reported degenerate.
pub const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaNormalization {
    /// Centre each column, then divide everything by one common scale
    /// `sqrt(trace(cov) / d)`. Keeps relative column variances.
    #[default]
    CenterGlobalScale,
    /// Centre and divide each column by its own std (zero-variance columns
    /// are only centred).
    Standardize,
}

/// A fitted 1D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1d {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2Summary {
    /// Unit principal axes, largest eigenvalue first.
    pub axes: [Vec<f64>; 2],
    /// Gaussian fit of the normalized samples projected on each axis.
    pub fits: [Gaussian1d; 2],
    pub explained: [f64; 2],
    pub second_axis_degenerate: bool,
    pub normalization: PcaNormalization,
}

impl Pca2Summary {
    /// Density of the product of the two 1D fits at `(u, v)`.
    pub fn density(&self, u: f64, v: f64) -> f64 {
        let pdf = |g: &Gaussian1d, x: f64| {
            if g.std == 0.0 {
                return if x == g.mean { f64::INFINITY } else { 0.0 };
            }
            let z = (x - g.mean) / g.std;
            (-0.5 * z * z).exp() / (g.std * (2.0 * std::f64::consts::PI).sqrt())
        };
        pdf(&self.fits[0], u) * pdf(&self.fits[1], v)
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and column eigenvectors (`vectors[r * d + c]`).
pub fn jacobi_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| (0..d).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * d + q] * a[p * d + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                // signum(0.0) is 1, so theta == 0 gives a 45 degree rotation
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i * d + i]).collect(), v)
}

pub fn pca2_summary(s: &SampleMatrix, normalization: PcaNormalization) -> Result<Pca2Summary> {
    let (n, d) = (s.n(), s.d());
    if d < 2 {
        return Err(Error::Domain(format!("PCA summary needs d >= 2, got {d}")));
    }
    if n < 3 {
        return Err(Error::InsufficientSamples { got: n });
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for r in s.rows() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; d];
    for r in s.rows() {
        for c in 0..d {
            var[c] += (r[c] - mean[c]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    let scale: Vec<f64> = match normalization {
        PcaNormalization::Standardize => var.iter().map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect(),
        PcaNormalization::CenterGlobalScale => {
            let g = (var.iter().sum::<f64>() / d as f64).sqrt();
            vec![if g > 0.0 { g } else { 1.0 }; d]
        }
    };
    let z: Vec<f64> = s
        .rows()
        .flat_map(|r| (0..d).map(|c| (r[c] - mean[c]) / scale[c]).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; d * d];
    for r in z.chunks_exact(d) {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= nf;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if trace <= 0.0 {
        return Err(Error::Domain("all samples are identical; no principal axes".into()));
    }
    let (vals, vecs) = jacobi_eigen(&cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let col = order[k];
        let mut v: Vec<f64> = (0..d).map(|r| vecs[r * d + col]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let lead = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let axes = [axis(0), axis(1)];
    let fit = |a: &[f64]| {
        let proj: Vec<f64> = z.chunks_exact(d).map(|r| r.iter().zip(a).map(|(x, y)| x * y).sum()).collect();
        let m = proj.iter().sum::<f64>() / nf;
        let v = proj.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / nf;
        Gaussian1d { mean: m, std: v.sqrt() }
    };
    let lam = |k: usize| vals[order[k]].max(0.0);
    Ok(Pca2Summary {
        fits: [fit(&axes[0]), fit(&axes[1])],
        explained: [lam(0) / trace, lam(1) / trace],
        second_axis_degenerate: lam(1) <= DEGENERATE_RATIO * lam(0),
        axes,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, v) = jacobi_eigen(&a, 3);
        for k in 0..3 {
            let col: Vec<f64> = (0..3).map(|r| v[r * 3 + k]).collect();
            for r in 0..3 {
                let av = dot(&a[r * 3..r * 3 + 3], &col);
                assert_abs_diff_eq!(av, vals[k] * col[r], epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(vals.iter().sum::<f64>(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn axis_aligned_samples() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let s = SampleMatrix::from_rows(&rows).unwrap();
        let p = pca2_summary(&s, PcaNormalization::default()).unwrap();
        assert_abs_diff_eq!(p.axes[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.axes[0][1], 0.0, epsilon = 1e-12);
        assert_eq!(p.fits[1].std, 0.0);
        assert!(p.second_axis_degenerate);
    }

    fn gaussian(n: usize, sd: &[f64], seed: u64) -> SampleMatrix {
        let mut g = SplitMix64::stream(seed, "pca");
        let vals = (0..n).flat_map(|_| sd.iter().map(|s| s * g.normal()).collect::<Vec<_>>()).collect();
        SampleMatrix::new(n, sd.len(), vals).unwrap()
    }

    #[test]
    fn isotropic_fractions_are_balanced() {
        let p = pca2_summary(&gaussian(10_000, &[1.0, 1.0], 1), PcaNormalization::default()).unwrap();
        for f in p.explained {
            assert!((0.45..=0.55).contains(&f), "{f}");
        }
    }

    #[test]
    fn anisotropic_fractions() {
        let p = pca2_summary(&gaussian(10_000, &[3.0, 1.0], 2), PcaNormalization::default()).unwrap();
        assert_abs_diff_eq!(p.explained[0], 0.9, epsilon = 0.03);
        assert_abs_diff_eq!(p.explained[1], 0.1, epsilon = 0.03);
        let st = pca2_summary(&gaussian(10_000, &[3.0, 1.0], 2), PcaNormalization::Standardize).unwrap();
        assert_abs_diff_eq!(st.explained[0], 0.5, epsilon = 0.03);
    }

    #[test]
    fn axes_are_orthonormal_and_deterministic() {
        let s = gaussian(500, &[2.0, 1.0, 0.5, 0.3], 3);
        let p = pca2_summary(&s, PcaNormalization::default()).unwrap();
        assert_abs_diff_eq!(dot(&p.axes[0], &p.axes[0]), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dot(&p.axes[1], &p.axes[1]), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dot(&p.axes[0], &p.axes[1]), 0.0, epsilon = 1e-10);
        assert!(p.fits.iter().all(|f| f.std >= 0.0));
        assert_eq!(p, pca2_summary(&s, PcaNormalization::default()).unwrap());
    }

    #[test]
    fn needs_two_dims() {
        let s = SampleMatrix::from_column(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(pca2_summary(&s, PcaNormalization::default()), Err(Error::Domain(_))));
    }
}
