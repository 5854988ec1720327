use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `n` realisations of a `d`-dimensional random vector, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientSamples { got: n });
        }
        if d == 0 {
            return Err(Error::Domain("sample dimension must be >= 1".into()));
        }
        if values.len() != n * d {
            return Err(Error::Dimension {
                op: "sample_matrix",
                lhs: vec![n, d],
                rhs: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "sample_matrix" });
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Domain("ragged rows".into()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// One-dimensional samples.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    /// Apply `f` to every coordinate.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::new(self.n, self.d, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.n, self.d], self.values.clone())
    }
}

/// Which tensor axes index samples when a feature tensor becomes a
/// [`SampleMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleAxis {
    /// Axis 0 indexes samples; remaining axes flatten into the dimension.
    #[default]
    ChannelsAsSamples,
    /// Last axis is the dimension; all leading axes merge into samples.
    PositionsAsSamples,
}

impl SampleAxis {
    /// `(n, d)` for a tensor of the given shape.
    pub fn split(self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() < 2 {
            return Err(Error::Domain(format!(
                "feature tensor needs at least 2 axes, got shape {shape:?}"
            )));
        }
        let (n, d) = match self {
            SampleAxis::ChannelsAsSamples => (shape[0], shape[1..].iter().product()),
            SampleAxis::PositionsAsSamples => {
                let last = shape[shape.len() - 1];
                (shape[..shape.len() - 1].iter().product(), last)
            }
        };
        if n < 2 {
            return Err(Error::InsufficientSamples { got: n });
        }
        Ok((n, d))
    }
}

/// Reshape a feature tensor into a sample matrix. Both modes are pure
/// reshapes of the row-major buffer.
pub fn features_to_samples(feature: &Tensor, mode: SampleAxis) -> Result<SampleMatrix> {
    let (n, d) = mode.split(feature.shape())?;
    SampleMatrix::new(n, d, feature.data().to_vec())
}
