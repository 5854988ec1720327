use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

use super::Head;

/// Standard-normal inputs whose label depends only on the first
/// `informative_dims` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub input_dim: usize,
    pub informative_dims: usize,
    pub nuisance_dims: usize,
    /// Label noise added to the informative sum before thresholding.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            input_dim: 16,
            informative_dims: 4,
            nuisance_dims: 12,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select(idx),
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.informative_dims + self.nuisance_dims != self.input_dim {
            return Err(Error::Config(format!(
                "informative ({}) + nuisance ({}) dims must equal input_dim ({})",
                self.informative_dims, self.nuisance_dims, self.input_dim
            )));
        }
        if self.informative_dims == 0 {
            return Err(Error::Config("at least one informative dim is required".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }

    /// `rows` samples from the stream named `split` (`"train"`,
    /// `"validation"`, ...). Same seed and split give identical data.
    pub fn generate(&self, rows: usize, split: &str, head: Head) -> Result<Dataset> {
        self.validate()?;
        if rows == 0 {
            return Err(Error::Config("dataset needs at least one row".into()));
        }
        let mut g = SplitMix64::stream(self.seed, &format!("task/{split}"));
        let d = self.input_dim;
        let mut x = Vec::with_capacity(rows * d);
        let mut sums = Vec::with_capacity(rows);
        for _ in 0..rows {
            let start = x.len();
            for _ in 0..d {
                x.push(g.normal());
            }
            let s: f64 = x[start..start + self.informative_dims].iter().sum();
            let noise = if self.noise_std > 0.0 { self.noise_std * g.normal() } else { 0.0 };
            sums.push(s + noise);
        }
        let targets = match head {
            Head::Classification { num_classes: 2 } => {
                Targets::Classes(sums.iter().map(|&s| usize::from(s > 0.0)).collect())
            }
            Head::Classification { num_classes } => {
                return Err(Error::Config(format!(
                    "the synthetic task is binary; head has {num_classes} classes"
                )))
            }
            Head::Regression => Targets::Values(sums),
        };
        Ok(Dataset {
            inputs: Tensor::new(&[rows, d], x)?,
            targets,
        })
    }
}
