//! Repeated-block fully connected encoder with per-layer activation capture.

mod experiment;
mod task;
mod train;

pub use experiment::{
    calibrate_model_band, calibration_batch, run_experiment, settings_hash, write_sweep_table, AuditSettings,
    EncoderLayout, ExperimentConfig, RunArtifacts, RunConfig, SweepRow, SweepSummary, TaskSettings, TrainSettings,
    SEED_ENV,
};
pub use task::{Dataset, SyntheticTask, Targets};
pub use train::{
    evaluate, objective_value, train, train_step, Evaluation, StepOutcome, TrainConfig, TrainOutcome, TrainRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    Classification { num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// `M` blocks of `N` dense layers; widths are constant inside a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub blocks: usize,
    pub layers_per_block: usize,
    /// One width per block.
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub head: Head,
    #[serde(default)]
    pub activation: Activation,
    pub lambda: f64,
    /// Per-block E_loss enable flags.
    pub mask: Vec<bool>,
    pub seed: u64,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.layers_per_block < 3 {
            return Err(Error::Config(format!(
                "each block needs at least 3 layers to yield 2 drops, got {}",
                self.layers_per_block
            )));
        }
        if self.widths.len() != self.blocks {
            return Err(Error::Config(format!(
                "{} widths given for {} blocks",
                self.widths.len(),
                self.blocks
            )));
        }
        if self.widths.contains(&0) || self.input_dim == 0 {
            return Err(Error::Config("widths and input_dim must be positive".into()));
        }
        if self.mask.len() != self.blocks {
            return Err(Error::Config(format!(
                "mask has {} entries for {} blocks",
                self.mask.len(),
                self.blocks
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Head::Classification { num_classes } = self.head {
            if num_classes < 2 {
                return Err(Error::Config("classification needs >= 2 classes".into()));
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.blocks * self.layers_per_block
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Regression => 1,
            Head::Classification { num_classes } => num_classes,
        }
    }

    /// `(fan_in, fan_out)` of every encoder layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layer_count());
        let mut fan_in = self.input_dim;
        for &w in &self.widths {
            for _ in 0..self.layers_per_block {
                shapes.push((fan_in, w));
                fan_in = w;
            }
        }
        shapes
    }

    pub fn any_enabled(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: Tensor,
    /// `fan_out`
    pub bias: Tensor,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.uniform(-a, a)).collect();
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Dense>,
    pub head: Dense,
}

impl Params {
    /// Glorot-uniform weights from `spec.seed`, zero biases.
    pub fn init(spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = SplitMix64::stream(spec.seed, "init");
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, &mut rng))
            .collect();
        let last = *spec.widths.last().expect("validated");
        let head = Dense::glorot(last, spec.output_dim(), &mut rng);
        Ok(Self { layers, head })
    }

    /// Tensors in storage order: each layer's weight then bias, head last.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|d| [&d.weight, &d.bias])
            .collect()
    }

    pub fn from_tensors(spec: &EncoderSpec, tensors: Vec<Tensor>) -> Result<Self> {
        let mut shapes = spec.layer_shapes();
        shapes.push((*spec.widths.last().unwrap_or(&0), spec.output_dim()));
        if tensors.len() != 2 * shapes.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                2 * shapes.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut dense = Vec::with_capacity(shapes.len());
        for (i, o) in shapes {
            let weight = it.next().expect("counted");
            let bias = it.next().expect("counted");
            if weight.shape() != [i, o] || bias.shape() != [o] {
                return Err(Error::Dimension {
                    op: "params",
                    lhs: vec![i, o],
                    rhs: weight.shape().to_vec(),
                });
            }
            dense.push(Dense { weight, bias });
        }
        let head = dense.pop().expect("non-empty");
        Ok(Self { layers: dense, head })
    }

    pub fn zeroed(spec: &EncoderSpec) -> Result<Self> {
        let p = Self::init(spec)?;
        let z = |d: &Dense| Dense {
            weight: Tensor::zeros(d.weight.shape()),
            bias: Tensor::zeros(d.bias.shape()),
        };
        Ok(Self {
            layers: p.layers.iter().map(z).collect(),
            head: z(&p.head),
        })
    }
}

/// Parameter leaves registered on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
    pub head: (Var, Var),
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &Params, trainable: bool) -> Self {
        let mut reg = |d: &Dense| {
            (
                tape.leaf(d.weight.clone(), trainable),
                tape.leaf(d.bias.clone(), trainable),
            )
        };
        let layers = params.layers.iter().map(&mut reg).collect();
        let head = reg(&params.head);
        Self { layers, head }
    }

    pub fn all(&self) -> Vec<Var> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

/// Head output and post-activation captures recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeForward {
    pub output: Var,
    /// `captures[block][layer]`, each `batch x width`.
    pub captures: Vec<Vec<Var>>,
}

pub fn forward_on_tape(
    tape: &mut Tape,
    spec: &EncoderSpec,
    params: &ParamVars,
    input: Var,
) -> Result<TapeForward> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 2 || shape[1] != spec.input_dim {
        return Err(Error::Dimension {
            op: "forward",
            lhs: vec![0, spec.input_dim],
            rhs: shape,
        });
    }
    let mut h = input;
    let mut captures = Vec::with_capacity(spec.blocks);
    let mut layers = params.layers.iter();
    for _ in 0..spec.blocks {
        let mut block = Vec::with_capacity(spec.layers_per_block);
        for _ in 0..spec.layers_per_block {
            let &(w, b) = layers.next().ok_or_else(|| Error::Config("too few layers".into()))?;
            let z = tape.matmul(h, w)?;
            let z = tape.bias_add(z, b)?;
            h = match spec.activation {
                Activation::Tanh => tape.tanh(z)?,
                Activation::Relu => tape.relu(z)?,
            };
            block.push(h);
        }
        captures.push(block);
    }
    let (w, b) = params.head;
    let z = tape.matmul(h, w)?;
    let output = tape.bias_add(z, b)?;
    Ok(TapeForward { output, captures })
}

/// Raw head values for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub head: Head,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl HeadOutput {
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.values.len() / self.rows.max(1);
        &self.values[i * c..(i + 1) * c]
    }

    /// Arg-max class per row (classification only).
    pub fn predictions(&self) -> Result<Vec<usize>> {
        let Head::Classification { .. } = self.head else {
            return Err(Error::Contract("predictions need a classification head".into()));
        };
        Ok((0..self.rows)
            .map(|i| {
                let r = self.row(i);
                (0..r.len()).fold(0, |best, j| if r[j] > r[best] { j } else { best })
            })
            .collect())
    }
}

/// Mean over the batch of the top-class softmax probability.
pub fn confidence(output: &HeadOutput) -> Result<f64> {
    let Head::Classification { num_classes } = output.head else {
        return Err(Error::Contract("confidence needs a classification head".into()));
    };
    if output.rows == 0 {
        return Err(Error::Contract("confidence of an empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..output.rows {
        let r = &output.values[i * num_classes..(i + 1) * num_classes];
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = r.iter().map(|v| (v - max).exp()).sum();
        total += 1.0 / denom;
    }
    Ok(total / output.rows as f64)
}

/// Forward pass without gradient tracking.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: HeadOutput,
    pub captures: Vec<Vec<Tensor>>,
}

impl Forward {
    pub fn capture_count(&self) -> usize {
        self.captures.iter().map(Vec::len).sum()
    }
}

pub fn forward_with_capture(spec: &EncoderSpec, params: &Params, batch: &Tensor) -> Result<Forward> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, false);
    let input = tape.constant(batch.clone());
    let fwd = forward_on_tape(&mut tape, spec, &vars, input)?;
    let out = tape.value(fwd.output);
    Ok(Forward {
        output: HeadOutput {
            head: spec.head,
            rows: out.shape()[0],
            values: out.data().to_vec(),
        },
        captures: fwd
            .captures
            .iter()
            .map(|b| b.iter().map(|&v| tape.value(v).clone()).collect())
            .collect(),
    })
}
