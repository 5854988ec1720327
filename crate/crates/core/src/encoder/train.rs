use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::entropy::{EntropyConfig, SampleAxis};
use crate::error::{Error, LayerCoord, Result};
use crate::regularizer::{eloss_from_captures, eloss_metric_from_features, ElossReport};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor, Var};

use super::task::{Dataset, Targets};
use super::{confidence, forward_on_tape, forward_with_capture, Dense, EncoderSpec, Head, ParamVars, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub entropy: EntropyConfig,
    /// Validation rows used for the per-epoch `L_b` readout; all when unset.
    #[serde(default)]
    pub eval_rows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 64,
            entropy: EntropyConfig::knn(1, SampleAxis::PositionsAsSamples),
            eval_rows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    /// Mean task loss over the epoch's steps.
    pub task_loss: f64,
    /// Mean E_loss over the epoch's steps.
    pub eloss: f64,
    /// Validation `L_b` per block.
    pub penalties: Vec<f64>,
    /// Accuracy, or negative MSE for regression.
    pub val_metric: f64,
    pub confidence: Option<f64>,
}

impl TrainRecord {
    pub fn mean_penalty(&self) -> f64 {
        if self.penalties.is_empty() {
            0.0
        } else {
            self.penalties.iter().sum::<f64>() / self.penalties.len() as f64
        }
    }

    pub fn csv_header(blocks: usize) -> Vec<String> {
        let mut h = vec!["epoch".to_string(), "task_loss".into(), "eloss".into()];
        h.extend((0..blocks).map(|b| format!("l_b{b}")));
        h.extend(["val_metric".to_string(), "confidence".into()]);
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![
            self.epoch.to_string(),
            self.task_loss.to_string(),
            self.eloss.to_string(),
        ];
        r.extend(self.penalties.iter().map(f64::to_string));
        r.push(self.val_metric.to_string());
        r.push(self.confidence.map(|c| c.to_string()).unwrap_or_default());
        r
    }

    pub fn from_csv_row(row: &[String], blocks: usize) -> Result<Self> {
        if row.len() != blocks + 5 {
            return Err(Error::Config(format!(
                "record row has {} fields, expected {}",
                row.len(),
                blocks + 5
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number in records: {s:?}")))
        };
        Ok(Self {
            epoch: row[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad epoch: {:?}", row[0])))?,
            task_loss: num(&row[1])?,
            eloss: num(&row[2])?,
            penalties: row[3..3 + blocks].iter().map(|s| num(s)).collect::<Result<_>>()?,
            val_metric: num(&row[3 + blocks])?,
            confidence: match row[4 + blocks].as_str() {
                "" => None,
                s => Some(num(s)?),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: Params,
    pub task_loss: f64,
    pub eloss: f64,
    pub objective: f64,
}

fn task_loss(tape: &mut Tape, head: Head, output: Var, targets: &Targets) -> Result<Var> {
    match (head, targets) {
        (Head::Classification { .. }, Targets::Classes(c)) => tape.softmax_cross_entropy(output, c),
        (Head::Regression, Targets::Values(v)) => {
            let t = tape.constant(Tensor::new(&[v.len(), 1], v.clone())?);
            let diff = tape.sub(output, t)?;
            let sq = tape.square(diff)?;
            tape.mean(sq)
        }
        _ => Err(Error::Contract("targets do not match the head type".into())),
    }
}

/// Records `task_loss + E_loss` for one batch and returns the tape, the
/// objective node and the parameter leaves.
fn record_objective(
    spec: &EncoderSpec,
    params: &Params,
    batch: &Dataset,
    entropy: &EntropyConfig,
) -> Result<(Tape, Var, Var, Option<Var>, ParamVars)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, true);
    let input = tape.constant(batch.inputs.clone());
    let fwd = forward_on_tape(&mut tape, spec, &vars, input)?;
    let task = task_loss(&mut tape, spec.head, fwd.output, &batch.targets)?;
    if !spec.any_enabled() {
        return Ok((tape, task, task, None, vars));
    }
    let blocks: Vec<usize> = (0..spec.blocks).filter(|&b| spec.mask[b]).collect();
    let enabled: Vec<Vec<Var>> = blocks.iter().map(|&b| fwd.captures[b].clone()).collect();
    let all = vec![true; enabled.len()];
    let eloss = eloss_from_captures(&mut tape, &enabled, entropy, spec.lambda, &all).map_err(|e| match e {
        Error::DegenerateSamples { rows, at: Some(c) } => Error::DegenerateSamples {
            rows,
            at: Some(LayerCoord {
                block: blocks[c.block],
                layer: c.layer,
            }),
        },
        other => other,
    })?;
    let objective = tape.add(task, eloss.total)?;
    Ok((tape, objective, task, Some(eloss.total), vars))
}

/// Scalar objective for a batch without recording gradients.
pub fn objective_value(spec: &EncoderSpec, params: &Params, batch: &Dataset, entropy: &EntropyConfig) -> Result<f64> {
    let (tape, objective, ..) = record_objective(spec, params, batch, entropy)?;
    Ok(tape.value(objective).data()[0])
}

/// One plain-SGD step on `task_loss + E_loss`. With an all-false mask no
/// entropy is computed at all.
pub fn train_step(
    spec: &EncoderSpec,
    params: &Params,
    batch: &Dataset,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let (mut tape, objective, task, eloss, vars) = record_objective(spec, params, batch, &cfg.entropy)?;
    let value = tape.value(objective).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "objective" });
    }
    tape.backward(objective)?;
    let lr = cfg.learning_rate;
    let update = |v: Var, t: &Tensor| -> Result<Tensor> {
        match tape.grad(v) {
            Some(g) => {
                let data = t.data().iter().zip(g.data()).map(|(p, g)| p - lr * g).collect();
                let out = Tensor::new(t.shape(), data)?;
                Ok(out)
            }
            None => Ok(t.clone()),
        }
    };
    let step = |vw: (Var, Var), d: &Dense| -> Result<Dense> {
        Ok(Dense {
            weight: update(vw.0, &d.weight)?,
            bias: update(vw.1, &d.bias)?,
        })
    };
    let layers = vars
        .layers
        .iter()
        .zip(&params.layers)
        .map(|(&v, d)| step(v, d))
        .collect::<Result<Vec<_>>>()?;
    let head = step(vars.head, &params.head)?;
    Ok(StepOutcome {
        params: Params { layers, head },
        task_loss: tape.value(task).data()[0],
        eloss: eloss.map_or(0.0, |e| tape.value(e).data()[0]),
        objective: value,
    })
}

/// Readout of a model on a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metric: f64,
    pub confidence: Option<f64>,
    /// Metric-mode breakdown over all blocks, using `spec.lambda` and `spec.mask`.
    pub report: ElossReport,
}

pub fn evaluate(spec: &EncoderSpec, params: &Params, data: &Dataset, entropy: &EntropyConfig) -> Result<Evaluation> {
    let fwd = forward_with_capture(spec, params, &data.inputs)?;
    let metric = match (&data.targets, spec.head) {
        (Targets::Classes(c), Head::Classification { .. }) => {
            let pred = fwd.output.predictions()?;
            pred.iter().zip(c).filter(|(p, t)| p == t).count() as f64 / c.len() as f64
        }
        (Targets::Values(v), Head::Regression) => {
            -v.iter()
                .zip(&fwd.output.values)
                .map(|(t, y)| (t - y) * (t - y))
                .sum::<f64>()
                / v.len() as f64
        }
        _ => return Err(Error::Contract("targets do not match the head type".into())),
    };
    let confidence = match spec.head {
        Head::Classification { .. } => Some(confidence(&fwd.output)?),
        Head::Regression => None,
    };
    let report = eloss_metric_from_features(&fwd.captures, entropy, spec.lambda, &spec.mask)?;
    Ok(Evaluation {
        metric,
        confidence,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Params,
    pub records: Vec<TrainRecord>,
    /// Wall-clock seconds of every `train_step` call.
    pub step_seconds: Vec<f64>,
    /// Validation readout after the last epoch.
    pub final_eval: Evaluation,
}

impl TrainOutcome {
    pub fn mean_step_seconds(&self) -> f64 {
        self.step_seconds.iter().sum::<f64>() / self.step_seconds.len().max(1) as f64
    }

    pub fn median_step_seconds(&self) -> f64 {
        let mut s = self.step_seconds.clone();
        s.sort_by(f64::total_cmp);
        match s.len() {
            0 => 0.0,
            n if n % 2 == 1 => s[n / 2],
            n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
        }
    }
}

fn permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut g = SplitMix64::stream(seed, &format!("shuffle/{epoch}"));
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = g.below(i + 1);
        p.swap(i, j);
    }
    p
}

/// Mini-batch SGD from `params`; incomplete trailing batches are dropped so
/// every entropy estimate sees `batch_size` samples.
pub fn train(
    spec: &EncoderSpec,
    mut params: Params,
    train_set: &Dataset,
    validation: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let n = train_set.rows();
    let steps = n / cfg.batch_size;
    if steps == 0 {
        return Err(Error::Config(format!(
            "{n} training rows cannot fill one batch of {}",
            cfg.batch_size
        )));
    }
    let eval_set = match cfg.eval_rows {
        Some(r) if r < validation.rows() => validation.select(&(0..r).collect::<Vec<_>>()),
        _ => validation.clone(),
    };
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step_seconds = Vec::with_capacity(cfg.epochs * steps);
    let mut last_eval = None;
    for epoch in 0..cfg.epochs {
        let perm = permutation(n, spec.seed, epoch);
        let (mut task_sum, mut eloss_sum) = (0.0, 0.0);
        for step in 0..steps {
            let batch = train_set.select(&perm[step * cfg.batch_size..(step + 1) * cfg.batch_size]);
            let start = Instant::now();
            let out = train_step(spec, &params, &batch, cfg).map_err(|e| match e {
                Error::NonFinite { op } => Error::TrainingDiverged {
                    epoch,
                    step,
                    message: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            step_seconds.push(start.elapsed().as_secs_f64());
            task_sum += out.task_loss;
            eloss_sum += out.eloss;
            params = out.params;
        }
        let eval = evaluate(spec, &params, &eval_set, &cfg.entropy)?;
        records.push(TrainRecord {
            epoch,
            task_loss: task_sum / steps as f64,
            eloss: eloss_sum / steps as f64,
            penalties: eval.report.breakdown.penalties(),
            val_metric: eval.metric,
            confidence: eval.confidence,
        });
        log::debug!("epoch {epoch}: val {:.4}", eval.metric);
        last_eval = Some(eval);
    }
    Ok(TrainOutcome {
        params,
        records,
        step_seconds,
        final_eval: last_eval.expect("at least one epoch"),
    })
}
