use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{calibrate_band, curve_stats, MavpMode, ToleranceBand, DEFAULT_Z};
use crate::entropy::{EntropyConfig, SampleAxis};
use crate::error::{Error, Result};
use crate::io::run::{self, RunDir};
use crate::regularizer::eloss_metric_from_features;

use super::task::{Dataset, SyntheticTask};
use super::train::{train, TrainConfig, TrainOutcome};
use super::{forward_with_capture, Activation, EncoderSpec, Head, Params};

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "ELOSS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderLayout {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

impl Default for EncoderLayout {
    fn default() -> Self {
        Self {
            blocks: 2,
            layers_per_block: 4,
            widths: vec![16, 16],
            activation: Activation::Tanh,
            head: Head::Classification { num_classes: 2 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSettings {
    pub informative_dims: usize,
    pub nuisance_dims: usize,
    pub noise_std: f64,
    pub train_rows: usize,
    pub validation_rows: usize,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            informative_dims: 4,
            nuisance_dims: 12,
            noise_std: 0.0,
            train_rows: 2000,
            validation_rows: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_rows: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            eval_rows: t.eval_rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub z: f64,
    pub calibration_batches: usize,
    pub batch_rows: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            z: DEFAULT_Z,
            calibration_batches: 50,
            batch_rows: 256,
        }
    }
}

/// Contents of a `train --config` file. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lambda: f64,
    pub encoder: EncoderLayout,
    pub task: TaskSettings,
    pub train: TrainSettings,
    pub entropy: EntropyConfig,
    /// Numbers of leading blocks with E_loss enabled, one run each.
    pub sweep: Vec<usize>,
    pub audit: AuditSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lambda: 1.0,
            encoder: EncoderLayout::default(),
            task: TaskSettings::default(),
            train: TrainSettings::default(),
            entropy: EntropyConfig::knn(1, SampleAxis::PositionsAsSamples),
            sweep: vec![0, 1, 2],
            audit: AuditSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config and applies the seed override from the environment.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg: Self = run::read_json(path)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn task(&self) -> SyntheticTask {
        SyntheticTask {
            input_dim: self.task.informative_dims + self.task.nuisance_dims,
            informative_dims: self.task.informative_dims,
            nuisance_dims: self.task.nuisance_dims,
            noise_std: self.task.noise_std,
            seed: self.seed,
        }
    }

    /// Spec with the first `enabled` blocks carrying E_loss.
    pub fn spec(&self, enabled: usize) -> Result<EncoderSpec> {
        let l = &self.encoder;
        if enabled > l.blocks {
            return Err(Error::Config(format!(
                "sweep asks for {enabled} enabled blocks but the encoder has {}",
                l.blocks
            )));
        }
        let spec = EncoderSpec {
            blocks: l.blocks,
            layers_per_block: l.layers_per_block,
            widths: l.widths.clone(),
            input_dim: self.task.informative_dims + self.task.nuisance_dims,
            head: l.head,
            activation: l.activation,
            lambda: self.lambda,
            mask: (0..l.blocks).map(|b| b < enabled).collect(),
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            entropy: self.entropy.clone(),
            eval_rows: self.train.eval_rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task().validate()?;
        self.train_config().validate()?;
        if self.sweep.is_empty() {
            return Err(Error::Config("sweep must list at least one block count".into()));
        }
        for &c in &self.sweep {
            self.spec(c)?;
        }
        if self.audit.calibration_batches < 2 {
            return Err(Error::InsufficientCalibration {
                got: self.audit.calibration_batches,
            });
        }
        if self.audit.batch_rows < 2 {
            return Err(Error::Config("audit batch_rows must be at least 2".into()));
        }
        Ok(())
    }
}

/// Resolved configuration written to each run's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub enabled_blocks: usize,
    pub spec: EncoderSpec,
    /// See [`settings_hash`].
    pub settings_hash: String,
}

/// SHA-256 over the architecture and estimator settings that determine the
/// distribution of `L_b`. The E_loss weight and mask are not included.
pub fn settings_hash(spec: &EncoderSpec, entropy: &EntropyConfig) -> String {
    let doc = serde_json::json!({
        "blocks": spec.blocks,
        "layers_per_block": spec.layers_per_block,
        "widths": spec.widths,
        "input_dim": spec.input_dim,
        "activation": spec.activation,
        "head": spec.head,
        "entropy": entropy,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

/// Fresh clean batch `index` from the calibration stream.
pub fn calibration_batch(task: &SyntheticTask, head: Head, rows: usize, index: usize) -> Result<Dataset> {
    task.generate(rows, &format!("calibration/{index}"), head)
}

/// Band from `audit.calibration_batches` clean batches of `audit.batch_rows`.
pub fn calibrate_model_band(
    spec: &EncoderSpec,
    params: &Params,
    task: &SyntheticTask,
    entropy: &EntropyConfig,
    audit: &AuditSettings,
) -> Result<ToleranceBand> {
    let breakdowns = (0..audit.calibration_batches)
        .map(|i| {
            let batch = calibration_batch(task, spec.head, audit.batch_rows, i)?;
            let fwd = forward_with_capture(spec, params, &batch.inputs)?;
            Ok(eloss_metric_from_features(&fwd.captures, entropy, spec.lambda, &spec.mask)?.breakdown)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(calibrate_band(&breakdowns, audit.z)?.with_settings_hash(settings_hash(spec, entropy)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub enabled_blocks: usize,
    pub final_val_metric: f64,
    pub max_val_metric: f64,
    pub mavp_abs_diff: f64,
    pub final_mean_penalty: f64,
    pub mean_step_ms: f64,
    pub median_step_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub enabled_blocks: usize,
    pub dir: PathBuf,
    pub spec: EncoderSpec,
    pub outcome: TrainOutcome,
    /// Parameters as stored in `params.bin` (rounded to `f32`).
    pub stored_params: Params,
    pub band: ToleranceBand,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunArtifacts>,
}

#[derive(Serialize)]
struct Timing {
    steps: usize,
    mean_step_seconds: f64,
    median_step_seconds: f64,
}

/// Train one model per sweep entry from a shared initialization and write
/// `blocks_<k>/` run directories plus `sweep.csv` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<SweepSummary> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let task = cfg.task();
    let head = cfg.encoder.head;
    let train_set = task.generate(cfg.task.train_rows, "train", head)?;
    let validation = task.generate(cfg.task.validation_rows, "validation", head)?;
    let init = Params::init(&cfg.spec(0)?)?;
    let tc = cfg.train_config();

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &enabled in &cfg.sweep {
        let spec = cfg.spec(enabled)?;
        log::info!("training with E_loss on {enabled} of {} blocks", spec.blocks);
        let outcome = train(&spec, init.clone(), &train_set, &validation, &tc)?;
        let dir = RunDir::new(out_dir.join(format!("blocks_{enabled}")));
        dir.create()?;
        let hash = settings_hash(&spec, &cfg.entropy);
        run::write_json(
            dir.file(run::CONFIG_FILE),
            &RunConfig {
                experiment: cfg.clone(),
                enabled_blocks: enabled,
                spec: spec.clone(),
                settings_hash: hash,
            },
        )?;
        run::write_records(dir.file(run::RECORDS_FILE), &outcome.records, spec.blocks)?;
        run::write_params(dir.file(run::PARAMS_FILE), &outcome.params)?;
        run::write_json(dir.file(run::BREAKDOWN_FILE), &outcome.final_eval.report)?;
        let stored_params = run::read_params(dir.file(run::PARAMS_FILE), &spec)?;
        let band = calibrate_model_band(&spec, &stored_params, &task, &cfg.entropy, &cfg.audit)?;
        run::write_json(dir.file(run::BAND_FILE), &band)?;
        run::write_json(
            dir.file(run::TIMING_FILE),
            &Timing {
                steps: outcome.step_seconds.len(),
                mean_step_seconds: outcome.mean_step_seconds(),
                median_step_seconds: outcome.median_step_seconds(),
            },
        )?;
        let last = outcome.records.last().expect("epochs >= 1");
        let val = curve_stats(&outcome.records, "val_metric", 1, MavpMode::AbsDiff).ok();
        rows.push(SweepRow {
            enabled_blocks: enabled,
            final_val_metric: last.val_metric,
            max_val_metric: val.as_ref().map_or(last.val_metric, |v| v.max),
            mavp_abs_diff: val.map_or(0.0, |v| v.mavp),
            final_mean_penalty: last.mean_penalty(),
            mean_step_ms: 1e3 * outcome.mean_step_seconds(),
            median_step_ms: 1e3 * outcome.median_step_seconds(),
        });
        runs.push(RunArtifacts {
            enabled_blocks: enabled,
            dir: dir.0,
            spec,
            outcome,
            stored_params,
            band,
        });
    }
    write_sweep_table(out_dir.join("sweep.csv"), &rows)?;
    Ok(SweepSummary { rows, runs })
}

pub fn write_sweep_table(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            seed: 5,
            encoder: EncoderLayout {
                blocks: 2,
                layers_per_block: 3,
                widths: vec![6, 6],
                ..EncoderLayout::default()
            },
            task: TaskSettings {
                train_rows: 96,
                validation_rows: 40,
                ..TaskSettings::default()
            },
            train: TrainSettings {
                epochs: 2,
                batch_size: 32,
                ..TrainSettings::default()
            },
            audit: AuditSettings {
                calibration_batches: 4,
                batch_rows: 32,
                ..AuditSettings::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_parses_from_empty_object() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn sweep_shares_initialization_and_writes_runs() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&small(), dir.path()).unwrap();
        assert_eq!(s.runs.len(), 3);
        assert_eq!(s.rows.len(), 3);
        for r in &s.runs {
            for f in [run::CONFIG_FILE, run::RECORDS_FILE, run::PARAMS_FILE, run::BREAKDOWN_FILE, run::BAND_FILE] {
                assert!(r.dir.join(f).exists(), "{f}");
            }
            assert_eq!(r.outcome.records.len(), 2);
        }
        assert!(dir.path().join("sweep.csv").exists());
        let back = run::read_records(s.runs[1].dir.join(run::RECORDS_FILE)).unwrap();
        assert_eq!(back, s.runs[1].outcome.records);
    }

    #[test]
    fn sweep_beyond_block_count_is_rejected() {
        let mut cfg = small();
        cfg.sweep = vec![3];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn settings_hash_ignores_lambda_and_mask() {
        let cfg = small();
        let a = cfg.spec(0).unwrap();
        let mut b = cfg.spec(2).unwrap();
        b.lambda = 7.0;
        assert_eq!(settings_hash(&a, &cfg.entropy), settings_hash(&b, &cfg.entropy));
        let mut c = a.clone();
        c.widths = vec![5, 6];
        assert_ne!(settings_hash(&a, &cfg.entropy), settings_hash(&c, &cfg.entropy));
    }
}
