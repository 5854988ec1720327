//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 anomaly
//! flagged by `audit`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::audit::{audit, AnomalyVerdict, ToleranceBand};
use crate::corruption::CorruptionConfig;
use crate::encoder::{forward_with_capture, run_experiment, settings_hash, ExperimentConfig, RunConfig};
use crate::entropy::{features_to_samples, EntropyConfig, Estimator, KnnEstimator, SampleAxis};
use crate::error::{Error, Result};
use crate::io::report::{write_report, ReportOptions};
use crate::io::run::{self, RunDir};
use crate::io::{elft_read, elft_write};
use crate::regularizer::eloss_metric_from_features;
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ANOMALY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "eloss", version, about = "Layer-entropy regularization, estimation and auditing")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    #[value(alias = "channels", alias = "channels_as_samples")]
    ChannelsAsSamples,
    #[value(alias = "positions", alias = "positions_as_samples")]
    PositionsAsSamples,
}

impl From<AxisArg> for SampleAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::ChannelsAsSamples => SampleAxis::ChannelsAsSamples,
            AxisArg::PositionsAsSamples => SampleAxis::PositionsAsSamples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Knn,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Gaussian,
    Saltpepper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the mask sweep described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving `blocks_<k>/` runs and `sweep.csv`.
        #[arg(long, default_value = "runs")]
        output: PathBuf,
    },
    /// Print the differential entropy (nats) of an ELFT tensor.
    Entropy {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_enum)]
        mode: AxisArg,
        #[arg(long, value_enum, default_value = "knn")]
        estimator: EstimatorArg,
        /// Retry degenerate samples once with seeded 1e-9 jitter.
        #[arg(long)]
        jitter_seed: Option<u64>,
    },
    /// Write a corrupted copy of an ELFT tensor.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        noise: NoiseArg,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = crate::corruption::DEFAULT_FRACTION)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Audit an input batch against a calibrated band; exits 3 when flagged.
    Audit {
        #[arg(long)]
        input: PathBuf,
        /// Run directory holding `config.json` and `params.bin`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        band: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write report.json, tables and plots into a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        pca: bool,
        #[arg(long)]
        curves: bool,
    },
}

/// Parse `args` (including the program name) and execute. Never panics on
/// bad input; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

/// Tensors read from disk: a rank-1 tensor becomes a single column.
fn read_features(path: &PathBuf) -> Result<Tensor> {
    let t = elft_read(path)?;
    if t.rank() == 1 {
        let n = t.numel();
        return t.reshape(&[n, 1]);
    }
    Ok(t)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    let w = |out: &mut dyn Write, s: String| -> Result<()> {
        writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
    };
    match command {
        Command::Train { config, output } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let summary = run_experiment(&cfg, &output)?;
            w(out, "enabled_blocks,final_val_metric,max_val_metric,mavp_abs_diff,final_mean_penalty,mean_step_ms".into())?;
            for r in &summary.rows {
                w(
                    out,
                    format!(
                        "{},{:.4},{:.4},{:.5},{:.6},{:.4}",
                        r.enabled_blocks,
                        r.final_val_metric,
                        r.max_val_metric,
                        r.mavp_abs_diff,
                        r.final_mean_penalty,
                        r.mean_step_ms
                    ),
                )?;
            }
            Ok(EXIT_OK)
        }
        Command::Entropy {
            input,
            k,
            mode,
            estimator,
            jitter_seed,
        } => {
            let cfg = EntropyConfig {
                estimator: match estimator {
                    EstimatorArg::Knn => Estimator::Knn,
                    EstimatorArg::Gaussian => Estimator::GaussianDiag,
                },
                knn: KnnEstimator {
                    jitter: jitter_seed,
                    ..KnnEstimator::new(k)
                },
                axis: mode.into(),
            };
            let t = read_features(&input)?;
            let s = features_to_samples(&t, cfg.axis)?;
            let h = cfg.estimate_samples(&s)?;
            w(out, format!("{}", h.value))?;
            Ok(EXIT_OK)
        }
        Command::Corrupt {
            input,
            noise,
            sigma,
            fraction,
            seed,
            output,
        } => {
            let t = elft_read(&input)?;
            let cfg = match noise {
                NoiseArg::Gaussian => CorruptionConfig::gaussian(sigma, seed),
                NoiseArg::Saltpepper => CorruptionConfig::salt_pepper(fraction, seed),
            };
            elft_write(&cfg.apply(&t)?, &output)?;
            Ok(EXIT_OK)
        }
        Command::Audit {
            input,
            model,
            band,
            json,
        } => {
            let dir = RunDir::new(model);
            let rc: RunConfig = run::read_json(dir.file(run::CONFIG_FILE))?;
            let band: ToleranceBand = run::read_json(&band)?;
            let entropy = &rc.experiment.entropy;
            band.check_settings(&settings_hash(&rc.spec, entropy))?;
            let params = run::read_params(dir.file(run::PARAMS_FILE), &rc.spec)?;
            let batch = read_features(&input)?;
            if batch.shape()[0] != rc.experiment.audit.batch_rows {
                log::warn!(
                    "input has {} rows; the band was calibrated on batches of {}",
                    batch.shape()[0],
                    rc.experiment.audit.batch_rows
                );
            }
            let fwd = forward_with_capture(&rc.spec, &params, &batch)?;
            let report = eloss_metric_from_features(&fwd.captures, entropy, rc.spec.lambda, &rc.spec.mask)?;
            let verdict = audit(&report.breakdown, &band)?;
            if json {
                let text = serde_json::to_string_pretty(&verdict).map_err(|e| Error::json("<stdout>", e))?;
                w(out, text)?;
            } else {
                w(out, describe(&verdict))?;
            }
            Ok(if verdict.flag { EXIT_ANOMALY } else { EXIT_OK })
        }
        Command::Report { run, pca, curves } => {
            let outputs = write_report(&run, ReportOptions { pca, curves })?;
            for f in outputs.files {
                w(out, f.display().to_string())?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn describe(v: &AnomalyVerdict) -> String {
    let mut s = format!(
        "{} (max z {:.3}, threshold {})\n",
        if v.flag { "ANOMALY" } else { "nominal" },
        v.max_z,
        v.z
    );
    for b in &v.blocks {
        s.push_str(&format!("block {}: L_b {:.6e}  z {:.3}\n", b.block, b.observed, b.z_score));
    }
    match v.percent_delta {
        Some(p) => s.push_str(&format!("total L_b {:.6e} ({p:.1}% from nominal)", v.observed_total)),
        None => s.push_str(&format!("total L_b {:.6e}", v.observed_total)),
    }
    s
}
