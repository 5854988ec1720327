//! Run reports: JSON document, CSV tables and SVG plots.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{audit, curve_stats, AnomalyVerdict, CurveStats, MavpMode, ToleranceBand};
use crate::encoder::{calibration_batch, evaluate, forward_with_capture, Evaluation, RunConfig, TrainRecord};
use crate::entropy::{features_to_samples, SampleAxis};
use crate::error::{Error, Result};
use crate::regularizer::{ElossBreakdown, EntropyTrajectory, ElossReport};

use super::pca::{pca2_summary, Pca2Summary, PcaNormalization};
use super::plot::{line_chart, Series};
use super::run::{self, RunDir};

/// Published schema for [`ReportDocument`].
pub const REPORT_SCHEMA: &str = include_str!("../../schemas/report.schema.json");

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// SHA-256 of the run's `config.json` bytes.
    pub config_hash: String,
    pub seed: u64,
    pub enabled_blocks: usize,
    pub epochs: usize,
    pub generated_unix: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPca {
    pub block: usize,
    pub layer: usize,
    pub summary: Pca2Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub meta: ReportMeta,
    pub evaluations: Vec<ElossBreakdown>,
    pub trajectories: Vec<EntropyTrajectory>,
    /// Audit of a held-out clean batch against the run's band.
    pub verdict: Option<AnomalyVerdict>,
    pub pca: Vec<LayerPca>,
    pub curves: Vec<CurveStats>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    pub pca: bool,
    pub curves: bool,
}

/// Files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportOutputs {
    pub document: ReportDocument,
    pub files: Vec<PathBuf>,
}

const CURVE_METRICS: [&str; 4] = ["val_metric", "task_loss", "eloss", "mean_penalty"];

pub fn build_report(dir: &Path, opts: ReportOptions) -> Result<ReportDocument> {
    let run = RunDir::new(dir);
    let config_path = run.file(run::CONFIG_FILE);
    let config_bytes = std::fs::read(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let cfg: RunConfig = serde_json::from_slice(&config_bytes).map_err(|e| Error::json(&config_path, e))?;
    let records = run::read_records(run.file(run::RECORDS_FILE))?;
    let final_report: ElossReport = run::read_json(run.file(run::BREAKDOWN_FILE))?;
    let spec = &cfg.spec;
    let entropy = &cfg.experiment.entropy;

    let band_path = run.file(run::BAND_FILE);
    let verdict = if band_path.exists() {
        let band: ToleranceBand = run::read_json(&band_path)?;
        let params = run::read_params(run.file(run::PARAMS_FILE), spec)?;
        let task = cfg.experiment.task();
        let batch = calibration_batch(&task, spec.head, cfg.experiment.audit.batch_rows, usize::MAX)?;
        let eval: Evaluation = evaluate(spec, &params, &batch, entropy)?;
        Some(audit(&eval.report.breakdown, &band)?)
    } else {
        None
    };

    let mut pca = Vec::new();
    if opts.pca {
        let params = run::read_params(run.file(run::PARAMS_FILE), spec)?;
        let task = cfg.experiment.task();
        let rows = cfg.experiment.task.validation_rows;
        let batch = task.generate(rows, "validation", spec.head)?;
        let fwd = forward_with_capture(spec, &params, &batch.inputs)?;
        for (b, layers) in fwd.captures.iter().enumerate() {
            for (l, t) in layers.iter().enumerate() {
                let s = features_to_samples(t, SampleAxis::PositionsAsSamples)?;
                match pca2_summary(&s, PcaNormalization::default()) {
                    Ok(summary) => pca.push(LayerPca { block: b, layer: l, summary }),
                    Err(e) => log::warn!("no PCA summary for block {b} layer {l}: {e}"),
                }
            }
        }
    }

    let mut curves = Vec::new();
    if opts.curves && records.len() >= 2 {
        for m in CURVE_METRICS {
            for mode in [MavpMode::Verbatim, MavpMode::AbsDiff] {
                curves.push(curve_stats(&records, m, 1, mode)?);
            }
        }
    }

    Ok(ReportDocument {
        meta: ReportMeta {
            config_hash: hex::encode(Sha256::digest(&config_bytes)),
            seed: cfg.experiment.seed,
            enabled_blocks: cfg.enabled_blocks,
            epochs: records.len(),
            generated_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        evaluations: vec![final_report.breakdown],
        trajectories: final_report.trajectories,
        verdict,
        pca,
        curves,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_table(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Builds the report for `dir` and writes `report.json`, the entropy
/// trajectory table and plot, and with `curves` the training-curve table
/// and plot, all into `dir`.
pub fn write_report(dir: &Path, opts: ReportOptions) -> Result<ReportOutputs> {
    let document = build_report(dir, opts)?;
    let mut files = Vec::new();

    let path = dir.join(REPORT_FILE);
    run::write_json(&path, &document)?;
    files.push(path);

    let header: Vec<String> = ["block", "layer", "entropy_nats"].map(String::from).to_vec();
    let rows = document.trajectories.iter().flat_map(|t| {
        t.entropies
            .iter()
            .enumerate()
            .map(move |(l, h)| vec![t.block.to_string(), l.to_string(), h.to_string()])
    });
    let path = dir.join("trajectories.csv");
    write_text(&path, &csv_table(&header, rows))?;
    files.push(path);
    let series: Vec<Series> = document
        .trajectories
        .iter()
        .map(|t| Series::indexed(format!("block {}", t.block), &t.entropies))
        .collect();
    let path = dir.join("trajectories.svg");
    write_text(&path, &line_chart("Layer entropy by block", "layer", "entropy (nats)", &series))?;
    files.push(path);

    if opts.curves {
        let records = run::read_records(dir.join(run::RECORDS_FILE))?;
        let blocks = records.first().map_or(0, |r| r.penalties.len());
        let path = dir.join("curves.csv");
        write_text(
            &path,
            &csv_table(&TrainRecord::csv_header(blocks), records.iter().map(TrainRecord::csv_row)),
        )?;
        files.push(path);
        let pick = |f: fn(&TrainRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
        let path = dir.join("curves.svg");
        let series = [
            Series::indexed("validation metric", &pick(|r| r.val_metric)),
            Series::indexed("task loss", &pick(|r| r.task_loss)),
            Series::indexed("mean L_b", &pick(TrainRecord::mean_penalty)),
        ];
        write_text(&path, &line_chart("Training curves", "epoch", "value", &series))?;
        files.push(path);
        let path = dir.join("curve_stats.csv");
        let header: Vec<String> = ["metric", "mode", "window", "max", "mavp"].map(String::from).to_vec();
        let rows = document.curves.iter().map(|c| {
            vec![
                c.metric.clone(),
                match c.mode {
                    MavpMode::Verbatim => "verbatim".into(),
                    MavpMode::AbsDiff => "abs_diff".into(),
                },
                c.window.to_string(),
                c.max.to_string(),
                c.mavp.to_string(),
            ]
        });
        write_text(&path, &csv_table(&header, rows))?;
        files.push(path);
    }

    if opts.pca && !document.pca.is_empty() {
        let header: Vec<String> = [
            "block", "layer", "explained_1", "explained_2", "mean_1", "std_1", "mean_2", "std_2", "degenerate",
        ]
        .map(String::from)
        .to_vec();
        let rows = document.pca.iter().map(|p| {
            let s = &p.summary;
            vec![
                p.block.to_string(),
                p.layer.to_string(),
                s.explained[0].to_string(),
                s.explained[1].to_string(),
                s.fits[0].mean.to_string(),
                s.fits[0].std.to_string(),
                s.fits[1].mean.to_string(),
                s.fits[1].std.to_string(),
                s.second_axis_degenerate.to_string(),
            ]
        });
        let path = dir.join("pca.csv");
        write_text(&path, &csv_table(&header, rows))?;
        files.push(path);
    }

    Ok(ReportOutputs { document, files })
}
