//! Calibrate a tolerance band on clean batches, then audit clean and
//! corrupted batches. Compares the entropy signal with softmax confidence.
//!
//! ```text
//! cargo run --release --example anomaly_audit
//! ```

use eloss::audit::{audit, percent_delta};
use eloss::corruption::CorruptionConfig;
use eloss::encoder::{
    calibrate_model_band, calibration_batch, confidence, forward_with_capture, train, ExperimentConfig, Params,
};
use eloss::regularizer::eloss_metric_from_features;

fn main() -> eloss::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 60;
    let spec = cfg.spec(2)?;
    let task = cfg.task();
    let train_set = task.generate(cfg.task.train_rows, "train", spec.head)?;
    let validation = task.generate(cfg.task.validation_rows, "validation", spec.head)?;
    let params = train(&spec, Params::init(&spec)?, &train_set, &validation, &cfg.train_config())?.params;

    let band = calibrate_model_band(&spec, &params, &task, &cfg.entropy, &cfg.audit)?;
    println!("band from {} clean batches, z = {}", band.n_calib, band.z);
    for b in &band.blocks {
        println!("  block {}: mean {:.5} std {:.5}", b.block, b.mean, b.std);
    }

    let corruptions = [
        ("clean", None),
        ("gaussian", Some(CorruptionConfig::gaussian(1.0, 1))),
        ("salt_pepper", Some(CorruptionConfig::salt_pepper(0.1, 1))),
    ];
    let held_out = calibration_batch(&task, spec.head, cfg.audit.batch_rows, 1_000)?;
    let base = forward_with_capture(&spec, &params, &held_out.inputs)?;
    let base_conf = confidence(&base.output)?;
    for (name, c) in corruptions {
        let input = match c {
            Some(c) => c.apply(&held_out.inputs)?,
            None => held_out.inputs.clone(),
        };
        let fwd = forward_with_capture(&spec, &params, &input)?;
        let report = eloss_metric_from_features(&fwd.captures, &cfg.entropy, spec.lambda, &spec.mask)?;
        let v = audit(&report.breakdown, &band)?;
        let conf = confidence(&fwd.output)?;
        println!(
            "{name:<12} flag={:<5} max z={:>9.2}  E_loss %delta={:>9.1}  confidence %delta={:>6.2}",
            v.flag,
            v.max_z,
            v.percent_delta.unwrap_or(f64::NAN),
            percent_delta(base_conf, conf)?
        );
    }
    Ok(())
}
