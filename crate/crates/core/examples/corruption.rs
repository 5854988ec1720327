//! Seeded Gaussian and salt-and-pepper corruption of a feature batch.

use eloss::corruption::{CorruptionConfig, DEFAULT_FRACTION};
use eloss::encoder::{Head, SyntheticTask};

fn summary(name: &str, data: &[f64]) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("{name:<12} mean {mean:>8.4}  std {:>7.4}  min {lo:>8.4}  max {hi:>8.4}", var.sqrt());
}

fn main() -> eloss::Result<()> {
    let clean = SyntheticTask::default()
        .generate(256, "validation", Head::Classification { num_classes: 2 })?
        .inputs;
    summary("clean", clean.data());

    let noise1 = CorruptionConfig::gaussian(1.0, 42).apply(&clean)?;
    summary("gaussian", noise1.data());

    let noise2 = CorruptionConfig::salt_pepper(DEFAULT_FRACTION, 42).apply(&clean)?;
    summary("salt_pepper", noise2.data());
    let changed = clean.data().iter().zip(noise2.data()).filter(|(a, b)| a != b).count();
    println!("salt_pepper changed {changed} of {} entries", clean.numel());

    let again = CorruptionConfig::salt_pepper(DEFAULT_FRACTION, 42).apply(&clean)?;
    println!("same seed, same output: {}", again == noise2);
    Ok(())
}
