//! Enable the regularizer on 0, 1 and 2 blocks and tabulate accuracy
//! against per-step cost. Writes run directories under a temp dir.

use eloss::encoder::ExperimentConfig;
use eloss::encoder::run_experiment;

fn main() -> eloss::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    cfg.sweep = vec![0, 1, 2];
    let out = std::env::temp_dir().join("eloss-coverage-sweep");
    let summary = run_experiment(&cfg, &out)?;
    println!("{:>7} {:>9} {:>9} {:>11} {:>9}", "blocks", "final", "max", "mean L_b", "ms/step");
    for r in &summary.rows {
        println!(
            "{:>7} {:>9.4} {:>9.4} {:>11.5} {:>9.3}",
            r.enabled_blocks, r.final_val_metric, r.max_val_metric, r.final_mean_penalty, r.median_step_ms
        );
    }
    println!("runs written to {}", out.display());
    Ok(())
}
