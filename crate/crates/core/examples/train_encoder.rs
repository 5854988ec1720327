//! Train the block encoder with and without the regularizer from the same
//! initialization and compare the curves.
//!
//! ```text
//! cargo run --release --example train_encoder -- 60
//! ```

use eloss::audit::{curve_stats, paired_delta_table, MavpMode};
use eloss::encoder::{train, EncoderSpec, Head, Params, SyntheticTask, TrainConfig};

fn spec(lambda: f64, mask: Vec<bool>) -> EncoderSpec {
    EncoderSpec {
        blocks: 2,
        layers_per_block: 4,
        widths: vec![16, 16],
        input_dim: 16,
        head: Head::Classification { num_classes: 2 },
        activation: Default::default(),
        lambda,
        mask,
        seed: 1,
    }
}

fn main() -> eloss::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let task = SyntheticTask::default();
    let head = Head::Classification { num_classes: 2 };
    let train_set = task.generate(2_000, "train", head)?;
    let validation = task.generate(500, "validation", head)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };

    let plain = spec(0.0, vec![false, false]);
    let init = Params::init(&plain)?;
    let mut stats = Vec::new();
    for s in [plain, spec(1.0, vec![true, true])] {
        let out = train(&s, init.clone(), &train_set, &validation, &cfg)?;
        let last = out.records.last().unwrap();
        println!(
            "lambda={} acc={:.3} mean L_b={:.5} median step {:.3} ms",
            s.lambda,
            last.val_metric,
            last.mean_penalty(),
            1e3 * out.median_step_seconds()
        );
        for t in &out.final_eval.report.trajectories {
            let h: Vec<String> = t.entropies.iter().map(|h| format!("{h:.2}")).collect();
            println!("  block {}: {}", t.block, h.join(" -> "));
        }
        stats.push(curve_stats(&out.records, "val_metric", 1, MavpMode::AbsDiff)?);
    }
    println!("{:<10} {:>10} {:>10}", "", "max", "mavp");
    for row in paired_delta_table(&stats[0], &stats[1]) {
        println!("{:<10} {:>10.4} {:>10.5}", row.label, row.max, row.mavp);
    }
    Ok(())
}
