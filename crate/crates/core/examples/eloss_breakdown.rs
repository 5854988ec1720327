//! Per-block entropy trajectories, drop variances and the weighted total.

use eloss::encoder::{forward_with_capture, EncoderSpec, Head, Params, SyntheticTask};
use eloss::entropy::{EntropyConfig, SampleAxis};
use eloss::regularizer::{eloss_metric_from_features, variance_penalty};

fn main() -> eloss::Result<()> {
    println!("L_b([1, 2, 3]) = {}", variance_penalty(&[1.0, 2.0, 3.0])?);
    println!("L_b([-2, -2, -2]) = {}", variance_penalty(&[-2.0; 3])?);

    let spec = EncoderSpec {
        blocks: 2,
        layers_per_block: 4,
        widths: vec![16, 16],
        input_dim: 16,
        head: Head::Classification { num_classes: 2 },
        activation: Default::default(),
        lambda: 0.5,
        mask: vec![true, false],
        seed: 3,
    };
    let params = Params::init(&spec)?;
    let data = SyntheticTask::default().generate(256, "validation", spec.head)?;
    let fwd = forward_with_capture(&spec, &params, &data.inputs)?;
    let cfg = EntropyConfig::knn(1, SampleAxis::PositionsAsSamples);
    let report = eloss_metric_from_features(&fwd.captures, &cfg, spec.lambda, &spec.mask)?;

    for (t, term) in report.trajectories.iter().zip(&report.breakdown.blocks) {
        let h: Vec<String> = t.entropies.iter().map(|h| format!("{h:.3}")).collect();
        println!(
            "block {} enabled={} H=[{}] L_b={:.5} D_b={:.5}",
            t.block,
            term.enabled,
            h.join(", "),
            term.penalty,
            term.divergence
        );
    }
    println!("E_loss = {:.5}", report.breakdown.total);
    println!("{}", serde_json::to_string_pretty(&report.breakdown).unwrap());
    Ok(())
}
