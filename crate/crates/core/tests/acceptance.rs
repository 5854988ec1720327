//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each. Exits non-zero when a criterion outside
//! `KNOWN_UNMET` fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use eloss::audit::{audit, mavp, percent_delta, record_series, MavpMode};
use eloss::corruption::gaussian_noise;
use eloss::encoder::{
    calibration_batch, confidence, forward_with_capture, run_experiment, ExperimentConfig, SweepSummary,
};
use eloss::entropy::{EntropyConfig, KnnEstimator, SampleAxis, SampleMatrix};
use eloss::io::elft::{decode, encode};
use eloss::io::{elft_read, elft_write};
use eloss::regularizer::{
    eloss_from_captures, eloss_metric, eloss_metric_from_features, entropy_drops, variance_penalty,
};
use eloss::rng::SplitMix64;
use eloss::{Tape, Tensor};

/// Criteria whose direction this reference setup does not reproduce.
const KNOWN_UNMET: &[u32] = &[8];

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn gaussian_samples(seed: u64, n: usize, sigmas: &[f64]) -> SampleMatrix {
    let mut rng = SplitMix64::stream(seed, "acceptance/gaussian");
    let d = sigmas.len();
    let values = (0..n * d).map(|i| sigmas[i % d] * rng.normal()).collect();
    SampleMatrix::new(n, d, values).unwrap()
}

fn knn(k: usize) -> KnnEstimator {
    KnnEstimator::new(k)
}

fn c1_estimator_accuracy() -> Verdict {
    let h1 = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let sigmas3 = [1.0, 2.0, 0.5];
    let h3 = 3.0 * h1 + (1.0f64 * 2.0 * 0.5).ln();
    let (mut e1, mut e3, mut slowest) = (Vec::new(), Vec::new(), 0.0f64);
    for seed in 0..20 {
        for (sig, truth, errs) in [(&[1.0][..], h1, &mut e1), (&sigmas3[..], h3, &mut e3)] {
            let s = gaussian_samples(seed, 10_000, sig);
            let t = Instant::now();
            let h = knn(1).estimate(&s).unwrap().value;
            slowest = slowest.max(t.elapsed().as_secs_f64());
            errs.push((h - truth).abs());
        }
    }
    let (m1, m3) = (median(&e1), median(&e3));
    Verdict {
        id: 1,
        title: "entropy estimator accuracy",
        pass: m1 <= 0.05 && m3 <= 0.10 && slowest <= 2.0,
        detail: format!("median |err| d=1 {m1:.4} (<= 0.05), d=3 {m3:.4} (<= 0.10), slowest {slowest:.3}s (<= 2s)"),
    }
}

fn c2_scaling_identity() -> Verdict {
    let mut worst = 0.0f64;
    for (seed, sig) in [(7u64, &[1.0][..]), (8, &[1.0, 2.0, 0.5][..]), (9, &[0.3; 6][..])] {
        let s = gaussian_samples(seed, 2_000, sig);
        let base = knn(1).estimate(&s).unwrap().value;
        for c in [0.5, 2.0, 10.0] {
            let scaled = s.map(|v| c * v).unwrap();
            let h = knn(1).estimate(&scaled).unwrap().value;
            worst = worst.max((h - base - s.d() as f64 * f64::ln(c)).abs());
        }
    }
    Verdict {
        id: 2,
        title: "scaling identity",
        pass: worst <= 1e-9,
        detail: format!("max |H(cX) - H(X) - d ln c| = {worst:.3e} (<= 1e-9)"),
    }
}

/// Smallest gap between first and second neighbour distance over all points.
fn min_neighbor_gap(s: &SampleMatrix) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..s.n() {
        let mut d: Vec<f64> = (0..s.n())
            .filter(|&j| j != i)
            .map(|j| {
                s.row(i)
                    .iter()
                    .zip(s.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        gap = gap.min(d[1] - d[0]);
    }
    gap
}

fn c3_gradient_check() -> Verdict {
    let (n, d, layers) = (64, 8, 3);
    let cfg = EntropyConfig::knn(1, SampleAxis::PositionsAsSamples);
    let mut rng = SplitMix64::stream(2024, "acceptance/gradient");
    let mut captures: Vec<Vec<f64>> = (0..layers)
        .map(|l| (0..n * d).map(|_| (1.0 + l as f64) * rng.normal()).collect())
        .collect();
    // Redraw until no layer sits near a neighbour tie.
    while captures
        .iter()
        .any(|c| min_neighbor_gap(&SampleMatrix::new(n, d, c.clone()).unwrap()) < 1e-3)
    {
        captures = (0..layers).map(|_| (0..n * d).map(|_| rng.normal()).collect()).collect();
    }

    let mut tape = Tape::new();
    let vars: Vec<_> = captures
        .iter()
        .map(|c| tape.param(Tensor::new(&[n, d], c.clone()).unwrap()))
        .collect();
    let e = eloss_from_captures(&mut tape, std::slice::from_ref(&vars), &cfg, 1.0, &[true]).unwrap();
    tape.backward(e.total).unwrap();

    let total = |caps: &[Vec<f64>]| -> f64 {
        let s: Vec<SampleMatrix> = caps.iter().map(|c| SampleMatrix::new(n, d, c.clone()).unwrap()).collect();
        eloss_metric(&[s], &cfg, 1.0, &[true]).unwrap().breakdown.total
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (l, var) in vars.iter().enumerate() {
        let g = tape.grad(*var).unwrap();
        for i in 0..n * d {
            let mut plus = captures.clone();
            plus[l][i] += h;
            let mut minus = captures.clone();
            minus[l][i] -= h;
            let fd = (total(&plus) - total(&minus)) / (2.0 * h);
            let a = g.data()[i];
            let scale = a.abs().max(fd.abs());
            if scale > 1e-10 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }
    Verdict {
        id: 3,
        title: "gradient correctness",
        pass: worst <= 1e-3,
        detail: format!("max relative error {worst:.3e} over {} activations (<= 1e-3)", layers * n * d),
    }
}

fn c4_zero_set() -> Verdict {
    let mut rng = SplitMix64::stream(4, "acceptance/zero-set");
    let mut equal_ok = true;
    for _ in 0..1000 {
        let drop = rng.uniform(-10.0, 10.0);
        let start = rng.uniform(-50.0, 50.0).round();
        let len = 2 + rng.below(8);
        let drops = vec![drop; len];
        equal_ok &= variance_penalty(&drops).unwrap() == 0.0;
        let entropies: Vec<f64> = (0..=len).map(|i| start - 2.0 * i as f64).collect();
        equal_ok &= variance_penalty(&entropy_drops(&entropies).unwrap()).unwrap() == 0.0;
    }
    let l = variance_penalty(&[1.0, 2.0, 3.0]).unwrap();
    Verdict {
        id: 4,
        title: "variance penalty zero set",
        pass: equal_ok && l == 2.0 / 3.0,
        detail: format!("equal drops give 0.0: {equal_ok}; L_b([1,2,3]) = {l:?}"),
    }
}

fn experiment(seed: u64, sweep: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        lambda: 1.0,
        sweep,
        ..ExperimentConfig::default()
    }
}

struct Trained {
    sweeps: Vec<SweepSummary>,
    seconds: f64,
}

impl Trained {
    fn run(&self, seed_index: usize, enabled: usize) -> &eloss::encoder::RunArtifacts {
        self.sweeps[seed_index]
            .runs
            .iter()
            .find(|r| r.enabled_blocks == enabled)
            .unwrap()
    }
}

fn train_all(root: &Path) -> Trained {
    let t = Instant::now();
    let sweeps = SEEDS
        .iter()
        .map(|&seed| {
            let sweep = if seed == SEEDS[0] { vec![0, 1, 2] } else { vec![0, 2] };
            run_experiment(&experiment(seed, sweep), root.join(format!("seed_{seed}"))).unwrap()
        })
        .collect();
    Trained {
        sweeps,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn final_penalty(run: &eloss::encoder::RunArtifacts) -> f64 {
    run.outcome.records.last().unwrap().mean_penalty()
}

fn final_accuracy(run: &eloss::encoder::RunArtifacts) -> f64 {
    run.outcome.records.last().unwrap().val_metric
}

fn c5_regularization(t: &Trained) -> Verdict {
    let with: Vec<f64> = (0..SEEDS.len()).map(|i| final_penalty(t.run(i, 2))).collect();
    let without: Vec<f64> = (0..SEEDS.len()).map(|i| final_penalty(t.run(i, 0))).collect();
    let acc_gap = (0..SEEDS.len())
        .map(|i| (final_accuracy(t.run(i, 2)) - final_accuracy(t.run(i, 0))).abs())
        .fold(0.0, f64::max);
    let (mw, mo) = (median(&with), median(&without));
    Verdict {
        id: 5,
        title: "regularization effect",
        pass: mw <= 0.5 * mo && acc_gap <= 0.05 && t.seconds <= 300.0,
        detail: format!(
            "median final mean L_b {mw:.4} vs baseline {mo:.4}; max accuracy gap {:.1} pp (<= 5); training {:.0}s (<= 300s)",
            100.0 * acc_gap,
            t.seconds
        ),
    }
}

fn c6_emergent_decay(t: &Trained) -> Verdict {
    let mut decays = 0;
    let mut pairs = Vec::new();
    for i in 0..SEEDS.len() {
        let traj = &t.run(i, 2).outcome.final_eval.report.trajectories;
        let first = traj.first().unwrap().entropies[0];
        let last = *traj.last().unwrap().entropies.last().unwrap();
        decays += usize::from(last < first);
        pairs.push(format!("{first:.1}->{last:.1}"));
    }
    Verdict {
        id: 6,
        title: "emergent entropy decay",
        pass: decays >= 4,
        detail: format!("H_last < H_first in {decays}/5 seeds ({})", pairs.join(", ")),
    }
}

fn c7_anomaly_sensitivity(t: &Trained) -> Verdict {
    let run = t.run(0, 2);
    let cfg = &run.spec;
    let exp = experiment(SEEDS[0], vec![]);
    let task = exp.task();
    let rows = exp.audit.batch_rows;
    let (mut flagged, mut clean_conf, mut noisy_conf, mut noisy_total) = (0, 0.0, 0.0, 0.0);
    let batches = 100;
    for i in 0..batches {
        let clean = calibration_batch(&task, cfg.head, rows, 10_000 + i).unwrap();
        let noisy = gaussian_noise(&clean.inputs, 1.0, i as u64).unwrap();
        let c = forward_with_capture(cfg, &run.stored_params, &clean.inputs).unwrap();
        let f = forward_with_capture(cfg, &run.stored_params, &noisy).unwrap();
        let report = eloss_metric_from_features(&f.captures, &exp.entropy, cfg.lambda, &cfg.mask).unwrap();
        let v = audit(&report.breakdown, &run.band).unwrap();
        flagged += usize::from(v.max_z > exp.audit.z);
        clean_conf += confidence(&c.output).unwrap() / batches as f64;
        noisy_conf += confidence(&f.output).unwrap() / batches as f64;
        noisy_total += v.observed_total / batches as f64;
    }
    let conf_delta = percent_delta(clean_conf, noisy_conf).unwrap();
    let eloss_delta = percent_delta(run.band.nominal_total, noisy_total).unwrap();
    Verdict {
        id: 7,
        title: "anomaly sensitivity direction",
        pass: flagged >= 95 && 10.0 * conf_delta.abs() <= eloss_delta.abs(),
        detail: format!(
            "flagged {flagged}/100 (>= 95); confidence %delta {conf_delta:.2}% vs E_loss %delta {eloss_delta:.1}% (>= 10x)"
        ),
    }
}

fn brute_mavp(series: &[f64], window: usize, abs_diff: bool) -> f64 {
    let count = series.len() / window;
    let mut means = Vec::new();
    for k in 0..count {
        let mut s = 0.0;
        for j in 0..window {
            s += series[k * window + j];
        }
        means.push(s / window as f64);
    }
    let mut total = 0.0;
    for k in 0..count - 1 {
        total += if abs_diff {
            (means[k + 1] - means[k]).abs()
        } else {
            means[k + 1].abs() - means[k].abs()
        };
    }
    total / (count - 1) as f64
}

fn c8_mavp(t: &Trained) -> Verdict {
    let mut rng = SplitMix64::stream(8, "acceptance/mavp");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let window = 1 + rng.below(4);
        let len = 2 * window + rng.below(60);
        let series: Vec<f64> = (0..len).map(|_| rng.uniform(-5.0, 5.0)).collect();
        for (mode, abs) in [(MavpMode::Verbatim, false), (MavpMode::AbsDiff, true)] {
            let got = mavp(&series, window, mode).unwrap();
            worst = worst.max((got - brute_mavp(&series, window, abs)).abs());
        }
    }
    let mut smoother = 0;
    let mut pairs = Vec::new();
    for i in 0..SEEDS.len() {
        let score = |k| {
            let s = record_series(&t.run(i, k).outcome.records, "val_metric").unwrap();
            mavp(&s, 1, MavpMode::AbsDiff).unwrap()
        };
        let (without, with) = (score(0), score(2));
        smoother += usize::from(with <= without);
        pairs.push(format!("{without:.4}/{with:.4}"));
    }
    Verdict {
        id: 8,
        title: "MAVP correctness and smoothness direction",
        pass: worst <= 1e-12 && smoother >= 3,
        detail: format!(
            "max |mavp - brute force| {worst:.1e} (<= 1e-12); lambda=1 no rougher in {smoother}/5 seeds (>= 3), lambda=0/lambda=1: {}",
            pairs.join(", ")
        ),
    }
}

fn c9_coverage_sweep(t: &Trained, root: &Path) -> Verdict {
    let rows = &t.sweeps[0].rows;
    let table = std::fs::read_to_string(root.join(format!("seed_{}", SEEDS[0])).join("sweep.csv")).unwrap();
    let header = table.lines().next().unwrap_or_default();
    let has_columns = header.contains("final_val_metric") && header.contains("median_step_ms");
    let times: Vec<f64> = rows.iter().map(|r| r.median_step_ms).collect();
    let increasing = rows.len() == 3 && times.windows(2).all(|w| w[0] < w[1]);
    Verdict {
        id: 9,
        title: "coverage sweep harness",
        pass: has_columns && increasing,
        detail: rows
            .iter()
            .map(|r| format!("{} blocks: acc {:.3}, {:.3} ms/step", r.enabled_blocks, r.final_val_metric, r.median_step_ms))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn c10_format_and_determinism(root: &Path) -> Verdict {
    let mut rng = SplitMix64::stream(10, "acceptance/elft");
    let mut exact = 0;
    let file = root.join("roundtrip.elft");
    for i in 0..1000 {
        let rank = rng.below(5);
        let shape: Vec<usize> = (0..rank).map(|_| 1 + rng.below(6)).collect();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| loop {
                let f = f32::from_bits(rng.next_u64() as u32);
                if f.is_finite() {
                    break f as f64;
                }
            })
            .collect();
        let t = Tensor::new(&shape, data).unwrap();
        let back = if i % 2 == 0 {
            elft_write(&t, &file).unwrap();
            elft_read(&file).unwrap()
        } else {
            decode(&encode(&t).unwrap()).unwrap()
        };
        let same = back.shape() == t.shape()
            && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        exact += usize::from(same);
    }

    let config = root.join("small.json");
    std::fs::write(
        &config,
        r#"{"seed": 11, "sweep": [0, 2], "task": {"train_rows": 256, "validation_rows": 128},
            "train": {"epochs": 3}, "audit": {"calibration_batches": 4, "batch_rows": 64}}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for name in ["train_a", "train_b"] {
        let out = root.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_eloss"))
            .args(["train", "--config"])
            .arg(&config)
            .arg("--output")
            .arg(&out)
            .env_remove("ELOSS_SEED")
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(out);
    }
    let identical = [0, 2].iter().all(|k| {
        let read = |d: &Path| std::fs::read(d.join(format!("blocks_{k}")).join("records.csv")).unwrap();
        read(&outputs[0]) == read(&outputs[1])
    });
    Verdict {
        id: 10,
        title: "format and determinism",
        pass: exact == 1000 && identical,
        detail: format!("{exact}/1000 ELFT round trips bit-exact; repeated train records.csv identical: {identical}"),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut verdicts = vec![
        c1_estimator_accuracy(),
        c2_scaling_identity(),
        c3_gradient_check(),
        c4_zero_set(),
    ];
    let trained = train_all(root);
    verdicts.push(c5_regularization(&trained));
    verdicts.push(c6_emergent_decay(&trained));
    verdicts.push(c7_anomaly_sensitivity(&trained));
    verdicts.push(c8_mavp(&trained));
    verdicts.push(c9_coverage_sweep(&trained, root));
    verdicts.push(c10_format_and_determinism(root));

    let mut unexpected = Vec::new();
    for v in &verdicts {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && KNOWN_UNMET.contains(&v.id) { " [known]" } else { "" };
        println!("{tag} criterion {:>2} {}: {}{note}", v.id, v.title, v.detail);
        if !v.pass && !KNOWN_UNMET.contains(&v.id) {
            unexpected.push(v.id);
        }
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed}/{} criteria pass", verdicts.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
