//! Reverse-mode gradients through the entropy estimator, checked against
//! central differences.

use eloss::entropy::{KnnEstimator, SampleMatrix};
use eloss::rng::SplitMix64;
use eloss::{Tape, Tensor};

fn main() -> eloss::Result<()> {
    let (n, d) = (32, 3);
    let mut rng = SplitMix64::stream(7, "example");
    let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    let est = KnnEstimator::new(1);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(&[n, d], data.clone())?);
    let h = tape.knn_entropy(x, &est)?;
    // A second branch so the graph is more than a single op.
    let sq = tape.square(x)?;
    let energy = tape.mean(sq)?;
    let obj = tape.add(h, energy)?;
    tape.backward(obj)?;
    let grad = tape.grad(x).expect("x is a parameter");

    let f = |v: &[f64]| -> f64 {
        let s = SampleMatrix::new(n, d, v.to_vec()).unwrap();
        est.estimate(&s).unwrap().value + v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64
    };
    let step = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..n * d {
        let (mut p, mut m) = (data.clone(), data.clone());
        p[i] += step;
        m[i] -= step;
        let fd = (f(&p) - f(&m)) / (2.0 * step);
        worst = worst.max((fd - grad.data()[i]).abs());
    }
    println!("objective {:.6}", tape.value(obj).item().unwrap());
    println!("tape nodes {}", tape.len());
    println!("max |analytic - numeric| {worst:.3e}");
    Ok(())
}
