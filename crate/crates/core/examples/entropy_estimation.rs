//! kNN differential entropy of Gaussian samples against the closed form.
//!
//! ```text
//! cargo run --release --example entropy_estimation
//! ```

use eloss::entropy::{gaussian_proxy_entropy, KnnEstimator, SampleMatrix};
use eloss::rng::SplitMix64;

fn samples(n: usize, sigmas: &[f64], seed: u64) -> SampleMatrix {
    let mut rng = SplitMix64::stream(seed, "example");
    let d = sigmas.len();
    SampleMatrix::new(n, d, (0..n * d).map(|i| sigmas[i % d] * rng.normal()).collect()).unwrap()
}

fn main() -> eloss::Result<()> {
    let half_log_2pie = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    println!("{:>5} {:>3} {:>3} {:>10} {:>10} {:>10}", "n", "d", "k", "knn", "gaussian", "exact");
    for sigmas in [vec![1.0], vec![1.0, 2.0, 0.5], vec![0.5; 8]] {
        let exact = sigmas.len() as f64 * half_log_2pie + sigmas.iter().map(|s: &f64| s.ln()).sum::<f64>();
        for n in [500, 5_000] {
            let s = samples(n, &sigmas, 1);
            for k in [1, 4] {
                let h = KnnEstimator::new(k).estimate(&s)?.value;
                let g = gaussian_proxy_entropy(&s).value;
                println!("{n:>5} {:>3} {k:>3} {h:>10.4} {g:>10.4} {exact:>10.4}", s.d());
            }
        }
    }

    // Scaling by c shifts the estimate by exactly d ln c.
    let s = samples(1_000, &[1.0, 1.0], 2);
    let h = KnnEstimator::new(1).estimate(&s)?.value;
    let h2 = KnnEstimator::new(1).estimate(&s.map(|v| 2.0 * v)?)?.value;
    println!("H(2X) - H(X) = {:.12}, 2 ln 2 = {:.12}", h2 - h, 2.0 * 2f64.ln());
    Ok(())
}
