//! Two-axis PCA summary of a layer's activations: principal axes plus a
//! 1-D Gaussian fitted along each.

use eloss::entropy::SampleMatrix;
use eloss::io::{pca2_summary, PcaNormalization};
use eloss::rng::SplitMix64;

fn main() -> eloss::Result<()> {
    let mut rng = SplitMix64::stream(5, "example");
    // Elongated cloud rotated by 30 degrees.
    let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let rows: Vec<Vec<f64>> = (0..2_000)
        .map(|_| {
            let (a, b) = (3.0 * rng.normal(), 1.0 * rng.normal());
            vec![c * a - s * b + 1.0, s * a + c * b - 2.0]
        })
        .collect();
    let samples = SampleMatrix::from_rows(&rows)?;

    for norm in [PcaNormalization::CenterGlobalScale, PcaNormalization::Standardize] {
        let p = pca2_summary(&samples, norm)?;
        println!("{norm:?}");
        for i in 0..2 {
            println!(
                "  axis {i}: [{:>7.4}, {:>7.4}] explained {:.3}  N({:.3}, {:.3})",
                p.axes[i][0], p.axes[i][1], p.explained[i], p.fits[i].mean, p.fits[i].std
            );
        }
        println!("  density at origin {:.5}", p.density(0.0, 0.0));
    }
    Ok(())
}
