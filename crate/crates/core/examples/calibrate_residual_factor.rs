//! Monte Carlo calibration of `RESIDUAL_VARIANCE_FACTOR`.
//!
//! Runs the residual-variance estimator on pure unit Gaussian noise and
//! prints the mean ratio of estimated to true variance.

use fmd_core::estimation::{clipped_residual_variance, median_residuals};
use fmd_core::{Image, Seed};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() {
    let trials = 64;
    let side = 256;
    let mut ratios = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = Seed(0xca1b_0000 + t as u64).stream(0);
        let plane = Image::from_fn(side, side, 1.0, |_, _| rng.sample::<f64, _>(StandardNormal))
            .expect("valid image");
        let (_, residual) = median_residuals(&plane).expect("single channel");
        let (var, _) = clipped_residual_variance(&residual).expect("enough samples");
        ratios.push(var);
    }
    let mean = ratios.iter().sum::<f64>() / trials as f64;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    println!("residual variance factor = {mean:.6} (standard error {:.2e})", sd / (trials as f64).sqrt());
}
