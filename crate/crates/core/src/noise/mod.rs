//! Poisson-Gaussian observation model.
//!
//! A measured sample is `z = a * Poisson(y / a) + Normal(0, b)` where `y` is
//! the noise-free intensity, `a` the detector conversion gain and `b` the
//! additive Gaussian variance. Averaging `S` independent acquisitions keeps
//! the mean at `y` and divides the variance `a*y + b` by `S`.

mod poisson;

pub use poisson::{sample_poisson, PTRS_THRESHOLD};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::image::Image;

/// Poisson tail mass tolerated by [`pg_pdf`].
pub const PDF_TAIL_TOLERANCE: f64 = 1e-12;

/// Detector gain `a` and Gaussian variance `b`.
///
/// `b` is stored as estimated and may be negative; consumers use
/// [`NoiseParams::effective_b`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    a: f64,
    b: f64,
}

impl NoiseParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gain a must be finite and > 0, got {a}"
            )));
        }
        if !b.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "variance b must be finite, got {b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Raw variance, possibly negative.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// `max(b, 0)`, the variance every sampler and transform uses.
    pub fn effective_b(&self) -> f64 {
        self.b.max(0.0)
    }

    /// Parameters of the mean of `s` independent acquisitions: `(a/s, b/s)`.
    pub fn averaged(&self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("averaging count must be >= 1".into()));
        }
        Self::new(self.a / s as f64, self.b / s as f64)
    }

    /// Noise variance `a*y + effective_b` at intensity `y`.
    pub fn variance_at(&self, y: f64) -> f64 {
        self.a * y + self.effective_b()
    }
}

/// 64-bit seed from which all random streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

impl Seed {
    /// Child seed for an independent sub-stream identified by `tag`.
    pub fn derive(self, tag: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    /// Generator for the stream with the given index (e.g. a pixel index).
    ///
    /// Streams are ChaCha8 nonces under a key fixed by the seed, so the draws
    /// of one index never depend on how many other indices were consumed.
    pub fn stream(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One Poisson-Gaussian draw around intensity `y`.
pub fn sample_pixel<R: Rng + ?Sized>(rng: &mut R, y: f64, params: &NoiseParams) -> f64 {
    let photons = sample_poisson(rng, y / params.a) as f64;
    let gauss: f64 = rng.sample(StandardNormal);
    params.a * photons + params.effective_b().sqrt() * gauss
}

/// Draws a noisy realization of `ground_truth`, one independent stream per sample.
pub fn sample_noisy(ground_truth: &Image, params: &NoiseParams, seed: Seed) -> Result<Image> {
    if let Some(i) = ground_truth.pixels().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ground-truth sample {i} is negative ({})",
            ground_truth.pixels()[i]
        )));
    }
    let pixels = ground_truth
        .pixels()
        .par_iter()
        .enumerate()
        .map(|(i, &y)| sample_pixel(&mut seed.stream(i as u64), y, params))
        .collect();
    ground_truth.with_pixels(pixels)
}

/// Default Poisson truncation index for [`pg_pdf`].
pub fn default_k_max(y: f64, a: f64) -> usize {
    let lambda = y / a;
    (lambda + 12.0 * lambda.max(1.0).sqrt() + 30.0).ceil() as usize
}

/// Density of the Poisson-Gaussian observation at `z`, summed over `k = 0..=k_max`.
///
/// Fails when `effective_b <= 0` (the observation is then a lattice and has
/// no density; use the Poisson pmf instead) or when `k_max` leaves more than
/// [`PDF_TAIL_TOLERANCE`] of Poisson mass uncovered.
pub fn pg_pdf(z: f64, y: f64, params: &NoiseParams, k_max: usize) -> Result<f64> {
    if y < 0.0 || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("intensity y = {y} must be >= 0")));
    }
    let b = params.effective_b();
    if b <= 0.0 {
        return Err(Error::InvalidArgument(
            "Gaussian variance is zero: the observation is a scaled Poisson lattice, use the pmf path"
                .into(),
        ));
    }
    let a = params.a;
    let lambda = y / a;
    let tail = if lambda == 0.0 {
        0.0
    } else {
        gamma_lr(k_max as f64 + 1.0, lambda)
    };
    if tail > PDF_TAIL_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "k_max = {k_max} leaves Poisson tail mass {tail:e} for mean {lambda}"
        )));
    }
    let sd = b.sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * b).sqrt();
    // Beyond 40 sd the Gaussian factor underflows to zero in f64.
    let lo = ((z - 40.0 * sd) / a).floor().max(0.0);
    let hi = ((z + 40.0 * sd) / a).ceil().min(k_max as f64);
    if hi < lo {
        return Ok(0.0);
    }
    let log_lambda = if lambda > 0.0 { lambda.ln() } else { f64::NEG_INFINITY };
    let mut sum = 0.0;
    for k in lo as usize..=hi as usize {
        let kf = k as f64;
        let log_pmf = if k == 0 {
            -lambda
        } else {
            kf * log_lambda - lambda - ln_gamma(kf + 1.0)
        };
        let d = z - a * kf;
        sum += (log_pmf - d * d / (2.0 * b)).exp();
    }
    Ok(norm * sum)
}

/// Pixelwise arithmetic mean of a non-empty stack of equally shaped images.
pub fn average_images(images: &[Image]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty sequence".into()))?;
    let mut acc = vec![0.0; first.len()];
    for img in images {
        first.check_same_shape(img, "average_images")?;
        if img.peak() != first.peak() {
            return Err(Error::ShapeMismatch(format!(
                "peak {} vs {}",
                img.peak(),
                first.peak()
            )));
        }
        for (s, v) in acc.iter_mut().zip(img.pixels()) {
            *s += v;
        }
    }
    let n = images.len() as f64;
    first.with_pixels(acc.into_iter().map(|s| s / n).collect())
}

/// Mean and variance of the average of `s` acquisitions at intensity `y`.
pub fn predicted_moments(y: f64, params: &NoiseParams, s: usize) -> Result<(f64, f64)> {
    if s == 0 {
        return Err(Error::InvalidArgument("averaging count must be >= 1".into()));
    }
    if y < 0.0 {
        return Err(Error::InvalidArgument(format!("intensity y = {y} must be >= 0")));
    }
    Ok((y, params.variance_at(y) / s as f64))
}
