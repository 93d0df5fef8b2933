//! Generalized Anscombe transform (GAT) and its inverses.
//!
//! With `z' = z/a + b/a^2` the GAT reduces to the plain Anscombe transform
//! `2*sqrt(z' + 3/8)`, so the closed-form exact-unbiased inverse (derived for
//! unit Poisson data) is applied in that standardized domain and mapped back
//! by `y = a*y' - b/a`.

use crate::denoise::GaussianDenoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::noise::NoiseParams;

/// Smallest transform value `2*sqrt(3/8)`, reached at the origin of the standardized domain.
pub const GAT_MIN: f64 = 1.224_744_871_391_589;

/// Below this value the closed-form inverse switches to the clamped algebraic inverse.
pub const D_MIN: f64 = GAT_MIN + 1e-9;

/// Image in the variance-stabilized domain, tagged with the parameters used.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedImage {
    raster: Image,
    params: NoiseParams,
}

impl TransformedImage {
    /// Wraps a raster that already holds transform-domain values.
    pub fn new(raster: Image, params: NoiseParams) -> Result<Self> {
        if let Some(v) = raster.pixels().iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "transform-domain sample {v} is negative"
            )));
        }
        Ok(Self { raster, params })
    }

    pub fn raster(&self) -> &Image {
        &self.raster
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    pub fn into_raster(self) -> Image {
        self.raster
    }
}

/// `f(z) = (2/a) * sqrt(max(a*z + 3a^2/8 + b, 0))`.
pub fn gat(z: f64, params: &NoiseParams) -> f64 {
    let a = params.a();
    2.0 / a * (a * z + 0.375 * a * a + params.effective_b()).max(0.0).sqrt()
}

/// Algebraic inverse of [`gat`] on its unclamped range.
pub fn gat_inverse_algebraic(d: f64, params: &NoiseParams) -> f64 {
    let a = params.a();
    let half = a * d / 2.0;
    (half * half - 0.375 * a * a - params.effective_b()) / a
}

/// Closed-form approximation of the exact unbiased inverse of the Anscombe
/// transform for unit Poisson data:
/// `D^2/4 + sqrt(3/2)/(4D) - 11/(8D^2) + 5*sqrt(3/2)/(8D^3) - 1/8`.
pub fn anscombe_exact_unbiased(d: f64) -> f64 {
    let s = 1.5f64.sqrt();
    let inv = 1.0 / d;
    0.25 * d * d + 0.25 * s * inv - 1.375 * inv * inv + 0.625 * s * inv * inv * inv - 0.125
}

/// Exact-unbiased inverse for general `(a, b)`, not floored.
pub fn gat_inverse_exact_unbiased(d: f64, params: &NoiseParams) -> f64 {
    let a = params.a();
    let standardized = if d < D_MIN {
        // algebraic inverse of the standardized transform, floored at 0
        (0.25 * d * d - 0.375).max(0.0)
    } else {
        anscombe_exact_unbiased(d)
    };
    a * standardized - params.effective_b() / a
}

pub fn gat_forward(image: &Image, params: &NoiseParams) -> Result<TransformedImage> {
    let raster = image.map(|z| gat(z, params))?;
    Ok(TransformedImage {
        raster,
        params: *params,
    })
}

pub fn inverse_algebraic(t: &TransformedImage) -> Result<Image> {
    t.raster.map(|d| gat_inverse_algebraic(d, &t.params))
}

pub fn inverse_exact_unbiased(t: &TransformedImage) -> Result<Image> {
    t.raster.map(|d| gat_inverse_exact_unbiased(d, &t.params))
}

/// Transform, denoise at unit noise level, invert without bias, floor at 0.
pub fn vst_denoise<D: GaussianDenoiser + ?Sized>(
    image: &Image,
    params: &NoiseParams,
    denoiser: &D,
) -> Result<Image> {
    let forward = gat_forward(image, params)?;
    let denoised = denoiser.denoise_raster(forward.raster(), 1.0)?;
    forward.raster.check_same_shape(&denoised, "denoiser output")?;
    // Denoisers may undershoot the transform range; clamp back into it.
    let denoised = denoised.map(|v| v.max(0.0))?;
    let back = inverse_exact_unbiased(&TransformedImage::new(denoised, *params)?)?;
    back.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_pixel, Seed};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn params(a: f64, b: f64) -> NoiseParams {
        NoiseParams::new(a, b).unwrap()
    }

    #[test]
    fn forward_values() {
        let p = params(1.0, 0.0);
        assert!((gat(0.0, &p) - 1.224745).abs() < 1e-6);
        assert!((gat(0.0, &p) - GAT_MIN).abs() < 1e-15);
        assert!((gat(1.0, &p) - 2.345208).abs() < 1e-6);
        // clamp keeps strongly negative observations at zero
        assert_eq!(gat(-10.0, &p), 0.0);
    }

    #[test]
    fn algebraic_round_trips() {
        let p = params(1.0, 0.0);
        assert_eq!(gat_inverse_algebraic(gat(7.0, &p), &p), 7.0);
        assert!(gat_inverse_algebraic(2.0 * 0.375f64.sqrt(), &p).abs() < 1e-15);
        let q = params(2.0, 0.5);
        assert!((gat_inverse_algebraic(gat(10.0, &q), &q) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_literal_values() {
        // Direct evaluation at D = f(1) for unit Poisson.
        let d = 2.0 * 1.375f64.sqrt();
        assert!((anscombe_exact_unbiased(d) - 1.189_903).abs() < 1e-5);
        // continuity with the clamp at the transform minimum
        assert!(anscombe_exact_unbiased(GAT_MIN).abs() < 1e-12);
        // asymptotically D^2/4 - 1/8, i.e. 1/4 above the algebraic inverse
        let gap = |d: f64| anscombe_exact_unbiased(d) - (0.25 * d * d - 0.375);
        assert!((gap(20.0) - 0.261_967_5).abs() < 1e-6);
        assert!((gap(1e4) - 0.25).abs() < 1e-4);
    }

    /// Monte Carlo E[f(z)] for z ~ Poisson(y), unit gain, no Gaussian part.
    fn mc_mean_transform(y: f64, n: usize, seed: u64) -> f64 {
        let p = params(1.0, 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| gat(sample_pixel(&mut rng, y, &p), &p)).sum::<f64>() / n as f64
    }

    #[test]
    fn closed_form_inverts_expected_transform_at_one_count() {
        let d = mc_mean_transform(1.0, 1_000_000, 11);
        let y = anscombe_exact_unbiased(d);
        assert!((y - 1.0).abs() < 0.02, "{y}");
    }

    #[test]
    fn below_minimum_outputs_clamp() {
        let p = params(1.0, 0.0);
        assert_eq!(gat_inverse_exact_unbiased(0.5, &p), 0.0);
        assert_eq!(gat_inverse_exact_unbiased(0.0, &p), 0.0);
        let q = params(0.5, 0.2);
        assert!((gat_inverse_exact_unbiased(0.0, &q) + 0.2 / 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_denoiser_is_bias_corrected_passthrough() {
        let p = params(0.0139, 1e-4);
        let y = Image::from_fn(16, 16, 1.0, |x, y| 0.01 * (x + y) as f64).unwrap();
        let z = crate::noise::sample_noisy(&y, &p, Seed(1)).unwrap();
        let out = vst_denoise(&z, &p, &crate::denoise::DenoiserSpec::identity()).unwrap();
        let direct = inverse_exact_unbiased(&gat_forward(&z, &p).unwrap()).unwrap();
        for (o, d) in out.pixels().iter().zip(direct.pixels()) {
            assert_eq!(*o, d.max(0.0));
        }
    }

    proptest! {
        #[test]
        fn forward_is_monotone(a in 1e-4f64..10.0, b in -1.0f64..1.0, z1 in -5.0f64..1e3, dz in 0.0f64..100.0) {
            let p = params(a, b);
            prop_assert!(gat(z1, &p) <= gat(z1 + dz, &p));
        }

        #[test]
        fn algebraic_inverse_round_trip(a in 1e-3f64..10.0, b in 0.0f64..2.0, z in 0.0f64..1e4) {
            let p = params(a, b);
            let back = gat_inverse_algebraic(gat(z, &p), &p);
            prop_assert!((back - z).abs() <= 1e-12 * z.abs().max(1.0) * (1.0 + b / (a * a)).max(1.0) * 10.0);
        }

        #[test]
        fn scale_equivariance(a in 1e-3f64..5.0, b in 0.0f64..1.0, z in 0.0f64..100.0) {
            let p = params(a, b);
            let unit = params(1.0, 0.0);
            let zs = z / a + b / (a * a);
            let d = gat(z, &p);
            let ds = gat(zs, &unit);
            prop_assert!((d - ds).abs() <= 1e-9 * ds.max(1.0));
            let y = gat_inverse_exact_unbiased(d, &p);
            let ys = gat_inverse_exact_unbiased(ds, &unit);
            prop_assert!((y - (a * ys - b / a)).abs() <= 1e-8 * (a * ys).abs().max(1.0));
        }
    }
}
