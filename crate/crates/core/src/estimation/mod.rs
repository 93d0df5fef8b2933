//! Noise-parameter fitting, translation estimation and clipping statistics.

mod fft;
mod translation;

pub use translation::{estimate_translation, fourier_shift, Translation};

use rayon::prelude::*;

use crate::denoise::reflect;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::noise::NoiseParams;

/// Side of the median window used as local expectation.
pub const MEDIAN_WINDOW: usize = 7;
/// Number of equal-population level sets.
pub const N_SEGMENTS: usize = 32;
/// Samples at or above this fraction of the peak are treated as clipped.
pub const CLIP_EXCLUSION: f64 = 0.999;
/// Residuals farther than this many robust sigmas from the median are rejected.
pub const OUTLIER_CUT: f64 = 3.5;
/// Scale of the median absolute deviation for Gaussian data.
pub const MAD_TO_SIGMA: f64 = 1.4826;
/// Ratio of [`clipped_residual_variance`] on `z - median7(z)` to the true
/// noise variance, for i.i.d. Gaussian noise. Produced by
/// `cargo run --release -p fmd-core --example calibrate_residual_factor`.
pub const RESIDUAL_VARIANCE_FACTOR: f64 = RESIDUAL_FACTOR_CALIBRATED;
const RESIDUAL_FACTOR_CALIBRATED: f64 = 0.9814;

/// Smoothed-gradient threshold, in noise sigmas, above which a pixel is
/// treated as structure rather than flat signal.
pub const EDGE_CUT: f64 = 0.5;
/// Neighbour-mean residual threshold, in sigmas of an 8-sample mean.
pub const COHERENCE_CUT: f64 = 3.0;
/// Largest clipped fraction a level set may hold and still be used.
pub const CLIP_SET_TOLERANCE: f64 = 1e-3;
/// Refits after edge masking.
pub const EDGE_PASSES: usize = 3;

/// Smallest image side accepted by [`estimate_noise_params`].
pub const MIN_ESTIMATION_SIDE: usize = 64;
/// Minimum number of inliers for a level set to count.
const MIN_SET_INLIERS: usize = 16;

/// Result of fitting `Var(z) = a*y + b` to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFit {
    /// Fitted parameters; `b` is kept raw and may be negative. A
    /// non-positive slope is floored to a tiny positive gain.
    pub params: NoiseParams,
    /// Slope of the robust line fit before flooring.
    pub raw_slope: f64,
    pub n_segments: usize,
    /// RMS deviation of the level-set variances from the fitted line.
    pub residual: f64,
    /// `(mean, variance)` per non-degenerate level set.
    pub points: Vec<(f64, f64)>,
}

/// 7x7 median with symmetric padding and the residual `z - median`.
pub fn median_residuals(plane: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    if plane.channels() != 1 {
        return Err(Error::InvalidArgument("median_residuals works on one channel".into()));
    }
    let (w, h) = (plane.width(), plane.height());
    let src = plane.pixels();
    let r = (MEDIAN_WINDOW / 2) as isize;
    let smoothed: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut window = Vec::with_capacity(MEDIAN_WINDOW * MEDIAN_WINDOW);
            (0..w)
                .map(|x| {
                    window.clear();
                    for dy in -r..=r {
                        let sy = reflect(y as isize + dy, h);
                        for dx in -r..=r {
                            window.push(src[sy * w + reflect(x as isize + dx, w)]);
                        }
                    }
                    let mid = window.len() / 2;
                    *window
                        .select_nth_unstable_by(mid, |a, b| a.total_cmp(b))
                        .1
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let residual = src.iter().zip(&smoothed).map(|(z, m)| z - m).collect();
    Ok((smoothed, residual))
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lo, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        *m
    } else {
        let below = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + *m)
    }
}

/// Outlier-rejected variance of residuals, uncorrected.
///
/// Residuals farther than [`OUTLIER_CUT`] MAD-sigmas from their median are
/// dropped and the sample variance of the rest is returned together with
/// the inlier mask. `None` when fewer than two inliers survive.
pub fn clipped_residual_variance(residuals: &[f64]) -> Option<(f64, Vec<bool>)> {
    if residuals.len() < 2 {
        return None;
    }
    let mut buf = residuals.to_vec();
    let center = median(&mut buf);
    for (b, r) in buf.iter_mut().zip(residuals) {
        *b = (r - center).abs();
    }
    let sigma = MAD_TO_SIGMA * median(&mut buf);
    let mask: Vec<bool> = if sigma > 0.0 {
        residuals
            .iter()
            .map(|r| (r - center).abs() <= OUTLIER_CUT * sigma)
            .collect()
    } else {
        // more than half the residuals are tied; keep everything
        vec![true; residuals.len()]
    };
    let inliers: Vec<f64> = residuals
        .iter()
        .zip(&mask)
        .filter_map(|(r, &keep)| keep.then_some(*r))
        .collect();
    if inliers.len() < 2 {
        return None;
    }
    let m = inliers.iter().sum::<f64>() / inliers.len() as f64;
    let var = inliers.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (inliers.len() - 1) as f64;
    Some((var, mask))
}

/// Gradient magnitude of a smoothed plane (central differences, symmetric edges).
pub fn local_gradient(smoothed: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| smoothed[reflect(y, h) * w + reflect(x, w)];
    (0..h as isize)
        .flat_map(|y| (0..w as isize).map(move |x| (x, y)))
        .map(|(x, y)| {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            gx.hypot(gy)
        })
        .collect()
}

struct Sample {
    smoothed: f64,
    z: f64,
    residual: f64,
    gradient: f64,
    /// Mean residual of the 8 neighbours.
    coherence: f64,
    clipped: bool,
}

/// Mean of the 8-neighbour residuals (symmetric edges).
fn neighbour_mean(residual: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| residual[reflect(y, h) * w + reflect(x, w)];
    (0..h as isize)
        .flat_map(|y| (0..w as isize).map(move |x| (x, y)))
        .map(|(x, y)| {
            let mut sum = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx != 0 || dy != 0 {
                        sum += at(x + dx, y + dy);
                    }
                }
            }
            sum / 8.0
        })
        .collect()
}

/// Fits `Var(z) = a*y + b` from a single image.
///
/// Local expectations come from a 7x7 median; pixels are sorted by that
/// value (ties by pixel index) into [`N_SEGMENTS`] equal-population level
/// sets; each set contributes its mean and its outlier-rejected residual
/// variance divided by [`RESIDUAL_VARIANCE_FACTOR`]; a Theil-Sen line
/// through those points gives slope `a` and intercept `b`.
///
/// Clipped samples (`z >= 0.999*peak` or `z <= 0`) never enter a variance.
/// Dropping them one by one would truncate the noise distribution of the
/// level sets they sit in, so a set whose clipped fraction exceeds
/// [`CLIP_SET_TOLERANCE`] is dropped whole. When fewer than two sets
/// survive, only the clipped samples themselves are dropped.
///
/// Edges and thin structures leak into the median residual. After the first
/// fit, pixels are masked when their smoothed gradient exceeds [`EDGE_CUT`]
/// noise sigmas or their neighbours' mean residual exceeds
/// [`COHERENCE_CUT`] sigmas of such a mean (both sigmas predicted by the
/// current fit), and the fit is repeated, [`EDGE_PASSES`] times at most.
pub fn estimate_noise_params(image: &Image) -> Result<NoiseFit> {
    if image.width() < MIN_ESTIMATION_SIDE || image.height() < MIN_ESTIMATION_SIDE {
        return Err(Error::InvalidArgument(format!(
            "noise estimation needs at least {MIN_ESTIMATION_SIDE}x{MIN_ESTIMATION_SIDE} pixels, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let (lo, hi) = image
        .pixels()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        return Err(Error::Degenerate("all-constant image".into()));
    }
    let clip_hi = CLIP_EXCLUSION * image.peak();
    // pixel-index order across channels
    let mut samples: Vec<Sample> = Vec::with_capacity(image.len());
    for c in 0..image.channels() {
        let plane = image.channel(c)?;
        let (w, h) = (plane.width(), plane.height());
        let (smoothed, residual) = median_residuals(&plane)?;
        let gradient = local_gradient(&smoothed, w, h);
        let coherence = neighbour_mean(&residual, w, h);
        for (i, &z) in plane.pixels().iter().enumerate() {
            samples.push(Sample {
                smoothed: smoothed[i],
                z,
                residual: residual[i],
                gradient: gradient[i],
                coherence: coherence[i],
                clipped: z <= 0.0 || z >= clip_hi,
            });
        }
    }
    // stable sort keeps pixel-index order among equal smoothed values
    samples.sort_by(|a, b| a.smoothed.total_cmp(&b.smoothed));

    let all: Vec<&Sample> = samples.iter().collect();
    let mut fit = fit_with_clipping(&all, image.peak())?;
    let min_kept = (samples.len() / 4).max(N_SEGMENTS * MIN_SET_INLIERS);
    for _ in 0..EDGE_PASSES {
        let floor = fit
            .points
            .iter()
            .map(|p| p.1)
            .fold(f64::INFINITY, f64::min);
        let (a, b) = (fit.raw_slope.max(0.0), fit.params.b());
        let kept: Vec<&Sample> = samples
            .iter()
            .filter(|s| {
                let var = (a * s.smoothed + b).max(floor);
                s.gradient * s.gradient <= EDGE_CUT * EDGE_CUT * var
                    && s.coherence * s.coherence <= COHERENCE_CUT * COHERENCE_CUT * var / 8.0
            })
            .collect();
        if kept.len() < min_kept || kept.len() == samples.len() {
            break;
        }
        match fit_with_clipping(&kept, image.peak()) {
            Ok(next) => fit = next,
            Err(_) => break,
        }
    }
    Ok(fit)
}

fn fit_with_clipping(samples: &[&Sample], peak: f64) -> Result<NoiseFit> {
    match fit_level_sets(samples, peak, true) {
        Ok(fit) if fit.n_segments >= 2 => Ok(fit),
        _ => fit_level_sets(samples, peak, false),
    }
}

fn fit_level_sets(samples: &[&Sample], peak: f64, drop_clipped_sets: bool) -> Result<NoiseFit> {
    let n = samples.len();
    let mut points = Vec::with_capacity(N_SEGMENTS);
    for k in 0..N_SEGMENTS {
        let set = &samples[k * n / N_SEGMENTS..(k + 1) * n / N_SEGMENTS];
        let clipped = set.iter().filter(|s| s.clipped).count();
        if drop_clipped_sets && clipped as f64 > CLIP_SET_TOLERANCE * set.len() as f64 {
            continue;
        }
        let set: Vec<&Sample> = set.iter().copied().filter(|s| !s.clipped).collect();
        let residuals: Vec<f64> = set.iter().map(|s| s.residual).collect();
        let Some((var, mask)) = clipped_residual_variance(&residuals) else {
            continue;
        };
        let inliers = mask.iter().filter(|&&m| m).count();
        if inliers < MIN_SET_INLIERS || var <= 0.0 {
            continue;
        }
        let mean = set
            .iter()
            .zip(&mask)
            .filter_map(|(s, &keep)| keep.then_some(s.z))
            .sum::<f64>()
            / inliers as f64;
        points.push((mean, var / RESIDUAL_VARIANCE_FACTOR));
    }
    let (slope, intercept) = theil_sen(&points).ok_or_else(|| {
        Error::Degenerate(format!(
            "only {} usable level sets, need at least 2 with distinct means",
            points.len()
        ))
    })?;
    let residual = (points
        .iter()
        .map(|(x, v)| (v - (slope * x + intercept)).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    let floor = f64::EPSILON * peak;
    Ok(NoiseFit {
        params: NoiseParams::new(slope.max(floor), intercept)?,
        raw_slope: slope,
        n_segments: points.len(),
        residual,
        points,
    })
}

/// Theil-Sen slope and median intercept; `None` without two distinct abscissae.
fn theil_sen(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let mut slopes = Vec::new();
    for (i, &(x1, y1)) in points.iter().enumerate() {
        for &(x2, y2) in &points[i + 1..] {
            if x2 != x1 {
                slopes.push((y2 - y1) / (x2 - x1));
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    let slope = median(&mut slopes);
    let mut intercepts: Vec<f64> = points.iter().map(|(x, y)| y - slope * x).collect();
    Some((slope, median(&mut intercepts)))
}

/// Fraction of samples at or above the declared peak.
pub fn clipped_fraction(image: &Image) -> f64 {
    let peak = image.peak();
    let clipped = image.pixels().iter().filter(|&&v| v >= peak).count();
    clipped as f64 / image.len() as f64
}
