//! PSNR and SSIM.
//!
//! Color images are scored per channel and the channel scores averaged.

use crate::denoise::reflect;
use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityScore {
    /// Decibels; `f64::INFINITY` when the images are identical.
    pub psnr_db: f64,
    pub ssim: f64,
    /// Channels with infinite PSNR left out of the multi-channel mean.
    pub infinite_channels: usize,
}

fn check_pair(reference: &Image, test: &Image) -> Result<()> {
    reference.check_same_shape(test, "quality metric")?;
    if reference.peak() != test.peak() {
        return Err(Error::ShapeMismatch(format!(
            "peak {} vs {}",
            reference.peak(),
            test.peak()
        )));
    }
    Ok(())
}

pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    check_pair(reference, test)?;
    Ok(reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64)
}

/// `10*log10(peak^2 / MSE)` over all samples, using the reference peak.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (reference.peak() * reference.peak() / m).log10())
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter with symmetric padding.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn ssim_plane(x: &Image, y: &Image, kernel: &[f64]) -> f64 {
    let (w, h) = (x.width(), x.height());
    let l = x.peak();
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let (xs, ys) = (x.pixels(), y.pixels());
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
    let mx = blur(xs, w, h, kernel);
    let my = blur(ys, w, h, kernel);
    let exx = blur(&xx, w, h, kernel);
    let eyy = blur(&yy, w, h, kernel);
    let exy = blur(&xy, w, h, kernel);
    let mut total = 0.0;
    for i in 0..w * h {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cxy = exy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / (w * h) as f64
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, dynamic range = peak),
/// averaged over channels.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    check_pair(reference, test)?;
    if reference.width().min(reference.height()) < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs both sides >= {SSIM_WINDOW}, got {}x{}",
            reference.width(),
            reference.height()
        )));
    }
    let kernel = gaussian_kernel();
    let n = reference.channels();
    let mut sum = 0.0;
    for c in 0..n {
        sum += ssim_plane(&reference.channel(c)?, &test.channel(c)?, &kernel);
    }
    Ok(sum / n as f64)
}

/// PSNR pooled over all samples plus SSIM.
pub fn score_pair(reference: &Image, test: &Image) -> Result<QualityScore> {
    let psnr_db = psnr(reference, test)?;
    Ok(QualityScore {
        psnr_db,
        ssim: ssim(reference, test)?,
        infinite_channels: usize::from(psnr_db.is_infinite()),
    })
}

/// Arithmetic means of the per-channel PSNR and SSIM.
///
/// Channels with infinite PSNR are excluded from the PSNR mean and counted
/// in `infinite_channels`; if every channel is identical the PSNR is infinite.
pub fn score_multichannel(reference: &Image, test: &Image) -> Result<QualityScore> {
    if reference.channels() != test.channels() {
        return Err(Error::ShapeMismatch(format!(
            "channel count {} vs {}",
            reference.channels(),
            test.channels()
        )));
    }
    let n = reference.channels();
    let mut finite = Vec::with_capacity(n);
    let mut infinite = 0;
    let mut ssim_sum = 0.0;
    for c in 0..n {
        let (r, t) = (reference.channel(c)?, test.channel(c)?);
        let p = psnr(&r, &t)?;
        if p.is_finite() {
            finite.push(p);
        } else {
            infinite += 1;
        }
        ssim_sum += ssim(&r, &t)?;
    }
    let psnr_db = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(QualityScore {
        psnr_db,
        ssim: ssim_sum / n as f64,
        infinite_channels: infinite,
    })
}
