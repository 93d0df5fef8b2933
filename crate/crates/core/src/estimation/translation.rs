//! Sub-pixel translation by correlation in the Fourier domain.
//!
//! The cross-power spectrum is tapered by a Gaussian of
//! [`PEAK_WIDTH`] pixels before inversion, which turns the correlation peak
//! into a sampled Gaussian. The sub-pixel offset then comes from a parabola
//! through the logarithm of the peak and its two neighbours along each axis
//! of the 3x3 neighbourhood, followed by shift-back refinement passes.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::fft::{fft2, frequency};
use crate::error::{Error, Result};
use crate::image::Image;

/// Spatial standard deviation (pixels) of the correlation peak.
pub const PEAK_WIDTH: f64 = 1.0;
/// Exponent of the cross-power normalization.
pub const WHITENING: f64 = 0.0;
/// Shift-back-and-remeasure iterations after the first sub-pixel estimate.
pub const REFINE_PASSES: usize = 2;
/// Half-width of the region around the peak excluded from the sidelobe statistics.
const SIDELOBE_EXCLUSION: isize = 5;

/// Displacement of `moving` relative to `reference`: `moving(x) = reference(x - d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Translation {
    pub dx: f64,
    pub dy: f64,
    /// Peak-to-sidelobe ratio of the correlation surface.
    pub confidence: f64,
}

fn spectrum(plane: &Image) -> Result<Vec<Complex64>> {
    let first = plane.pixels()[0];
    if plane.pixels().iter().all(|&v| v == first) {
        return Err(Error::Degenerate("zero-energy image".into()));
    }
    let mean = plane.mean();
    let mut data: Vec<Complex64> = plane
        .pixels()
        .iter()
        .map(|&v| Complex64::new(v - mean, 0.0))
        .collect();
    fft2(&mut data, plane.width(), plane.height(), false);
    Ok(data)
}

/// Correlation surface of two spectra.
///
/// The cross-power spectrum `C` is normalized to `C / |C|^WHITENING`: an
/// exponent of 1 is classic phase correlation, 0 plain cross-correlation.
/// Full whitening lets noise-dominated frequencies swamp the peak on smooth
/// images, so only a partial normalization is applied. The Gaussian taper
/// then shapes the peak.
fn correlation_surface(fr: &[Complex64], fm: &[Complex64], w: usize, h: usize) -> Vec<f64> {
    let taper = 2.0 * PI * PI * PEAK_WIDTH * PEAK_WIDTH;
    let mut cross: Vec<Complex64> = Vec::with_capacity(w * h);
    for ky in 0..h {
        let fy = frequency(ky, h);
        for kx in 0..w {
            let fx = frequency(kx, w);
            let i = ky * w + kx;
            let c = fm[i] * fr[i].conj();
            let mag = c.norm();
            let g = (-taper * (fx * fx + fy * fy)).exp();
            cross.push(if mag > 0.0 { c * (g / mag.powf(WHITENING)) } else { Complex64::default() });
        }
    }
    fft2(&mut cross, w, h, true);
    cross.iter().map(|c| c.re).collect()
}

fn surface_at(surface: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    surface[(y.rem_euclid(h as isize) as usize) * w + x.rem_euclid(w as isize) as usize]
}

/// Sub-pixel offsets of a parabola through the peak at `(px, py)`.
fn refine(surface: &[f64], w: usize, h: usize, px: isize, py: isize) -> (f64, f64) {
    let at = |x, y| surface_at(surface, w, h, x, y);
    let c = at(px, py);
    let sx = if w >= 3 { vertex(at(px - 1, py), c, at(px + 1, py)) } else { 0.0 };
    let sy = if h >= 3 { vertex(at(px, py - 1), c, at(px, py + 1)) } else { 0.0 };
    (sx, sy)
}

/// Phase correlation of channel 0 of both images.
///
/// The integer peak is refined by a parabola; the moving image is then
/// shifted back by the estimate and the residual offset measured again,
/// [`REFINE_PASSES`] times, which removes the parabola's shape bias.
pub fn estimate_translation(reference: &Image, moving: &Image) -> Result<Translation> {
    if reference.width() != moving.width() || reference.height() != moving.height() {
        return Err(Error::ShapeMismatch(format!(
            "translation needs equal sizes: {}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            moving.width(),
            moving.height()
        )));
    }
    let (w, h) = (reference.width(), reference.height());
    let fr = spectrum(&reference.channel(0)?)?;
    let moving = moving.channel(0)?;
    let surface = correlation_surface(&fr, &spectrum(&moving)?, w, h);

    let (peak_idx, &peak) = surface
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty surface");
    let (pxi, pyi) = ((peak_idx % w) as isize, (peak_idx / w) as isize);
    let (sx, sy) = refine(&surface, w, h, pxi, pyi);
    let mut dx = wrap(pxi as f64 + sx, w);
    let mut dy = wrap(pyi as f64 + sy, h);
    for _ in 0..REFINE_PASSES {
        let back = fourier_shift(&moving, -dx, -dy)?;
        let s = correlation_surface(&fr, &spectrum(&back)?, w, h);
        let (rx, ry) = refine(&s, w, h, 0, 0);
        dx += rx;
        dy += ry;
    }
    let (dx, dy) = (wrap(dx, w), wrap(dy, h));

    let at = |x, y| surface_at(&surface, w, h, x, y);
    let mut side = Vec::with_capacity(surface.len());
    for y in 0..h as isize {
        for x in 0..w as isize {
            let ddx = (x - pxi).rem_euclid(w as isize);
            let ddy = (y - pyi).rem_euclid(h as isize);
            let near_x = ddx <= SIDELOBE_EXCLUSION || ddx >= w as isize - SIDELOBE_EXCLUSION;
            let near_y = ddy <= SIDELOBE_EXCLUSION || ddy >= h as isize - SIDELOBE_EXCLUSION;
            if !(near_x && near_y) {
                side.push(at(x, y));
            }
        }
    }
    let confidence = if side.len() >= 2 {
        let m = side.iter().sum::<f64>() / side.len() as f64;
        let sd = (side.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / side.len() as f64).sqrt();
        if sd > 0.0 {
            ((peak - m) / sd).max(0.0)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(Translation { dx, dy, confidence })
}

/// Vertex offset of the parabola through `(-1, l), (0, c), (1, r)` in log
/// space, falling back to linear values when a neighbour is not positive.
fn vertex(l: f64, c: f64, r: f64) -> f64 {
    let (l, c, r) = if l > 0.0 && c > 0.0 && r > 0.0 {
        (l.ln(), c.ln(), r.ln())
    } else {
        (l, c, r)
    };
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Maps a peak coordinate into `(-n/2, n/2]`.
fn wrap(v: f64, n: usize) -> f64 {
    let n = n as f64;
    let mut d = v.rem_euclid(n);
    if d > n / 2.0 {
        d -= n;
    }
    d
}

/// Circularly shifts an image by a real-valued displacement using a Fourier
/// phase ramp (band-limited sinc interpolation), channel by channel.
pub fn fourier_shift(image: &Image, dx: f64, dy: f64) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    image.map_channels(|plane| {
        let mut data: Vec<Complex64> = plane
            .pixels()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        fft2(&mut data, w, h, false);
        for ky in 0..h {
            let fy = frequency(ky, h);
            for kx in 0..w {
                let fx = frequency(kx, w);
                let phase = -2.0 * PI * (fx * dx + fy * dy);
                data[ky * w + kx] *= Complex64::from_polar(1.0, phase);
            }
        }
        fft2(&mut data, w, h, true);
        plane.with_pixels(data.iter().map(|c| c.re).collect())
    })
}
