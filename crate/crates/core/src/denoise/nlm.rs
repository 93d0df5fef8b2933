//! Pixelwise non-local means with noise-compensated patch distances.
//!
//! For every pixel the output is the weighted mean of the pixels in its
//! search window, with weight `exp(-max(d2 - 2 sigma^2, 0) / (h sigma)^2)`
//! where `d2` is the mean squared difference of the surrounding patches.
//! Borders use symmetric padding.

use rayon::prelude::*;

use super::reflect;
use crate::error::{Error, Result};
use crate::image::Image;

/// Output rows processed per parallel task.
const ROWS_PER_TASK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NlmParams {
    /// Patch half-width; patches are `(2p+1)^2`.
    pub patch_radius: usize,
    /// Search window half-width.
    pub search_radius: usize,
    /// Filtering strength in units of sigma.
    pub h: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            search_radius: 10,
            h: 0.55,
        }
    }
}

impl NlmParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 || self.search_radius < 1 {
            return Err(Error::InvalidArgument(format!(
                "NLM radii must be >= 1, got patch {} search {}",
                self.patch_radius, self.search_radius
            )));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "NLM strength h must be > 0, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// Denoises a single-channel raster.
pub fn nlm_denoise(plane: &Image, sigma: f64, params: &NlmParams) -> Result<Image> {
    params.validate()?;
    if plane.channels() != 1 {
        return Err(Error::InvalidArgument(
            "nlm_denoise works on one channel".into(),
        ));
    }
    let (w, h) = (plane.width(), plane.height());
    let p = params.patch_radius;
    let s = params.search_radius;
    let pad = p + s;
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let src = plane.pixels();
    let padded: Vec<f64> = (0..ph)
        .flat_map(|py| {
            let sy = reflect(py as isize - pad as isize, h);
            (0..pw).map(move |px| src[sy * w + reflect(px as isize - pad as isize, w)])
        })
        .collect();

    let patch_len = (2 * p + 1) * (2 * p + 1);
    let inv_patch = 1.0 / patch_len as f64;
    let offset_sq = 2.0 * sigma * sigma;
    let inv_filter = 1.0 / (params.h * sigma * params.h * sigma);

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(ROWS_PER_TASK * w)
        .enumerate()
        .for_each(|(task, rows)| {
            let y0 = task * ROWS_PER_TASK;
            let band = rows.len() / w;
            // diff rows cover the band plus patch margins; columns cover width plus margins
            let dw = w + 2 * p;
            let dh = band + 2 * p;
            let mut diff = vec![0.0; dw * dh];
            let mut horiz = vec![0.0; w * dh];
            let mut wsum = vec![0.0; w * band];
            let mut vsum = vec![0.0; w * band];
            for oy in -(s as isize)..=s as isize {
                for ox in -(s as isize)..=s as isize {
                    for r in 0..dh {
                        // padded row of the reference pixel for diff row r
                        let py = y0 + r + s;
                        let qy = (py as isize + oy) as usize;
                        let a = &padded[py * pw + s..py * pw + s + dw];
                        let qx0 = (s as isize + ox) as usize;
                        let b = &padded[qy * pw + qx0..qy * pw + qx0 + dw];
                        let d = &mut diff[r * dw..(r + 1) * dw];
                        for ((d, &u), &v) in d.iter_mut().zip(a).zip(b) {
                            *d = (u - v) * (u - v);
                        }
                    }
                    for r in 0..dh {
                        let d = &diff[r * dw..(r + 1) * dw];
                        let hrow = &mut horiz[r * w..(r + 1) * w];
                        for (x, hv) in hrow.iter_mut().enumerate() {
                            *hv = d[x..x + 2 * p + 1].iter().sum();
                        }
                    }
                    for y in 0..band {
                        let qy = (y0 + y + pad) as isize + oy;
                        let qrow = qy as usize * pw;
                        for x in 0..w {
                            let mut d2 = 0.0;
                            for j in 0..=2 * p {
                                d2 += horiz[(y + j) * w + x];
                            }
                            let excess = (d2 * inv_patch - offset_sq).max(0.0);
                            let weight = (-excess * inv_filter).exp();
                            let qx = ((x + pad) as isize + ox) as usize;
                            wsum[y * w + x] += weight;
                            vsum[y * w + x] += weight * padded[qrow + qx];
                        }
                    }
                }
            }
            for ((o, ws), vs) in rows.iter_mut().zip(&wsum).zip(&vsum) {
                *o = vs / ws;
            }
        });
    plane.with_pixels(out)
}
