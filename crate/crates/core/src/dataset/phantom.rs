//! Procedural fluorescence-like phantoms.
//!
//! Intensities are in normalized detector units (peak 1). Each style mixes
//! a smooth background with structures typical of one sample type.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, NORMALIZED_PEAK};
use crate::noise::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhantomStyle {
    /// Large smooth elliptical blobs.
    Nuclei,
    /// Thin curved filaments.
    Filaments,
    /// Many small elongated blobs.
    Mitochondria,
    /// Plateaus with step edges plus blobs.
    Tissue,
}

impl PhantomStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nuclei" => Some(Self::Nuclei),
            "filaments" => Some(Self::Filaments),
            "mitochondria" | "mito" => Some(Self::Mitochondria),
            "tissue" => Some(Self::Tissue),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub style: PhantomStyle,
    /// Floor intensity of the background.
    pub background: f64,
    /// Brightest structure intensity; must not exceed the peak.
    pub signal_max: f64,
}

impl PhantomSpec {
    pub fn new(side: usize, style: PhantomStyle) -> Self {
        Self {
            width: side,
            height: side,
            style,
            background: 0.06,
            signal_max: 0.8,
        }
    }
}

struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn add_blob(&mut self, cx: f64, cy: f64, sx: f64, sy: f64, angle: f64, amp: f64) {
        let (c, s) = (angle.cos(), angle.sin());
        let reach = 4.0 * sx.max(sy);
        let (x0, x1) = span(cx, reach, self.w);
        let (y0, y1) = span(cy, reach, self.h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (c * dx + s * dy) / sx;
                let v = (-s * dx + c * dy) / sy;
                self.data[y * self.w + x] += amp * (-0.5 * (u * u + v * v)).exp();
            }
        }
    }

    fn add_filament(&mut self, rng: &mut ChaCha8Rng, amp: f64, width: f64) {
        let mut x = rng.random_range(0.0..self.w as f64);
        let mut y = rng.random_range(0.0..self.h as f64);
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let curvature = rng.random_range(-0.02..0.02);
        let length = rng.random_range(0.4..1.2) * self.w.max(self.h) as f64;
        let steps = (length / 0.5) as usize;
        let mut line = vec![0.0f64; self.w * self.h];
        for _ in 0..steps {
            let (x0, x1) = span(x, 3.0 * width, self.w);
            let (y0, y1) = span(y, 3.0 * width, self.h);
            for py in y0..y1 {
                for px in x0..x1 {
                    let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                    let v = amp * (-0.5 * d2 / (width * width)).exp();
                    let cell = &mut line[py * self.w + px];
                    *cell = cell.max(v);
                }
            }
            heading += curvature + rng.random_range(-0.03..0.03);
            x += 0.5 * heading.cos();
            y += 0.5 * heading.sin();
        }
        for (d, l) in self.data.iter_mut().zip(line) {
            *d += l;
        }
    }

    fn add_plateau(&mut self, rng: &mut ChaCha8Rng, level: f64) {
        let rw = rng.random_range(0.15..0.45) * self.w as f64;
        let rh = rng.random_range(0.15..0.45) * self.h as f64;
        let x0 = rng.random_range(0.0..self.w as f64 - rw);
        let y0 = rng.random_range(0.0..self.h as f64 - rh);
        for y in y0 as usize..(y0 + rh) as usize {
            for x in x0 as usize..(x0 + rw) as usize {
                self.data[y * self.w + x] += level;
            }
        }
    }
}

fn span(center: f64, reach: f64, n: usize) -> (usize, usize) {
    let lo = (center - reach).floor().max(0.0) as usize;
    let hi = ((center + reach).ceil() + 1.0).clamp(0.0, n as f64) as usize;
    (lo.min(n), hi)
}

/// Renders a deterministic phantom for `seed`.
pub fn generate_phantom(spec: &PhantomSpec, seed: Seed) -> Result<Image> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidArgument("phantom extents must be >= 1".into()));
    }
    if !(0.0 <= spec.background && spec.background < spec.signal_max && spec.signal_max <= NORMALIZED_PEAK) {
        return Err(Error::InvalidArgument(format!(
            "phantom needs 0 <= background < signal_max <= {NORMALIZED_PEAK}, got {} and {}",
            spec.background, spec.signal_max
        )));
    }
    let mut rng = seed.stream(0);
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h) as f64;
    let mut canvas = Canvas {
        w,
        h,
        data: vec![0.0; w * h],
    };
    // faint out-of-focus haze
    for _ in 0..3 {
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let s = rng.random_range(0.25..0.5) * side;
        canvas.add_blob(cx, cy, s, s, 0.0, rng.random_range(0.05..0.15));
    }
    let area_scale = (w * h) as f64 / (256.0 * 256.0);
    let count = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        (rng.random_range(lo..hi) * area_scale).round().max(1.0) as usize
    };
    match spec.style {
        PhantomStyle::Nuclei => {
            for _ in 0..count(5.0, 9.0, &mut rng) {
                let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                let sx = rng.random_range(0.03..0.06) * side;
                let sy = sx * rng.random_range(0.6..1.0);
                let ang = rng.random_range(0.0..std::f64::consts::PI);
                canvas.add_blob(cx, cy, sx, sy, ang, rng.random_range(0.5..0.9));
            }
        }
        PhantomStyle::Filaments => {
            for _ in 0..count(10.0, 16.0, &mut rng) {
                let amp = rng.random_range(0.3..0.8);
                let width = rng.random_range(1.0..2.0);
                canvas.add_filament(&mut rng, amp, width);
            }
        }
        PhantomStyle::Mitochondria => {
            for _ in 0..count(60.0, 90.0, &mut rng) {
                let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                let sx = rng.random_range(2.5..5.0);
                let sy = rng.random_range(1.2..2.0);
                let ang = rng.random_range(0.0..std::f64::consts::PI);
                canvas.add_blob(cx, cy, sx, sy, ang, rng.random_range(0.4..0.8));
            }
        }
        PhantomStyle::Tissue => {
            for _ in 0..count(2.0, 4.0, &mut rng) {
                let level = rng.random_range(0.1..0.3);
                canvas.add_plateau(&mut rng, level);
            }
            for _ in 0..count(8.0, 14.0, &mut rng) {
                let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                let s = rng.random_range(0.015..0.03) * side;
                canvas.add_blob(cx, cy, s, s, 0.0, rng.random_range(0.3..0.6));
            }
        }
    }
    let span = spec.signal_max - spec.background;
    let pixels = canvas
        .data
        .iter()
        .map(|&v| spec.background + span * v.clamp(0.0, 1.0))
        .collect();
    Image::new(w, h, 1, NORMALIZED_PEAK, pixels)
}
