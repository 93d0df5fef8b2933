//! Gaussian-noise denoisers behind a common interface.
//!
//! Every denoiser takes a raster corrupted by additive white Gaussian noise
//! of standard deviation `sigma` (1 in the GAT domain). Multi-channel rasters
//! are processed one channel at a time.

mod external;
mod nlm;

pub use external::run_external;
pub use nlm::{nlm_denoise, NlmParams};

use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::Image;

/// Anything that can remove additive Gaussian noise of a known level.
pub trait GaussianDenoiser {
    fn denoise_raster(&self, raster: &Image, sigma: f64) -> Result<Image>;
}

impl<F> GaussianDenoiser for F
where
    F: Fn(&Image, f64) -> Result<Image>,
{
    fn denoise_raster(&self, raster: &Image, sigma: f64) -> Result<Image> {
        self(raster, sigma)
    }
}

/// A named denoiser and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    Identity,
    /// Moving average over a `(2r+1)^2` window with edge replication.
    Box { radius: usize },
    Nlm(NlmParams),
    /// Child process speaking FMDF on stdin/stdout; `{sigma}` in the
    /// command line is replaced by the noise level.
    External { command: String },
}

impl DenoiserSpec {
    pub fn identity() -> Self {
        Self::Identity
    }

    pub fn nlm() -> Self {
        Self::Nlm(NlmParams::default())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Identity => Ok(()),
            Self::Box { radius } if *radius >= 1 => Ok(()),
            Self::Box { radius } => Err(Error::InvalidArgument(format!(
                "box radius must be >= 1, got {radius}"
            ))),
            Self::Nlm(p) => p.validate(),
            Self::External { command } if command.trim().is_empty() => {
                Err(Error::InvalidArgument("external command is empty".into()))
            }
            Self::External { .. } => Ok(()),
        }
    }

    /// Short display name, e.g. `NLM`.
    pub fn name(&self) -> String {
        match self {
            Self::Identity => "Identity".into(),
            Self::Box { .. } => "Box".into(),
            Self::Nlm(_) => "NLM".into(),
            Self::External { command } => {
                let program = command.split_whitespace().next().unwrap_or("external");
                let base = program.rsplit('/').next().unwrap_or(program);
                format!("External({base})")
            }
        }
    }
}

impl GaussianDenoiser for DenoiserSpec {
    fn denoise_raster(&self, raster: &Image, sigma: f64) -> Result<Image> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise level sigma must be > 0, got {sigma}"
            )));
        }
        self.validate()?;
        match self {
            Self::Identity => Ok(raster.clone()),
            Self::Box { radius } => raster.map_channels(|plane| box_filter(plane, *radius)),
            Self::Nlm(p) => raster.map_channels(|plane| nlm_denoise(plane, sigma, p)),
            Self::External { command } => run_external(command, raster, sigma),
        }
    }
}

/// Output of [`denoise`] with its wall-clock cost.
#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub image: Image,
    /// Seconds spent inside the denoiser.
    pub elapsed: f64,
}

pub fn denoise(input: &Image, sigma: f64, spec: &DenoiserSpec) -> Result<DenoiseResult> {
    let start = Instant::now();
    let image = spec.denoise_raster(input, sigma)?;
    let elapsed = start.elapsed().as_secs_f64();
    input.check_same_shape(&image, "denoiser output")?;
    Ok(DenoiseResult { image, elapsed })
}

/// Pixelwise `input - output`.
pub fn residual(input: &Image, output: &Image) -> Result<Image> {
    input.check_same_shape(output, "residual")?;
    input.with_pixels(
        input
            .pixels()
            .iter()
            .zip(output.pixels())
            .map(|(a, b)| a - b)
            .collect(),
    )
}

fn box_filter(plane: &Image, radius: usize) -> Result<Image> {
    let (w, h) = (plane.width(), plane.height());
    let src = plane.pixels();
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let norm = 1.0 / ((2 * radius + 1) * (2 * radius + 1)) as f64;
    // separable: horizontal then vertical sums
    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dx in -r..=r {
                s += src[y * w + clamp(x as isize + dx, w)];
            }
            horiz[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -r..=r {
                s += horiz[clamp(y as isize + dy, h) * w + x];
            }
            out[y * w + x] = s * norm;
        }
    }
    plane.with_pixels(out)
}

/// Symmetric (half-sample) reflection of index `i` into `0..n`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}
