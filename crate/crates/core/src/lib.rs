//! Poisson-Gaussian image denoising toolkit for fluorescence microscopy.
//!
//! The crate covers the full measurement-to-score path:
//!
//! - [`image`]: the `Image` raster, PGM/PPM/FMDF file I/O, cropping and patch tiling.
//! - [`noise`]: the Poisson-Gaussian observation model, reproducible sampling,
//!   the mixed density and the moments of averaged acquisitions.
//! - [`vst`]: the generalized Anscombe transform, its algebraic and
//!   closed-form exact-unbiased inverses, and the three-step VST denoiser.
//! - [`estimation`]: single-image noise-parameter fitting, sub-pixel
//!   translation estimation, and clipping statistics.
//! - [`denoise`]: Gaussian-domain denoisers (identity, box, non-local means,
//!   external process).
//! - [`dataset`]: synthetic phantoms, circular averaging, ground truth by
//!   averaging, and on-disk dataset construction.
//! - [`metrics`]: PSNR and SSIM with multi-channel aggregation.
//! - [`bench`]: the benchmark harness and its CSV/Markdown reports.

pub mod bench;
pub mod dataset;
pub mod denoise;
pub mod error;
pub mod estimation;
pub mod image;
pub mod metrics;
pub mod noise;
pub mod vst;

pub use error::{Error, Result};
pub use image::{Image, Rect};
pub use noise::{NoiseParams, Seed};
