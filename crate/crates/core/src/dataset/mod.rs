//! Synthetic multi-realization datasets.
//!
//! A field of view (FOV) is captured `R` times. Circular averaging turns the
//! `R` raw captures into `R` images at each averaging level `S`, and the mean
//! of all captures serves as the FOV's ground truth.
//!
//! Consecutive circular averages share `S - 1` raw captures, so they are not
//! independent. Statistics over them should be reported as means only.

mod layout;
mod phantom;

pub use layout::{
    build_dataset, canonical_configurations, plan_manifest, read_manifest, Configuration,
    DatasetLayout, Level, Manifest, ManifestEntry, INCOMPLETE_MARKER, MANIFEST_FILE,
};
pub use phantom::{generate_phantom, PhantomSpec, PhantomStyle};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::noise::{average_images, sample_noisy, NoiseParams, Seed};

/// Number of captures averaged into a canonical ground truth.
pub const GT_AVERAGE_COUNT: usize = 50;

/// The `R` captures of one FOV.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    fov_id: String,
    realizations: Vec<Image>,
    params: NoiseParams,
}

impl ImageSequence {
    pub fn new(fov_id: impl Into<String>, realizations: Vec<Image>, params: NoiseParams) -> Result<Self> {
        let first = realizations
            .first()
            .ok_or_else(|| Error::InvalidArgument("a sequence needs at least one realization".into()))?;
        for (j, img) in realizations.iter().enumerate().skip(1) {
            if !img.same_shape(first) || img.peak() != first.peak() {
                return Err(Error::ShapeMismatch(format!(
                    "realization {j} is {}x{}x{} peak {}, realization 0 is {}x{}x{} peak {}",
                    img.width(),
                    img.height(),
                    img.channels(),
                    img.peak(),
                    first.width(),
                    first.height(),
                    first.channels(),
                    first.peak()
                )));
            }
        }
        Ok(Self {
            fov_id: fov_id.into(),
            realizations,
            params,
        })
    }

    pub fn fov_id(&self) -> &str {
        &self.fov_id
    }

    pub fn realizations(&self) -> &[Image] {
        &self.realizations
    }

    pub fn into_realizations(self) -> Vec<Image> {
        self.realizations
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    /// Always false; a sequence holds at least one realization.
    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }
}

/// Averages each capture with its `s - 1` circular successors.
///
/// Output `j` is the mean of inputs `j, j+1, ..., j+s-1` taken modulo `R`,
/// so the output has as many images as the input.
pub fn circular_average(seq: &ImageSequence, s: usize) -> Result<ImageSequence> {
    let r = seq.len();
    if s == 0 || s > r {
        return Err(Error::InvalidArgument(format!(
            "averaging count {s} outside 1..={r}"
        )));
    }
    if s == 1 {
        return Ok(seq.clone());
    }
    let outputs = (0..r)
        .into_par_iter()
        .map(|j| {
            let window: Vec<Image> = (0..s).map(|k| seq.realizations[(j + k) % r].clone()).collect();
            average_images(&window)
        })
        .collect::<Result<Vec<_>>>()?;
    ImageSequence::new(seq.fov_id.clone(), outputs, seq.params.averaged(s)?)
}

/// Pixelwise mean of every realization.
pub fn estimate_ground_truth(seq: &ImageSequence) -> Result<Image> {
    if seq.len() < GT_AVERAGE_COUNT {
        log::warn!(
            "ground truth of {} averages {} captures, fewer than {GT_AVERAGE_COUNT}",
            seq.fov_id,
            seq.len()
        );
    }
    average_images(&seq.realizations)
}

/// `r` independent noisy captures of `phantom`; capture `j` uses `seed.derive(j)`.
pub fn generate_synthetic_fov(
    fov_id: impl Into<String>,
    phantom: &Image,
    params: &NoiseParams,
    r: usize,
    seed: Seed,
) -> Result<ImageSequence> {
    if r == 0 {
        return Err(Error::InvalidArgument("realization count must be >= 1".into()));
    }
    let realizations = (0..r)
        .map(|j| sample_noisy(phantom, params, seed.derive(j as u64)))
        .collect::<Result<Vec<_>>>()?;
    ImageSequence::new(fov_id, realizations, *params)
}
