//! Image raster, geometry helpers and file I/O.

mod io;

pub use io::{read_image, read_image_bytes, write_image, write_image_bytes, ImageFormat};

use crate::error::{Error, Result};

/// Peak assigned to FMDF rasters, whose header carries no maximum value.
pub const NORMALIZED_PEAK: f64 = 1.0;

/// A 2-D raster of real-valued detector samples.
///
/// Pixels are stored row-major and channel-interleaved: the sample for
/// channel `c` of pixel `(x, y)` lives at `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    peak: f64,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        peak: f64,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be at least 1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "peak must be finite and positive, got {peak}"
            )));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{channels} needs {expected} samples, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} is not finite ({})",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            peak,
            pixels,
        })
    }

    /// Single-channel image with every sample equal to `value`.
    pub fn constant(width: usize, height: usize, peak: f64, value: f64) -> Result<Self> {
        Self::new(width, height, 1, peak, vec![value; width * height])
    }

    /// Single-channel image built from a function of `(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        peak: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, 1, peak, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Number of samples (`width * height * channels`).
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Same raster with a different declared peak.
    pub fn with_peak(mut self, peak: f64) -> Result<Self> {
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "peak must be finite and positive, got {peak}"
            )));
        }
        self.peak = peak;
        Ok(self)
    }

    /// Same shape and peak, new samples.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, self.channels, self.peak, pixels)
    }

    /// Applies `f` to every sample.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        self.with_pixels(self.pixels.iter().map(|&v| f(v)).collect())
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if c >= self.channels {
            return Err(Error::OutOfBounds(format!(
                "channel {c} of a {}-channel image",
                self.channels
            )));
        }
        let pixels = self
            .pixels
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Self::new(self.width, self.height, 1, self.peak, pixels)
    }

    /// Interleaves single-channel planes into one image.
    pub fn from_channels(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channel planes given".into()))?;
        for p in planes {
            if p.channels != 1 {
                return Err(Error::InvalidArgument(
                    "channel planes must be single-channel".into(),
                ));
            }
            first.check_same_shape(p, "channel planes")?;
        }
        let n = first.width * first.height;
        let mut pixels = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                pixels.push(p.pixels[i]);
            }
        }
        Self::new(first.width, first.height, planes.len(), first.peak, pixels)
    }

    /// Applies a single-channel operation to every channel independently.
    pub fn map_channels(&self, mut f: impl FnMut(&Image) -> Result<Image>) -> Result<Self> {
        if self.channels == 1 {
            return f(self);
        }
        let planes = (0..self.channels)
            .map(|c| f(&self.channel(c)?))
            .collect::<Result<Vec<_>>>()?;
        Self::from_channels(&planes)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Population variance of all samples.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pixels.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }
}

/// Copies the pixels inside `rect`; peak is preserved.
pub fn crop(image: &Image, rect: Rect) -> Result<Image> {
    if !rect.fits(image.width, image.height) {
        return Err(Error::OutOfBounds(format!(
            "{rect:?} does not fit a {}x{} image",
            image.width, image.height
        )));
    }
    let ch = image.channels;
    let mut pixels = Vec::with_capacity(rect.w * rect.h * ch);
    for y in rect.y0..rect.y0 + rect.h {
        let start = (y * image.width + rect.x0) * ch;
        pixels.extend_from_slice(&image.pixels[start..start + rect.w * ch]);
    }
    Image::new(rect.w, rect.h, ch, image.peak, pixels)
}

/// Tiles the image into `patch`×`patch` squares in row-major tile order.
pub fn split_patches(image: &Image, patch: usize) -> Result<Vec<Image>> {
    if patch == 0 || image.width % patch != 0 || image.height % patch != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible into {patch}x{patch} patches",
            image.width, image.height
        )));
    }
    let mut out = Vec::with_capacity((image.width / patch) * (image.height / patch));
    for ty in 0..image.height / patch {
        for tx in 0..image.width / patch {
            out.push(crop(image, Rect::new(tx * patch, ty * patch, patch, patch))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 65535.0, |x, y| (y * w + x) as f64).unwrap()
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(Image::new(0, 1, 1, 1.0, vec![]).is_err());
        assert!(Image::new(1, 1, 2, 1.0, vec![0.0, 0.0]).is_err());
        assert!(Image::new(1, 1, 1, 0.0, vec![0.0]).is_err());
        assert!(Image::new(2, 1, 1, 1.0, vec![0.0]).is_err());
        assert!(Image::new(1, 1, 1, 1.0, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 1, 1.0, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn crop_quadrants_tile_512() {
        let img = ramp(512, 512);
        let rects = [
            Rect::new(0, 0, 256, 256),
            Rect::new(256, 0, 256, 256),
            Rect::new(0, 256, 256, 256),
            Rect::new(256, 256, 256, 256),
        ];
        let mut seen = vec![0u8; 512 * 512];
        for r in rects {
            let p = crop(&img, r).unwrap();
            assert_eq!((p.width(), p.height(), p.peak()), (256, 256, 65535.0));
            for j in 0..256 {
                for i in 0..256 {
                    let v = p.get(i, j, 0);
                    assert_eq!(v, img.get(r.x0 + i, r.y0 + j, 0));
                    seen[v as usize] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn crop_identity_and_bounds() {
        let img = ramp(5, 3);
        assert_eq!(crop(&img, Rect::new(0, 0, 5, 3)).unwrap(), img);
        let small = ramp(2, 2);
        assert!(crop(&small, Rect::new(1, 1, 2, 2)).is_err());
        assert!(crop(&small, Rect::new(0, 0, 0, 1)).is_err());
    }

    #[test]
    fn split_patches_counts() {
        assert_eq!(split_patches(&ramp(512, 512), 256).unwrap().len(), 4);
        let one = ramp(256, 256);
        let p = split_patches(&one, 256).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], one);
        assert!(split_patches(&ramp(100, 100), 256).is_err());
    }

    #[test]
    fn channel_round_trip() {
        let pixels: Vec<f64> = (0..12).map(f64::from).collect();
        let img = Image::new(2, 2, 3, 255.0, pixels).unwrap();
        let planes: Vec<Image> = (0..3).map(|c| img.channel(c).unwrap()).collect();
        assert_eq!(planes[1].pixels(), &[1.0, 4.0, 7.0, 10.0]);
        assert_eq!(Image::from_channels(&planes).unwrap(), img);
    }

    proptest! {
        #[test]
        fn split_patches_partition(tiles_x in 1usize..4, tiles_y in 1usize..4, patch in 1usize..6) {
            let (w, h) = (tiles_x * patch, tiles_y * patch);
            let img = ramp(w, h);
            let patches = split_patches(&img, patch).unwrap();
            prop_assert_eq!(patches.len(), tiles_x * tiles_y);
            let mut seen = vec![0u32; w * h];
            for (t, p) in patches.iter().enumerate() {
                let (ox, oy) = ((t % tiles_x) * patch, (t / tiles_x) * patch);
                for j in 0..patch {
                    for i in 0..patch {
                        let v = p.get(i, j, 0);
                        prop_assert_eq!(v, img.get(ox + i, oy + j, 0));
                        seen[v as usize] += 1;
                    }
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
