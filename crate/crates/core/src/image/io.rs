//! Binary PGM/PPM (P5/P6) and FMDF raw-float codecs.
//!
//! FMDF layout, all integers little-endian:
//!
//! ```text
//! "FMDF" | version u32 = 1 | width u32 | height u32 | channels u32 | f64 samples
//! ```
//!
//! Samples are row-major and channel-interleaved. The header carries no peak,
//! so FMDF rasters load with [`NORMALIZED_PEAK`](super::NORMALIZED_PEAK).

use std::fs;
use std::path::Path;

use super::{Image, NORMALIZED_PEAK};
use crate::error::{Error, Result};

const FMDF_MAGIC: &[u8; 4] = b"FMDF";
const FMDF_VERSION: u32 = 1;
const FMDF_HEADER_LEN: usize = 20;

/// On-disk encodings accepted by [`write_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm8,
    Pgm16,
    Fmdf,
}

impl ImageFormat {
    /// Picks a format from a file extension: `.pgm` maps to 16-bit.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "fmdf" => Some(Self::Fmdf),
            "pgm" => Some(Self::Pgm16),
            _ => None,
        }
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_image_bytes(&bytes)
}

/// Decodes an image from an in-memory file.
pub fn read_image_bytes(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(FMDF_MAGIC) {
        decode_fmdf(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(Error::MalformedHeader {
            offset: 0,
            message: "unrecognized magic bytes".into(),
        })
    }
}

pub fn write_image(image: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_image_bytes(image, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes an image into the bytes of a file of the given format.
pub fn write_image_bytes(image: &Image, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Fmdf => Ok(encode_fmdf(image)),
        ImageFormat::Pgm8 => encode_pgm(image, 255),
        ImageFormat::Pgm16 => encode_pgm(image, 65535),
    }
}

fn encode_fmdf(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMDF_HEADER_LEN + image.len() * 8);
    out.extend_from_slice(FMDF_MAGIC);
    for v in [
        FMDF_VERSION,
        image.width() as u32,
        image.height() as u32,
        image.channels() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in image.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_fmdf(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < FMDF_HEADER_LEN {
        return Err(Error::MalformedHeader {
            offset: bytes.len() as u64,
            message: format!("FMDF header needs {FMDF_HEADER_LEN} bytes"),
        });
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
    };
    let version = word(0);
    if version != FMDF_VERSION {
        return Err(Error::MalformedHeader {
            offset: 4,
            message: format!("unsupported FMDF version {version}"),
        });
    }
    let (w, h, ch) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if w == 0 || h == 0 {
        return Err(Error::MalformedHeader {
            offset: 8,
            message: format!("zero extent {w}x{h}"),
        });
    }
    if ch != 1 && ch != 3 {
        return Err(Error::MalformedHeader {
            offset: 16,
            message: format!("channel count {ch} is not 1 or 3"),
        });
    }
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(ch))
        .ok_or_else(|| Error::MalformedHeader {
            offset: 8,
            message: "extent overflow".into(),
        })?;
    let payload = &bytes[FMDF_HEADER_LEN..];
    let expected = n * 8;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            offset: bytes.len() as u64,
            expected,
            found: payload.len(),
        });
    }
    let mut pixels = Vec::with_capacity(n);
    for (i, chunk) in payload[..expected].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::MalformedHeader {
                offset: (FMDF_HEADER_LEN + 8 * i) as u64,
                message: format!("non-finite sample {v}"),
            });
        }
        pixels.push(v);
    }
    Image::new(w, h, ch, NORMALIZED_PEAK, pixels)
}

fn encode_pgm(image: &Image, maxval: u16) -> Result<Vec<u8>> {
    if image.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "PGM output needs a single-channel image, got {} channels",
            image.channels()
        )));
    }
    let header = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval);
    let wide = maxval > 255;
    let mut out = Vec::with_capacity(header.len() + image.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    for &v in image.pixels() {
        // f64::round is round-half-away-from-zero
        let q = v.round().clamp(0.0, f64::from(maxval)) as u16;
        if wide {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::MalformedHeader {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::MalformedHeader {
                offset: start as u64,
                message: format!("{what} out of range"),
            })
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !matches!(cur.bytes.get(2), Some(c) if c.is_ascii_whitespace() || *c == b'#') {
        return Err(cur.err("missing separator after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("zero extent {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} outside 1..=65535")));
    }
    match cur.bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("missing whitespace before pixel payload")),
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let n = width * height * channels;
    let expected = n * sample_bytes;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            offset: bytes.len() as u64,
            expected,
            found: payload.len(),
        });
    }
    let pixels: Vec<f64> = if sample_bytes == 2 {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    } else {
        payload[..expected].iter().map(|&b| f64::from(b)).collect()
    };
    if let Some(i) = pixels.iter().position(|&v| v > maxval as f64) {
        return Err(Error::MalformedHeader {
            offset: (cur.pos + i * sample_bytes) as u64,
            message: format!("sample exceeds maxval {maxval}"),
        });
    }
    Image::new(width, height, channels, maxval as f64, pixels)
}
