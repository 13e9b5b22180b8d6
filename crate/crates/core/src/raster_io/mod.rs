//! Raster patches, label masks, their binary file formats, dataset manifests,
//! and the synthetic scene generator.
//!
//! Patch files (`GAPR`), little endian:
//!
//! ```text
//! "GAPR" | version u8 = 1 | height u32 | width u32 | bands u16 | dtype u8 = 0 | reserved u8 = 0
//! height * width * bands f32 samples, row-major, pixel-interleaved
//! ```
//!
//! Label files (`GAPL`):
//!
//! ```text
//! "GAPL" | version u8 = 1 | height u32 | width u32 | height * width class codes (u8)
//! ```

mod binary;
mod manifest;
mod synth;

use std::fs;
use std::path::Path;

pub use binary::ByteReader;
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{generate_synthetic, SynthConfig};

use crate::class;
use crate::error::{Error, Result};

pub const PATCH_MAGIC: &[u8; 4] = b"GAPR";
pub const LABEL_MAGIC: &[u8; 4] = b"GAPL";
pub const FORMAT_VERSION: u8 = 1;
/// Byte length of the GAPR header.
pub const PATCH_HEADER_LEN: usize = 4 + 1 + 4 + 4 + 2 + 1 + 1;
/// Byte length of the GAPL header.
pub const LABEL_HEADER_LEN: usize = 4 + 1 + 4 + 4;

/// An `H x W x B` multiband image with pixel-interleaved `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPatch {
    height: usize,
    width: usize,
    bands: usize,
    samples: Vec<f32>,
}

impl RasterPatch {
    pub fn new(height: usize, width: usize, bands: usize, samples: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "patch must be non-empty, got {height}x{width}x{bands}"
            )));
        }
        if samples.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "{height}x{width}x{bands} patch needs {} samples, got {}",
                height * width * bands,
                samples.len()
            )));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                offset: PATCH_HEADER_LEN + 4 * pos,
                value: samples[pos],
            });
        }
        Ok(Self {
            height,
            width,
            bands,
            samples,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    #[inline]
    pub fn sample(&self, row: usize, col: usize, band: usize) -> f32 {
        self.samples[(row * self.width + col) * self.bands + band]
    }

    /// All band values of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.samples[start..start + self.bands]
    }
}

/// Per-pixel class codes: 0 land, 1 water, 2 sediment, 255 ignore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "mask must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&c| !class::is_valid(c)) {
            return Err(Error::InvalidClass {
                code: labels[pos],
                row: pos / width,
                col: pos % width,
                offset: LABEL_HEADER_LEN + pos,
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, code: u8) -> Result<Self> {
        Self::new(height, width, vec![code; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Counts of land, water, sediment, and ignore pixels, in that order.
    pub fn histogram(&self) -> [usize; 4] {
        let mut h = [0usize; 4];
        for &c in &self.labels {
            match c {
                class::IGNORE => h[3] += 1,
                c => h[c as usize] += 1,
            }
        }
        h
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_patch(patch: &RasterPatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(PATCH_HEADER_LEN + 4 * patch.samples.len());
    out.extend_from_slice(PATCH_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(patch.height as u32).to_le_bytes());
    out.extend_from_slice(&(patch.width as u32).to_le_bytes());
    out.extend_from_slice(&(patch.bands as u16).to_le_bytes());
    out.push(0); // dtype: f32
    out.push(0);
    for v in &patch.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_patch(bytes: &[u8]) -> Result<RasterPatch> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(PATCH_MAGIC)?;
    r.expect_u8("version", FORMAT_VERSION)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let bands = r.u16()? as usize;
    r.expect_u8("dtype", 0)?;
    r.expect_u8("reserved byte", 0)?;
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::Shape(format!(
            "patch header declares {height}x{width}x{bands}"
        )));
    }
    let count = height * width * bands;
    r.require(4 * count)?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = r.offset();
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::NonFinite { offset, value: v });
        }
        samples.push(v);
    }
    r.finish()?;
    RasterPatch::new(height, width, bands, samples)
}

pub fn load_patch(path: impl AsRef<Path>) -> Result<RasterPatch> {
    decode_patch(&read_file(path.as_ref())?)
}

pub fn save_patch(patch: &RasterPatch, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_patch(patch))
}

pub fn encode_labels(mask: &LabelMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + mask.labels.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(mask.height as u32).to_le_bytes());
    out.extend_from_slice(&(mask.width as u32).to_le_bytes());
    out.extend_from_slice(&mask.labels);
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMask> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(LABEL_MAGIC)?;
    r.expect_u8("version", FORMAT_VERSION)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "label header declares {height}x{width}"
        )));
    }
    let labels = r.bytes(height * width)?.to_vec();
    r.finish()?;
    LabelMask::new(height, width, labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMask> {
    decode_labels(&read_file(path.as_ref())?)
}

pub fn save_labels(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_labels(mask))
}
