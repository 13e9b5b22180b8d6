//! Non-local-means pixel features.
//!
//! The feature of pixel `(r, c)` is its `(2k+1) x (2k+1)` neighborhood,
//! every sample scaled by a Gaussian of the offset, flattened with offsets
//! in row-major order `(dr, dc)` and bands innermost. Out-of-image offsets
//! are mirrored without repeating the edge pixel (`-1 -> 1`, `n -> n-2`).
//!
//! Each entry is computed as `(weight * sample as f64) as f32`. Weights are
//! not normalized, so the center entry equals the pixel's own sample.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{ByteReader, RasterPatch};

pub const FEATURE_MAGIC: &[u8; 4] = b"GAPF";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Patch half-width; the patch side is `2k + 1`.
    pub k: usize,
    /// Gaussian scale in pixels. `None` means `k / 2`. Infinity turns the
    /// weighting off (all weights 1).
    pub sigma_g: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { k: 3, sigma_g: None }
    }
}

impl FeatureConfig {
    pub fn new(k: usize, sigma_g: f64) -> Self {
        Self {
            k,
            sigma_g: Some(sigma_g),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_g.unwrap_or(self.k as f64 / 2.0)
    }

    pub fn side(&self) -> usize {
        2 * self.k + 1
    }

    pub fn dim(&self, bands: usize) -> usize {
        self.side() * self.side() * bands
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("feature k must be at least 1".into()));
        }
        let s = self.sigma();
        if !(s > 0.0) {
            return Err(Error::Config(format!("sigma_g must be positive, got {s}")));
        }
        Ok(())
    }
}

/// Where a feature row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub image_id: u32,
    pub row: u32,
    pub col: u32,
}

/// `n x dim` row-major feature vectors with per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
    provenance: Vec<Provenance>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f32>, provenance: Vec<Provenance>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if data.len() != dim * provenance.len() {
            return Err(Error::Shape(format!(
                "{} rows of dim {dim} need {} values, got {}",
                provenance.len(),
                dim * provenance.len(),
                data.len()
            )));
        }
        Ok(Self {
            dim,
            data,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.provenance.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        let mut provenance = self.provenance.clone();
        provenance.extend_from_slice(&other.provenance);
        FeatureMatrix::new(self.dim, data, provenance)
    }

    pub fn scaled(&self, factor: f32) -> FeatureMatrix {
        FeatureMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Mirror reflection without edge repetition: `-1 -> 1`, `n -> n - 2`.
pub fn reflect_index(i: isize, n: usize) -> Result<usize> {
    let ni = n as isize;
    if (0..ni).contains(&i) {
        return Ok(i as usize);
    }
    if n < 2 || i <= -ni || i >= 2 * ni - 1 {
        return Err(Error::Reflection {
            index: i,
            extent: n,
        });
    }
    Ok(if i < 0 { -i } else { 2 * (ni - 1) - i } as usize)
}

/// `(2k+1) x (2k+1)` weights `exp(-(dr^2 + dc^2) / (2 sigma^2))`, row-major.
pub fn gaussian_patch_weights(config: &FeatureConfig) -> Vec<f64> {
    let k = config.k as isize;
    let two_s2 = 2.0 * config.sigma() * config.sigma();
    let mut w = Vec::with_capacity(config.side() * config.side());
    for dr in -k..=k {
        for dc in -k..=k {
            w.push((-((dr * dr + dc * dc) as f64) / two_s2).exp());
        }
    }
    w
}

fn reflect_table(extent: usize, k: usize) -> Result<Vec<usize>> {
    // entry [pos * side + (d + k)] = reflect(pos + d)
    let side = 2 * k + 1;
    let mut t = Vec::with_capacity(extent * side);
    for pos in 0..extent as isize {
        for d in -(k as isize)..=k as isize {
            t.push(reflect_index(pos + d, extent)?);
        }
    }
    Ok(t)
}

/// Computes the feature vector of every pixel of `patch`, in row-major pixel order.
pub fn extract_features(
    patch: &RasterPatch,
    config: &FeatureConfig,
    image_id: u32,
) -> Result<FeatureMatrix> {
    config.validate()?;
    let (h, w, b) = (patch.height(), patch.width(), patch.bands());
    let k = config.k;
    if k >= h.min(w) {
        return Err(Error::Config(format!(
            "feature half-width {k} needs an image larger than {h}x{w}"
        )));
    }
    let side = config.side();
    let dim = config.dim(b);
    let weights = gaussian_patch_weights(config);
    let rows = reflect_table(h, k)?;
    let cols = reflect_table(w, k)?;

    let mut data = vec![0f32; h * w * dim];
    data.par_chunks_mut(w * dim)
        .enumerate()
        .for_each(|(r, out_row)| {
            for (c, out) in out_row.chunks_exact_mut(dim).enumerate() {
                let mut o = 0;
                for dr in 0..side {
                    let rr = rows[r * side + dr];
                    for dc in 0..side {
                        let cc = cols[c * side + dc];
                        let wgt = weights[dr * side + dc];
                        for &s in patch.pixel(rr, cc) {
                            out[o] = (wgt * s as f64) as f32;
                            o += 1;
                        }
                    }
                }
            }
        });

    let provenance = (0..h as u32)
        .flat_map(|row| {
            (0..w as u32).map(move |col| Provenance {
                image_id,
                row,
                col,
            })
        })
        .collect();
    FeatureMatrix::new(dim, data, provenance)
}

pub fn encode_features(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 4 * features.data.len() + 12 * features.n());
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(1);
    out.extend_from_slice(&(features.n() as u64).to_le_bytes());
    out.extend_from_slice(&(features.dim as u32).to_le_bytes());
    for v in &features.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &features.provenance {
        out.extend_from_slice(&p.image_id.to_le_bytes());
        out.extend_from_slice(&p.row.to_le_bytes());
        out.extend_from_slice(&p.col.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(FEATURE_MAGIC)?;
    r.expect_u8("version", 1)?;
    let n = r.u64()? as usize;
    let dim = r.u32()? as usize;
    r.require(n.saturating_mul(dim).saturating_mul(4))?;
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        data.push(r.f32()?);
    }
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        provenance.push(Provenance {
            image_id: r.u32()?,
            row: r.u32()?,
            col: r.u32()?,
        });
    }
    r.finish()?;
    FeatureMatrix::new(dim, data, provenance)
}

pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    decode_features(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_patch(h: usize, w: usize, b: usize, seed: u64) -> RasterPatch {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let s = (0..h * w * b).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        RasterPatch::new(h, w, b, s).unwrap()
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect_index(3, 5).unwrap(), 3);
        assert_eq!(reflect_index(-1, 5).unwrap(), 1);
        assert_eq!(reflect_index(6, 5).unwrap(), 2);
        assert_eq!(reflect_index(5, 5).unwrap(), 3);
        assert_eq!(reflect_index(-4, 5).unwrap(), 4);
        assert_eq!(reflect_index(0, 1).unwrap(), 0);
        assert!(reflect_index(-1, 1).is_err());
        assert!(reflect_index(1, 1).is_err());
        assert!(reflect_index(-5, 5).is_err());
    }

    #[test]
    fn weight_examples() {
        let w = gaussian_patch_weights(&FeatureConfig::new(1, 1.0));
        assert_eq!(w[4], 1.0);
        for i in [1, 3, 5, 7] {
            assert!((w[i] - 0.60653).abs() < 1e-5);
        }
        for i in [0, 2, 6, 8] {
            assert!((w[i] - 0.36788).abs() < 1e-5);
        }
        let w3 = gaussian_patch_weights(&FeatureConfig::new(3, 1.5));
        assert!((w3[48] - (-4.0f64).exp()).abs() < 1e-15);
        assert!((w3[48] - 0.018316).abs() < 1e-6);
        assert_eq!(w3[24], 1.0);
    }

    #[test]
    fn default_sigma_is_half_k() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.sigma(), 1.5);
        assert!(FeatureConfig { k: 0, sigma_g: None }.validate().is_err());
        assert!(FeatureConfig::new(2, 0.0).validate().is_err());
    }

    #[test]
    fn two_by_two_unweighted_corner() {
        let p = RasterPatch::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = extract_features(&p, &FeatureConfig::new(1, f64::INFINITY), 0).unwrap();
        assert_eq!(f.row(0), &[4.0, 3.0, 4.0, 2.0, 1.0, 2.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_patch_gives_identical_rows() {
        let p = RasterPatch::new(5, 6, 2, vec![0.7; 60]).unwrap();
        let cfg = FeatureConfig::new(2, 1.3);
        let f = extract_features(&p, &cfg, 0).unwrap();
        let w = gaussian_patch_weights(&cfg);
        for row in f.rows() {
            assert_eq!(row, f.row(0));
            for (o, wo) in w.iter().enumerate() {
                for b in 0..2 {
                    assert_eq!(row[o * 2 + b], (wo * 0.7f32 as f64) as f32);
                }
            }
        }
    }

    #[test]
    fn k_too_large_is_rejected() {
        let p = random_patch(3, 8, 1, 1);
        assert!(extract_features(&p, &FeatureConfig::new(3, 1.0), 0).is_err());
    }

    #[test]
    fn provenance_is_row_major() {
        let p = random_patch(3, 4, 1, 2);
        let f = extract_features(&p, &FeatureConfig::new(1, 1.0), 9).unwrap();
        assert_eq!(f.n(), 12);
        assert_eq!(
            f.provenance()[6],
            Provenance {
                image_id: 9,
                row: 1,
                col: 2
            }
        );
    }

    #[test]
    fn translated_interiors_match() {
        // Columns 0..4 repeat at 4..8, so interior pixels 4 apart see the same window.
        let mut s = Vec::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for _ in 0..6 {
            let row: Vec<f32> = (0..4).map(|_| rng.gen()).collect();
            s.extend_from_slice(&row);
            s.extend_from_slice(&row);
        }
        let p = RasterPatch::new(6, 8, 1, s).unwrap();
        let f = extract_features(&p, &FeatureConfig::new(1, 0.8), 0).unwrap();
        assert_eq!(f.row(2 * 8 + 2), f.row(2 * 8 + 6));
    }

    #[test]
    fn feature_cache_round_trip() {
        let p = random_patch(4, 5, 2, 3);
        let f = extract_features(&p, &FeatureConfig::new(1, 1.0), 4).unwrap();
        let bytes = encode_features(&f);
        assert_eq!(&bytes[..4], b"GAPF");
        assert_eq!(decode_features(&bytes).unwrap(), f);
        assert!(decode_features(&bytes[..bytes.len() - 2]).is_err());
    }

    proptest! {
        #[test]
        fn dimension_law(k in 1usize..4, b in 1usize..5, extra in 0usize..3, seed in any::<u64>()) {
            let side = 2 * k + 2 + extra;
            let p = random_patch(side, side + 1, b, seed);
            let f = extract_features(&p, &FeatureConfig { k, sigma_g: None }, 0).unwrap();
            prop_assert_eq!(f.dim(), (2 * k + 1) * (2 * k + 1) * b);
            prop_assert_eq!(f.n(), side * (side + 1));
        }

        #[test]
        fn center_entry_is_own_sample(k in 1usize..3, b in 1usize..4, seed in any::<u64>()) {
            let p = random_patch(6, 7, b, seed);
            let f = extract_features(&p, &FeatureConfig::new(k, 0.9), 0).unwrap();
            let side = 2 * k + 1;
            let center = (k * side + k) * b;
            for r in 0..6 {
                for c in 0..7 {
                    prop_assert_eq!(&f.row(r * 7 + c)[center..center + b], p.pixel(r, c));
                }
            }
        }
    }
}
