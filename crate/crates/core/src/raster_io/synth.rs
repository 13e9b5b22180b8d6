//! Deterministic synthetic river scenes.
//!
//! A sinusoidal water channel crosses the image left to right, flanked on
//! both banks by sediment strips; everything else is land. The channel
//! centerline at column `c` sits at row
//!
//! ```text
//! (H - 1) / 2 + amplitude * sin(2 pi c / period + phase)
//! ```
//!
//! and a pixel is water when its vertical distance to the centerline is at
//! most `channel_halfwidth`, sediment when it is at most
//! `channel_halfwidth + sediment_halfwidth`, and land otherwise.
//!
//! Random stream: `Xoshiro256PlusPlus` seeded through SplitMix64
//! (`seed_from_u64`). The first draw is the phase, `2 pi * U[0,1)` with
//! 53-bit uniforms. Then, for each pixel in row-major order and each band,
//! one standard normal (ziggurat, `rand_distr::StandardNormal`) is drawn and
//! the sample is `(mean + noise_sigma * z) as f32`. Draws happen even when
//! `noise_sigma` is zero so the stream layout never depends on the noise level.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::{LabelMask, RasterPatch};
use crate::class;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Per-class mean band vectors, indexed by class code (land, water, sediment).
    pub class_means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub channel_amplitude: f64,
    pub channel_period: f64,
    pub channel_halfwidth: f64,
    pub sediment_halfwidth: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            bands: 6,
            // Six reflective bands (blue, green, red, NIR, SWIR1, SWIR2).
            class_means: vec![
                vec![0.06, 0.09, 0.08, 0.30, 0.22, 0.12],
                vec![0.07, 0.06, 0.04, 0.03, 0.02, 0.01],
                vec![0.12, 0.15, 0.18, 0.22, 0.26, 0.24],
            ],
            noise_sigma: 0.06,
            channel_amplitude: 10.0,
            channel_period: 48.0,
            channel_halfwidth: 5.0,
            sediment_halfwidth: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad("synthetic image dimensions must be positive".into());
        }
        if self.bands > u16::MAX as usize {
            return bad(format!("{} bands exceed the file format limit", self.bands));
        }
        if self.class_means.len() != class::COUNT {
            return bad(format!(
                "class_means needs {} vectors, got {}",
                class::COUNT,
                self.class_means.len()
            ));
        }
        for (c, m) in self.class_means.iter().enumerate() {
            if m.len() != self.bands {
                return bad(format!(
                    "class_means[{c}] has {} entries for {} bands",
                    m.len(),
                    self.bands
                ));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return bad(format!("class_means[{c}] is not finite"));
            }
        }
        for a in 0..class::COUNT {
            for b in a + 1..class::COUNT {
                if self.class_means[a] == self.class_means[b] {
                    return bad(format!("class means {a} and {b} are identical"));
                }
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.channel_halfwidth > 0.0) || !(self.sediment_halfwidth > 0.0) {
            return bad("halfwidths must be positive".into());
        }
        if !(self.channel_period > 0.0) || !self.channel_amplitude.is_finite() {
            return bad("channel_period must be positive and amplitude finite".into());
        }
        Ok(())
    }

    fn class_at(&self, row: usize, col: usize, phase: f64) -> u8 {
        let center = (self.height as f64 - 1.0) / 2.0
            + self.channel_amplitude * (TAU * col as f64 / self.channel_period + phase).sin();
        let d = (row as f64 - center).abs();
        if d <= self.channel_halfwidth {
            class::WATER
        } else if d <= self.channel_halfwidth + self.sediment_halfwidth {
            class::SEDIMENT
        } else {
            class::LAND
        }
    }
}

/// Generates one `(patch, mask)` scene; a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(RasterPatch, LabelMask)> {
    config.validate()?;
    if 2.0 * config.channel_halfwidth >= config.height as f64 {
        return Err(Error::Config(format!(
            "channel width {} does not fit in image height {}",
            2.0 * config.channel_halfwidth,
            config.height
        )));
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let phase = TAU * rng.gen::<f64>();

    let (h, w, b) = (config.height, config.width, config.bands);
    let mut labels = Vec::with_capacity(h * w);
    let mut samples = Vec::with_capacity(h * w * b);
    for r in 0..h {
        for c in 0..w {
            let code = config.class_at(r, c, phase);
            labels.push(code);
            for &mean in &config.class_means[code as usize] {
                let z: f64 = rng.sample(StandardNormal);
                samples.push((mean + config.noise_sigma * z) as f32);
            }
        }
    }
    Ok((RasterPatch::new(h, w, b, samples)?, LabelMask::new(h, w, labels)?))
}
