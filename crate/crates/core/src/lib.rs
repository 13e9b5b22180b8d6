//! Graph active-learning pipeline (GAP) for classifying multispectral raster
//! pixels into land, water, and in-channel sediment.
//!
//! The pipeline has three stages:
//!
//! 1. [`features`]: every pixel becomes a Gaussian-weighted, flattened
//!    `(2k+1) x (2k+1) x B` neighborhood vector (non-local-means feature).
//! 2. [`active`]: each labeled training image is condensed into a handful of
//!    representative pixels by model-change active learning on a KNN
//!    similarity graph ([`graph`]) with harmonic label propagation ([`ssl`]).
//!    The union of those pixels is the RepSet, which is the whole model.
//! 3. [`pipeline`]: a test image is segmented by grafting the RepSet into the
//!    test image's graph and solving the Laplace-learning problem again.
//!
//! [`metrics`] scores predictions with overall accuracy and boundary accuracy
//! `BA(d)`, the accuracy restricted to pixels within distance `d` of a class
//! boundary.

pub mod active;
pub mod error;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod raster_io;
pub mod sparse_linalg;
pub mod ssl;

pub use error::{Error, Result};

/// Class codes stored in label masks.
pub mod class {
    pub const LAND: u8 = 0;
    pub const WATER: u8 = 1;
    pub const SEDIMENT: u8 = 2;
    pub const IGNORE: u8 = 255;
    /// Number of real (non-ignore) classes.
    pub const COUNT: usize = 3;

    pub fn is_valid(code: u8) -> bool {
        code <= SEDIMENT || code == IGNORE
    }
}
