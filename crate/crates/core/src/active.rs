//! Representative-set construction by graph active learning.
//!
//! For each training image: extract features, build the KNN graph over all of
//! its pixels, seed a class-balanced random set `R^0`, then repeatedly run
//! Laplace learning with the labels of `R^t`, score the remaining labelable
//! pixels with an acquisition function, and add the best one (with its true
//! label). The loop stops when the accuracy `a_t` on the pixels outside
//! `R^t` moves by less than `epsilon`, or after `k_max` acquisitions.
//!
//! The model-change score of candidate `k` is
//!
//! ```text
//! A(k) = || e_{y_k} - u_k ||_2 * || C e_k ||_2 / (gamma^2 + C_kk),   C = V diag(1 / (lambda + tau^2)) V^T
//! ```
//!
//! where `u_k` is the score row, `y_k` its argmax, and `(lambda, V)` the `m`
//! lowest eigenpairs of the graph Laplacian.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, FeatureMatrix, Provenance};
use crate::graph::{build_graph, normalize_rows, GraphConfig, SparseGraph};
use crate::raster_io::{ByteReader, LabelMask, RasterPatch};
use crate::sparse_linalg::{lanczos_lowest, CgConfig, EigenPairs};
use crate::ssl::{argmax, laplace_learning_warm, predict_labels, LabelAssignment, ScoreMatrix};

pub const REPSET_MAGIC: &[u8; 4] = b"GAPS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Acquisition {
    ModelChange,
    Uncertainty,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveConfig {
    /// Initial samples per class.
    pub n0: usize,
    /// Stop once the accuracy moves by less than this; 0 disables the rule.
    pub epsilon: f64,
    pub k_max: usize,
    pub acquisition: Acquisition,
    pub gamma: f64,
    pub tau: f64,
    /// Eigenpairs kept for the model-change covariance.
    pub m: usize,
    /// Relative residual tolerance for those eigenpairs.
    pub eigen_tol: f64,
    pub seed: u64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            n0: 10,
            epsilon: 1e-3,
            k_max: 100,
            acquisition: Acquisition::ModelChange,
            gamma: 0.1,
            tau: 0.1,
            m: 50,
            eigen_tol: 1e-10,
            seed: 0,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 < 1 {
            return Err(Error::Config("n0 must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be nonnegative".into()));
        }
        if !(self.eigen_tol > 0.0) {
            return Err(Error::Config("eigen_tol must be positive".into()));
        }
        if !(self.gamma > 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config("gamma and tau must be positive".into()));
        }
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(())
    }

    /// Per-image generator seed.
    pub fn image_seed(&self, image_id: u32) -> u64 {
        self.seed ^ (image_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Acquired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub features: Vec<f32>,
    pub class: u8,
    pub provenance: Provenance,
    pub phase: Phase,
}

/// The condensed labeled training set; it is the whole trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct RepSet {
    dim: usize,
    records: Vec<RepRecord>,
}

impl RepSet {
    pub fn new(dim: usize, records: Vec<RepRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.features.len(),
                });
            }
            if r.class as usize >= class::COUNT {
                return Err(Error::Config(format!("RepSet class {} out of range", r.class)));
            }
            if !seen.insert(r.provenance) {
                return Err(Error::Config(format!(
                    "RepSet pixel {:?} listed twice",
                    r.provenance
                )));
            }
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RepRecord] {
        &self.records
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.class).collect()
    }

    pub fn features(&self) -> FeatureMatrix {
        let data = self
            .records
            .iter()
            .flat_map(|r| r.features.iter().copied())
            .collect();
        let prov = self.records.iter().map(|r| r.provenance).collect();
        FeatureMatrix::new(self.dim, data, prov).expect("records share dim")
    }

    /// Same records in a different order.
    pub fn permuted(&self, order: &[usize]) -> RepSet {
        RepSet {
            dim: self.dim,
            records: order.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.records.len() * (14 + 4 * self.dim));
        out.extend_from_slice(REPSET_MAGIC);
        out.push(1);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for r in &self.records {
            out.push(r.class);
            out.push(match r.phase {
                Phase::Init => 0,
                Phase::Acquired => 1,
            });
            out.extend_from_slice(&r.provenance.image_id.to_le_bytes());
            out.extend_from_slice(&r.provenance.row.to_le_bytes());
            out.extend_from_slice(&r.provenance.col.to_le_bytes());
            for v in &r.features {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(REPSET_MAGIC)?;
        r.expect_u8("version", 1)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        r.require(count.saturating_mul(14 + 4 * dim))?;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let class = r.u8()?;
            let offset = r.offset();
            let phase = match r.u8()? {
                0 => Phase::Init,
                1 => Phase::Acquired,
                other => {
                    return Err(Error::BadHeader {
                        what: "phase",
                        offset,
                        found: other as u64,
                        expected: 1,
                    })
                }
            };
            let provenance = Provenance {
                image_id: r.u32()?,
                row: r.u32()?,
                col: r.u32()?,
            };
            let mut features = Vec::with_capacity(dim);
            for _ in 0..dim {
                features.push(r.f32()?);
            }
            records.push(RepRecord {
                features,
                class,
                provenance,
                phase,
            });
        }
        r.finish()?;
        RepSet::new(dim, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Epsilon,
    KMax,
    /// Every labelable pixel is already in the set.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    /// Accuracy of the prediction from `R^t` on labelable pixels outside `R^t`.
    pub accuracy: f64,
    /// Node added after this evaluation, if any.
    pub chosen: Option<usize>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopTrace {
    pub records: Vec<TraceRecord>,
    pub stop_reason: StopReason,
    /// Solver problems met along the way (the loop keeps going).
    pub warnings: Vec<String>,
}

impl LoopTrace {
    pub fn acquisitions(&self) -> usize {
        self.records.iter().filter(|r| r.chosen.is_some()).count()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.accuracy)
    }
}

/// Class-balanced random start: `min(n0, available)` nodes of each present class.
///
/// Returned grouped by class (ascending), each group sorted by node index.
pub fn init_repset(labels: &[u8], n0: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for c in 0..class::COUNT as u8 {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let take = n0.min(members.len());
        let mut picked: Vec<usize> = sample(rng, members.len(), take)
            .into_iter()
            .map(|p| members[p])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    if out.is_empty() {
        return Err(Error::NothingToLabel);
    }
    Ok(out)
}

fn residual_to_pseudo_label(row: &[f64]) -> f64 {
    let y = argmax(row);
    row.iter()
        .enumerate()
        .map(|(c, &u)| {
            let e = if c == y { 1.0 } else { 0.0 };
            (e - u) * (e - u)
        })
        .sum::<f64>()
        .sqrt()
}

/// Model-change scores of `candidates` under the rank-`m` spectral covariance.
pub fn acquisition_mc(
    scores: &ScoreMatrix,
    eig: &EigenPairs,
    candidates: &[usize],
    gamma: f64,
    tau: f64,
) -> Result<Vec<f64>> {
    if eig.n() != scores.n() {
        return Err(Error::DimensionMismatch {
            expected: scores.n(),
            got: eig.n(),
        });
    }
    let tau2 = tau * tau;
    let gamma2 = gamma * gamma;
    let inv: Vec<f64> = eig.eigenvalues().iter().map(|l| 1.0 / (l + tau2)).collect();
    Ok(candidates
        .iter()
        .map(|&k| {
            let v = eig.node_row(k);
            let mut col_sq = 0.0;
            let mut ckk = 0.0;
            for (vj, dj) in v.iter().zip(&inv) {
                let t = dj * vj;
                col_sq += t * t;
                ckk += t * vj;
            }
            residual_to_pseudo_label(scores.row(k)) * col_sq.sqrt() / (gamma2 + ckk)
        })
        .collect())
}

/// Smallest-margin uncertainty: `1 - (largest - second largest)`.
pub fn acquisition_uncertainty(scores: &ScoreMatrix, candidates: &[usize]) -> Vec<f64> {
    candidates
        .iter()
        .map(|&k| {
            let row = scores.row(k);
            let mut first = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for &v in row {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            if row.len() < 2 {
                second = 0.0;
            }
            1.0 - (first - second)
        })
        .collect()
}

/// Position of the largest score; ties (and NaN) resolve to the earliest position.
fn best_position(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (p, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(p);
        }
    }
    best
}

/// Everything the loop needs besides the graph.
pub struct LoopInputs<'a> {
    /// Ground-truth class per node (255 = ignore).
    pub truth: &'a [u8],
    pub initial: &'a [usize],
    /// Required for model change.
    pub eig: Option<&'a EigenPairs>,
    pub solver: &'a CgConfig,
}

/// Runs the acquisition loop; returns `R` (initial nodes first, then
/// acquisitions in order) and the trace.
pub fn active_learning_loop(
    graph: &SparseGraph,
    inputs: &LoopInputs<'_>,
    config: &ActiveConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, LoopTrace)> {
    config.validate()?;
    let n = graph.n();
    let truth = inputs.truth;
    if truth.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: truth.len(),
        });
    }
    if inputs.initial.is_empty() {
        return Err(Error::NoLabels);
    }
    if config.acquisition == Acquisition::ModelChange && inputs.eig.is_none() {
        return Err(Error::Config("model-change acquisition needs eigenpairs".into()));
    }

    let mut in_set = vec![false; n];
    let mut set = Vec::with_capacity(inputs.initial.len() + config.k_max);
    for &i in inputs.initial {
        if i >= n || truth[i] == class::IGNORE || in_set[i] {
            return Err(Error::Config(format!("invalid initial node {i}")));
        }
        in_set[i] = true;
        set.push(i);
    }

    let mut records: Vec<TraceRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut previous: Option<ScoreMatrix> = None;
    let stop_reason = loop {
        let t = records.len();
        let labels = LabelAssignment::new(
            set.clone(),
            set.iter().map(|&i| truth[i]).collect(),
            class::COUNT,
        )?;
        let scores = laplace_learning_warm(graph, &labels, inputs.solver, previous.as_ref())?;
        if !scores.converged() {
            let worst = scores
                .reports()
                .iter()
                .map(|r| r.residual)
                .fold(0.0, f64::max);
            warnings.push(format!("t = {t}: CG did not converge (residual {worst:e})"));
        }
        let pred = predict_labels(&scores);
        let candidates: Vec<usize> = (0..n)
            .filter(|&i| !in_set[i] && truth[i] != class::IGNORE)
            .collect();
        let correct = candidates.iter().filter(|&&i| pred[i] == truth[i]).count();
        let accuracy = if candidates.is_empty() {
            1.0
        } else {
            correct as f64 / candidates.len() as f64
        };
        records.push(TraceRecord {
            t,
            accuracy,
            chosen: None,
            score: None,
        });

        if t >= 1 && (accuracy - records[t - 1].accuracy).abs() < config.epsilon {
            break StopReason::Epsilon;
        }
        if t >= config.k_max {
            break StopReason::KMax;
        }
        if candidates.is_empty() {
            break StopReason::Exhausted;
        }

        let acq = match config.acquisition {
            Acquisition::ModelChange => acquisition_mc(
                &scores,
                inputs.eig.expect("checked above"),
                &candidates,
                config.gamma,
                config.tau,
            )?,
            Acquisition::Uncertainty => acquisition_uncertainty(&scores, &candidates),
            Acquisition::Random => candidates.iter().map(|_| rng.gen::<f64>()).collect(),
        };
        let Some(pos) = best_position(&acq) else {
            break StopReason::Exhausted;
        };
        let chosen = candidates[pos];
        records[t].chosen = Some(chosen);
        records[t].score = Some(acq[pos]);
        in_set[chosen] = true;
        set.push(chosen);
        previous = Some(scores);
    };

    Ok((
        set,
        LoopTrace {
            records,
            stop_reason,
            warnings,
        },
    ))
}

/// Settings shared by RepSet construction and prediction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningSettings {
    pub feature: FeatureConfig,
    pub graph: GraphConfig,
    pub active: ActiveConfig,
    pub solver: CgConfig,
}

/// The per-image outcome of RepSet construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageSelection {
    pub image_id: u32,
    pub initial: usize,
    pub acquired: usize,
    pub trace: LoopTrace,
    #[serde(skip)]
    pub records: Vec<RepRecord>,
}

/// A training image with its features, graph, and (for model change) the
/// lowest Laplacian eigenpairs; these depend only on the image, the feature
/// and graph settings, and `m`, so several selection runs can share them.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub image_id: u32,
    pub features: FeatureMatrix,
    pub graph: SparseGraph,
    pub truth: Vec<u8>,
    pub eig: Option<EigenPairs>,
}

/// Seed of the Lanczos start vector for one image.
pub fn eigen_seed(image_id: u32) -> u64 {
    (image_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl PreparedImage {
    /// Extracts features and builds the graph; eigenpairs are computed when
    /// `settings` asks for model-change acquisition.
    pub fn new(
        patch: &RasterPatch,
        mask: &LabelMask,
        image_id: u32,
        settings: &LearningSettings,
    ) -> Result<Self> {
        let with_eig = settings.active.acquisition == Acquisition::ModelChange;
        Self::build(patch, mask, image_id, settings, with_eig)
    }

    /// Like [`PreparedImage::new`] but always computes eigenpairs.
    pub fn with_eigenpairs(
        patch: &RasterPatch,
        mask: &LabelMask,
        image_id: u32,
        settings: &LearningSettings,
    ) -> Result<Self> {
        Self::build(patch, mask, image_id, settings, true)
    }

    fn build(
        patch: &RasterPatch,
        mask: &LabelMask,
        image_id: u32,
        settings: &LearningSettings,
        with_eig: bool,
    ) -> Result<Self> {
        if patch.height() != mask.height() || patch.width() != mask.width() {
            return Err(Error::Shape("patch and mask sizes differ".into()));
        }
        let features = extract_features(patch, &settings.feature, image_id)?;
        let graph = build_graph(&normalize_rows(&features), &settings.graph)?;
        let eig = if with_eig {
            Some(lanczos_lowest(
                graph.laplacian(),
                settings.active.m.min(graph.n()),
                settings.active.eigen_tol,
                eigen_seed(image_id),
            )?)
        } else {
            None
        };
        Ok(Self {
            image_id,
            features,
            graph,
            truth: mask.labels().to_vec(),
            eig,
        })
    }

    /// Initializes `R^0` and runs the acquisition loop.
    pub fn select(&self, settings: &LearningSettings) -> Result<ImageSelection> {
        let image_id = self.image_id;
        let truth = &self.truth[..];
        let present = (0..class::COUNT as u8)
            .filter(|c| truth.contains(c))
            .count();
        if present == 1 {
            log::warn!("image {image_id} holds a single class; its RepSet covers only that class");
        }

        let mut rng = Xoshiro256PlusPlus::seed_from_u64(settings.active.image_seed(image_id));
        let initial = init_repset(truth, settings.active.n0, &mut rng)?;

        let eig = match settings.active.acquisition {
            Acquisition::ModelChange => {
                let eig = self.eig.as_ref().ok_or_else(|| {
                    Error::Config("model-change acquisition needs eigenpairs".into())
                })?;
                if eig.m() != settings.active.m.min(self.graph.n()) {
                    return Err(Error::Config(format!(
                        "prepared with {} eigenpairs, settings ask for {}",
                        eig.m(),
                        settings.active.m
                    )));
                }
                Some(eig)
            }
            _ => None,
        };
        let inputs = LoopInputs {
            truth,
            initial: &initial,
            eig,
            solver: &settings.solver,
        };
        let (set, trace) = active_learning_loop(&self.graph, &inputs, &settings.active, &mut rng)?;
        for w in &trace.warnings {
            log::warn!("image {image_id}: {w}");
        }

        let records = set
            .iter()
            .enumerate()
            .map(|(pos, &node)| RepRecord {
                features: self.features.row(node).to_vec(),
                class: truth[node],
                provenance: self.features.provenance()[node],
                phase: if pos < initial.len() {
                    Phase::Init
                } else {
                    Phase::Acquired
                },
            })
            .collect();
        Ok(ImageSelection {
            image_id,
            initial: initial.len(),
            acquired: set.len() - initial.len(),
            trace,
            records,
        })
    }
}

/// Preprocess, initialize, and run the acquisition loop on one training image.
pub fn select_from_image(
    patch: &RasterPatch,
    mask: &LabelMask,
    image_id: u32,
    settings: &LearningSettings,
) -> Result<ImageSelection> {
    PreparedImage::new(patch, mask, image_id, settings)?.select(settings)
}

/// Concatenates per-image selections into `R`, preserving their order.
pub fn repset_from_selections(dim: usize, selections: &[ImageSelection]) -> Result<RepSet> {
    let records = selections
        .iter()
        .flat_map(|s| s.records.iter().cloned())
        .collect();
    RepSet::new(dim, records)
}

/// Builds `R` as the union of per-image selections, in the given image order.
///
/// Images without any labelable pixel are skipped with a warning.
pub fn create_repset_from_images(
    images: &[(u32, RasterPatch, LabelMask)],
    settings: &LearningSettings,
) -> Result<(RepSet, Vec<ImageSelection>)> {
    let outcomes: Vec<Option<ImageSelection>> = images
        .par_iter()
        .map(|(id, patch, mask)| {
            match select_from_image(patch, mask, *id, settings) {
                Ok(sel) => Ok(Some(sel)),
                Err(Error::NothingToLabel) => {
                    log::warn!("image {id} has no labelable pixels; skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let selections: Vec<ImageSelection> = outcomes.into_iter().flatten().collect();
    let dim = images
        .first()
        .map(|(_, p, _)| settings.feature.dim(p.bands()))
        .unwrap_or(0);
    Ok((repset_from_selections(dim, &selections)?, selections))
}
