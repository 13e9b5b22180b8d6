//! Train / predict / evaluate flows over a dataset manifest.
//!
//! Training condenses every training image into its active-learning
//! selection and concatenates the selections into a [`RepSet`]. Prediction
//! builds one graph over the RepSet records followed by the pixels of the test
//! image (row-major) and propagates the RepSet labels with Laplace learning.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{
    create_repset_from_images, ActiveConfig, ImageSelection, LearningSettings, RepSet,
};
use crate::class;
use crate::error::{Error, Result};
use crate::features::{extract_features, save_features, FeatureConfig};
use crate::graph::{
    graph_from_knn, knn_search, knn_search_with_prefix, normalize_rows, GraphConfig, KnnResult,
    NormalizedFeatures,
};
use crate::metrics::{collapse_sediment, EvalReport, DEFAULT_BA_DISTANCES};
use crate::raster_io::{
    generate_synthetic, save_labels, save_patch, DatasetManifest, LabelMask, ManifestEntry,
    RasterPatch, Split, SynthConfig,
};
use crate::sparse_linalg::CgConfig;
use crate::ssl::{argmax, laplace_learning, LabelAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Boundary distances `d` for BA(d).
    pub distances: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            distances: DEFAULT_BA_DISTANCES.to_vec(),
        }
    }
}

/// Size of a generated dataset. Image `i` (train first, then test) is drawn
/// with seed `image.seed + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDataset {
    pub train: usize,
    pub test: usize,
    pub image: SynthConfig,
}

impl Default for SynthDataset {
    fn default() -> Self {
        Self {
            train: 8,
            test: 4,
            image: SynthConfig::default(),
        }
    }
}

/// Everything a run needs; every field has a default, and unknown keys are
/// rejected when parsing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub feature: FeatureConfig,
    pub graph: GraphConfig,
    pub active: ActiveConfig,
    pub solver: CgConfig,
    pub metrics: MetricsConfig,
    /// Relabel sediment as land in both prediction and truth before scoring.
    pub collapse_sediment: bool,
    /// Relative output paths are placed here when set.
    pub output_dir: Option<PathBuf>,
    pub synth: SynthDataset,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.feature.validate()?;
        self.graph.validate()?;
        self.active.validate()?;
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver tol must be positive".into()));
        }
        if self.metrics.distances.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config(
                "metric distances must be nonnegative numbers".into(),
            ));
        }
        self.synth.image.validate()
    }

    pub fn settings(&self) -> LearningSettings {
        LearningSettings {
            feature: self.feature.clone(),
            graph: self.graph.clone(),
            active: self.active.clone(),
            solver: self.solver.clone(),
        }
    }

    /// `path` itself when absolute or when no output directory is set.
    pub fn output_path(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        match &self.output_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

/// Per-pixel classes plus the winning score of each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub classes: LabelMask,
    pub confidence: Vec<f64>,
}

impl PredictionMap {
    pub fn height(&self) -> usize {
        self.classes.height()
    }

    pub fn width(&self) -> usize {
        self.classes.width()
    }
}

/// A test image with its normalized pixel features and their KNN among
/// themselves, ready to be predicted against any RepSet.
#[derive(Debug, Clone)]
pub struct PreparedTestImage {
    height: usize,
    width: usize,
    bands: usize,
    pixels: NormalizedFeatures,
    /// `None` when the image has too few pixels to have any neighbor.
    pixel_knn: Option<KnnResult>,
}

impl PreparedTestImage {
    pub fn new(patch: &RasterPatch, config: &PipelineConfig) -> Result<Self> {
        config.graph.validate()?;
        let pixels = normalize_rows(&extract_features(patch, &config.feature, u32::MAX)?);
        let n = pixels.features.n();
        let pixel_knn = if n >= 2 {
            Some(knn_search(&pixels, config.graph.k.min(n - 1))?)
        } else {
            None
        };
        Ok(Self {
            height: patch.height(),
            width: patch.width(),
            bands: patch.bands(),
            pixels,
            pixel_knn,
        })
    }

    /// Segments the image by Laplace learning on the graph over `repset` ∪
    /// its pixels (RepSet nodes first, then pixels row-major).
    pub fn predict(&self, repset: &RepSet, config: &PipelineConfig) -> Result<PredictionMap> {
        if repset.is_empty() {
            return Err(Error::NoLabels);
        }
        let expected = config.feature.dim(self.bands);
        if repset.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: repset.dim(),
            });
        }
        let prefix = normalize_rows(&repset.features());
        let knn = match &self.pixel_knn {
            Some(base) if base.k >= config.graph.k.min(self.pixels.features.n() - 1) => {
                knn_search_with_prefix(&prefix, &self.pixels, base, config.graph.k)?
            }
            _ => {
                let joint = NormalizedFeatures {
                    features: prefix.features.concat(&self.pixels.features)?,
                    zero_rows: [&prefix.zero_rows[..], &self.pixels.zero_rows[..]].concat(),
                };
                knn_search(&joint, config.graph.k)?
            }
        };
        let graph = graph_from_knn(&knn, &config.graph)?;

        let r = repset.len();
        let labels = LabelAssignment::new((0..r).collect(), repset.labels(), class::COUNT)?;
        let scores = laplace_learning(&graph, &labels, &config.solver)?;
        if !scores.converged() {
            log::warn!("laplace learning did not reach the requested tolerance");
        }

        let n = self.height * self.width;
        let mut classes = Vec::with_capacity(n);
        let mut confidence = Vec::with_capacity(n);
        for p in 0..n {
            let row = scores.row(r + p);
            let best = argmax(row);
            classes.push(best as u8);
            confidence.push(row[best].clamp(0.0, 1.0));
        }
        Ok(PredictionMap {
            classes: LabelMask::new(self.height, self.width, classes)?,
            confidence,
        })
    }
}

/// Segments `patch` by Laplace learning on the graph over `repset` ∪ its pixels.
pub fn predict_image(
    repset: &RepSet,
    patch: &RasterPatch,
    config: &PipelineConfig,
) -> Result<PredictionMap> {
    if repset.is_empty() {
        return Err(Error::NoLabels);
    }
    let expected = config.feature.dim(patch.bands());
    if repset.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: repset.dim(),
        });
    }
    PreparedTestImage::new(patch, config)?.predict(repset, config)
}

/// Metrics of one test image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageReport {
    pub image: usize,
    pub patch: PathBuf,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub images: Vec<ImageReport>,
    /// Pixel-pooled over all images.
    pub aggregate: EvalReport,
}

impl SplitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores a prediction against the truth, collapsing sediment in both first
/// when `collapse` is set.
pub fn score_prediction(
    pred: &LabelMask,
    truth: &LabelMask,
    distances: &[f64],
    collapse: bool,
) -> Result<EvalReport> {
    if collapse {
        EvalReport::evaluate(&collapse_sediment(pred), &collapse_sediment(truth), distances)
    } else {
        EvalReport::evaluate(pred, truth, distances)
    }
}

/// Predicts and scores every test image of the manifest.
pub fn evaluate_split(
    manifest: &DatasetManifest,
    repset: &RepSet,
    config: &PipelineConfig,
) -> Result<SplitReport> {
    let test: Vec<usize> = manifest.split(Split::Test).map(|(i, _)| i).collect();
    if test.is_empty() {
        return Err(Error::Manifest("manifest has no test images".into()));
    }
    let images = test
        .par_iter()
        .map(|&i| {
            let (patch, truth) = manifest.load_pair(i)?;
            let pred = predict_image(repset, &patch, config)?;
            let report = score_prediction(
                &pred.classes,
                &truth,
                &config.metrics.distances,
                config.collapse_sediment,
            )?;
            Ok(ImageReport {
                image: i,
                patch: manifest.entries[i].patch.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = images.iter().map(|r| r.report.clone()).collect();
    Ok(SplitReport {
        aggregate: EvalReport::pooled(&reports),
        images,
    })
}

/// Runs RepSet construction over the training split, in manifest order.
pub fn create_repset(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
) -> Result<(RepSet, Vec<ImageSelection>)> {
    let train: Vec<usize> = manifest.split(Split::Train).map(|(i, _)| i).collect();
    if train.is_empty() {
        return Err(Error::Manifest("manifest has no training images".into()));
    }
    let images = train
        .iter()
        .map(|&i| {
            let (patch, mask) = manifest.load_pair(i)?;
            let id = u32::try_from(i)
                .map_err(|_| Error::Manifest("too many manifest entries".into()))?;
            Ok((id, patch, mask))
        })
        .collect::<Result<Vec<_>>>()?;
    create_repset_from_images(&images, &config.settings())
}

/// Per-image traces of a RepSet run as JSON.
pub fn trace_json(selections: &[ImageSelection]) -> Result<String> {
    #[derive(Serialize)]
    struct Traces<'a> {
        images: &'a [ImageSelection],
    }
    Ok(serde_json::to_string_pretty(&Traces { images: selections })?)
}

/// Writes `<stem>.gapf` feature caches for every manifest entry into `out_dir`.
pub fn featurize_manifest(
    manifest: &DatasetManifest,
    config: &FeatureConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| {
            let patch = manifest.load_patch(i)?;
            let features = extract_features(&patch, config, i as u32)?;
            let stem = manifest.entries[i]
                .patch
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("image_{i:03}"));
            let path = out_dir.join(format!("{stem}.gapf"));
            save_features(&features, &path)?;
            Ok(path)
        })
        .collect()
}

/// Generates the configured synthetic split into `out_dir` and writes
/// `manifest.json` next to the images.
pub fn write_synthetic_dataset(dataset: &SynthDataset, out_dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = std::iter::repeat_n(Split::Train, dataset.train)
        .chain(std::iter::repeat_n(Split::Test, dataset.test));
    let mut entries = Vec::new();
    for (i, split) in splits.enumerate() {
        let cfg = dataset.image.clone().with_seed(dataset.image.seed + i as u64);
        let (patch, mask) = generate_synthetic(&cfg)?;
        let name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let patch_name = PathBuf::from(format!("{name}_{i:03}.gapr"));
        let label_name = PathBuf::from(format!("{name}_{i:03}.gapl"));
        save_patch(&patch, out_dir.join(&patch_name))?;
        save_labels(&mask, out_dir.join(&label_name))?;
        entries.push(ManifestEntry {
            patch: patch_name,
            labels: label_name,
            split,
        });
    }
    let manifest = DatasetManifest::new(entries, out_dir)?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Display colors: land purple, water blue, sediment yellow, ignore black.
pub fn class_color(code: u8) -> [u8; 3] {
    match code {
        class::LAND => [128, 0, 128],
        class::WATER => [0, 0, 255],
        class::SEDIMENT => [255, 255, 0],
        _ => [0, 0, 0],
    }
}

/// Binary PPM (P6) rendering of a class grid.
pub fn render_colormap(mask: &LabelMask) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", mask.width(), mask.height());
    let mut out = Vec::with_capacity(header.len() + 3 * mask.labels().len());
    out.extend_from_slice(header.as_bytes());
    for &code in mask.labels() {
        out.extend_from_slice(&class_color(code));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_palette() {
        let mask = LabelMask::new(2, 2, vec![0, 1, 2, 255]).unwrap();
        let ppm = render_colormap(&mask);
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert_eq!(
            &ppm[header.len()..],
            &[128, 0, 128, 0, 0, 255, 255, 255, 0, 0, 0, 0]
        );
        let big = render_colormap(&LabelMask::filled(64, 64, class::WATER).unwrap());
        assert!(big.starts_with(b"P6\n64 64\n255\n"));
        assert!(big[13..].chunks(3).all(|px| px == [0, 0, 255]));
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let cfg = PipelineConfig::from_json(r#"{"active": {"k_max": 0}, "collapse_sediment": true}"#)
            .unwrap();
        assert_eq!(cfg.active.k_max, 0);
        assert!(cfg.collapse_sediment);
        assert_eq!(cfg.active.n0, 10);
        assert!(PipelineConfig::from_json(r#"{"grpah": {}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"graph": {"kk": 3}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"graph": {"k": 0}}"#).is_err());
    }

    #[test]
    fn output_dir_applies_to_relative_paths() {
        let cfg = PipelineConfig {
            output_dir: Some(PathBuf::from("/tmp/out")),
            ..PipelineConfig::default()
        };
        assert_eq!(cfg.output_path("a.json"), PathBuf::from("/tmp/out/a.json"));
        assert_eq!(cfg.output_path("/x/a.json"), PathBuf::from("/x/a.json"));
        assert_eq!(
            PipelineConfig::default().output_path("a.json"),
            PathBuf::from("a.json")
        );
    }

    #[test]
    fn collapse_removes_sediment_confusions() {
        let truth = LabelMask::new(1, 4, vec![0, 2, 1, 2]).unwrap();
        let pred = LabelMask::new(1, 4, vec![2, 0, 1, 2]).unwrap();
        let plain = score_prediction(&pred, &truth, &[3.0], false).unwrap();
        assert_eq!(plain.oa, Some(0.5));
        let collapsed = score_prediction(&pred, &truth, &[3.0], true).unwrap();
        assert_eq!(collapsed.oa, Some(1.0));
    }

    #[test]
    fn empty_or_mismatched_repset_is_rejected() {
        let patch = RasterPatch::new(4, 4, 1, vec![0.5; 16]).unwrap();
        let cfg = PipelineConfig::default();
        let empty = RepSet::new(cfg.feature.dim(1), Vec::new()).unwrap();
        assert!(matches!(predict_image(&empty, &patch, &cfg), Err(Error::NoLabels)));
    }
}
