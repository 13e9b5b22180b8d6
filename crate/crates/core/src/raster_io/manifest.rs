use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_labels, load_patch, LabelMask, RasterPatch};
use crate::class;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One `{"patch", "labels", "split"}` record of a manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patch: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

/// A list of patch/label pairs with their train/test split.
///
/// Relative paths are resolved against the directory holding the manifest
/// file. The position of an entry in the manifest is its image id.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_count: usize,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            entries,
            class_count: class::COUNT,
            base_dir: base_dir.into(),
        };
        manifest.check_unique()?;
        Ok(manifest)
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let entries: Vec<ManifestEntry> = serde_json::from_str(text)?;
        Self::new(entries, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            for p in [&e.patch, &e.labels] {
                if !seen.insert(p) {
                    return Err(Error::Manifest(format!(
                        "path {} appears more than once",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `(image id, entry)` pairs of one split, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    /// Loads the patch and mask of entry `index`, checking that their shapes agree.
    pub fn load_pair(&self, index: usize) -> Result<(RasterPatch, LabelMask)> {
        let entry = self.entries.get(index).ok_or_else(|| {
            Error::Manifest(format!(
                "entry {index} out of range ({} entries)",
                self.entries.len()
            ))
        })?;
        let patch = load_patch(self.resolve(&entry.patch))?;
        let mask = load_labels(self.resolve(&entry.labels))?;
        if patch.height() != mask.height() || patch.width() != mask.width() {
            return Err(Error::Manifest(format!(
                "{}: patch is {}x{} but labels are {}x{}",
                entry.patch.display(),
                patch.height(),
                patch.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok((patch, mask))
    }

    pub fn load_patch(&self, index: usize) -> Result<RasterPatch> {
        load_patch(self.resolve(&self.entries[index].patch))
    }
}
