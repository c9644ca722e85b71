//! JSON dataset manifest.
//!
//! ```json
//! {
//!   "feature_dim": 4096,
//!   "feature_blob": "features.srf",
//!   "images": [{
//!     "id": "img0001", "width": 320, "height": 240, "split": "train",
//!     "image": "images/img0001.pgm",
//!     "gt_mask": "gt/img0001.pgm",
//!     "candidate_maps": ["maps/img0001_0.pgm", "..."],
//!     "image_feature_ref": 0,
//!     "proposals": [{"id": "p00", "box": [10, 12, 40, 30], "confidence": 0.93,
//!                    "feature_ref": 1, "enlarged_feature_ref": 2}]
//!   }]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Feature refs index into
//! the feature blob. Maps are loaded on demand.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::blob::{read_blob_header, read_feature_blob, FeatureStore};
use crate::io::pgm::{read_map, read_mask};
use crate::io::types::{BBox, SaliencyMap};

pub const DEFAULT_FEATURE_DIM: usize = 4096;

fn default_feature_dim() -> usize {
    DEFAULT_FEATURE_DIM
}

/// Whether an image's GT may drive pseudo-labels (`train`) or only its
/// candidate maps may (`pool`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectProposal {
    pub id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    pub feature_ref: u32,
    pub enlarged_feature_ref: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<String>,
    #[serde(default)]
    pub candidate_maps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feature_ref: Option<u32>,
    #[serde(default)]
    pub proposals: Vec<ObjectProposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_blob: Option<String>,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
}

/// A validated, immutable dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub feature_dim: usize,
    feature_blob: Option<PathBuf>,
    pub records: Vec<ImageRecord>,
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("manifest parse error: {e}")))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Dataset::from_manifest(manifest, root)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn from_manifest(manifest: Manifest, root: PathBuf) -> Result<Self> {
        let feature_blob = manifest.feature_blob.as_ref().map(|p| root.join(p));
        let blob_count = match &feature_blob {
            Some(p) => {
                let header = read_blob_header(p)?;
                if header.dim != manifest.feature_dim {
                    return Err(Error::dim(
                        format!("feature blob {}", p.display()),
                        manifest.feature_dim,
                        header.dim,
                    ));
                }
                header.count
            }
            None => 0,
        };
        let mut ids = HashSet::new();
        for rec in &manifest.images {
            validate_record(rec, blob_count)?;
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::schema(&rec.id, "id", "duplicate image id"));
            }
        }
        Ok(Dataset {
            root,
            feature_dim: manifest.feature_dim,
            feature_blob,
            records: manifest.images,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn load_features(&self) -> Result<FeatureStore> {
        match &self.feature_blob {
            Some(p) => read_feature_blob(p),
            None => Ok(FeatureStore::new(self.feature_dim)),
        }
    }

    pub fn load_gt(&self, rec: &ImageRecord) -> Result<Option<SaliencyMap>> {
        let Some(rel) = &rec.gt_mask else {
            return Ok(None);
        };
        let mask = read_mask(&self.resolve(rel))?;
        mask.ensure_dims(rec.width, rec.height, &format!("gt mask of {}", rec.id))?;
        Ok(Some(mask))
    }

    pub fn load_candidate_maps(&self, rec: &ImageRecord) -> Result<Vec<SaliencyMap>> {
        rec.candidate_maps
            .iter()
            .map(|rel| {
                let m = read_map(&self.resolve(rel))?;
                m.ensure_dims(rec.width, rec.height, &format!("candidate map {rel}"))?;
                Ok(m)
            })
            .collect()
    }

    pub fn load_image(&self, rec: &ImageRecord) -> Result<SaliencyMap> {
        let rel = rec.image.as_ref().ok_or_else(|| {
            Error::schema(&rec.id, "image", "grayscale image required for scene descriptors")
        })?;
        read_map(&self.resolve(rel))
    }
}

fn validate_record(rec: &ImageRecord, blob_count: usize) -> Result<()> {
    if rec.id.is_empty() {
        return Err(Error::schema("<unnamed>", "id", "empty image id"));
    }
    if rec.width == 0 || rec.height == 0 {
        return Err(Error::schema(&rec.id, "width/height", "image must be non-empty"));
    }
    let check_ref = |field: &str, r: u32| -> Result<()> {
        if r as usize >= blob_count {
            Err(Error::schema(
                &rec.id,
                field,
                format!("dangling feature reference {r} (blob holds {blob_count} vectors)"),
            ))
        } else {
            Ok(())
        }
    };
    if let Some(r) = rec.image_feature_ref {
        check_ref("image_feature_ref", r)?;
    }
    let mut pids = HashSet::new();
    for p in &rec.proposals {
        let field = |f: &str| format!("proposals[{}].{f}", p.id);
        if !pids.insert(p.id.as_str()) {
            return Err(Error::schema(&rec.id, field("id"), "duplicate proposal id"));
        }
        if !p.bbox.fits_in(rec.width, rec.height) {
            return Err(Error::schema(
                &rec.id,
                field("box"),
                format!(
                    "box {:?} exceeds image bounds {}x{}",
                    <[u32; 4]>::from(p.bbox),
                    rec.width,
                    rec.height
                ),
            ));
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::schema(
                &rec.id,
                field("confidence"),
                format!("{} is outside [0, 1]", p.confidence),
            ));
        }
        check_ref(&field("feature_ref"), p.feature_ref)?;
        check_ref(&field("enlarged_feature_ref"), p.enlarged_feature_ref)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::blob::write_feature_blob;

    fn write_blob(dir: &Path, count: usize, dim: usize) {
        let rows: Vec<Vec<f32>> = (0..count).map(|i| vec![i as f32; dim]).collect();
        let store = FeatureStore::from_rows(dim, &rows).unwrap();
        write_feature_blob(&store, &dir.join("f.srf")).unwrap();
    }

    fn manifest_json(box3: &str) -> String {
        format!(
            r#"{{
  "feature_dim": 4,
  "feature_blob": "f.srf",
  "images": [{{
    "id": "a", "width": 20, "height": 10,
    "image_feature_ref": 0,
    "proposals": [
      {{"id": "p0", "box": [0, 0, 5, 5], "confidence": 0.9, "feature_ref": 1, "enlarged_feature_ref": 2}},
      {{"id": "p1", "box": [5, 0, 5, 5], "confidence": 0.5, "feature_ref": 3, "enlarged_feature_ref": 4}},
      {{"id": "p2", "box": {box3}, "confidence": 0.1, "feature_ref": 5, "enlarged_feature_ref": 6}}
    ]
  }}]
}}"#
        )
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"images": []}"#).unwrap();
        let ds = load_manifest(&path).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.feature_dim, DEFAULT_FEATURE_DIM);
    }

    #[test]
    fn one_image_three_proposals() {
        let dir = tempfile::tempdir().unwrap();
        write_blob(dir.path(), 7, 4);
        let path = dir.path().join("m.json");
        fs::write(&path, manifest_json("[10, 5, 10, 5]")).unwrap();
        let ds = load_manifest(&path).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records[0].proposals.len(), 3);
        assert_eq!(ds.records[0].proposals[2].bbox, BBox::new(10, 5, 10, 5));
        let store = ds.load_features().unwrap();
        assert_eq!(store.get(6).unwrap(), &[6.0; 4]);
    }

    #[test]
    fn box_out_of_bounds_names_field() {
        let dir = tempfile::tempdir().unwrap();
        write_blob(dir.path(), 7, 4);
        let path = dir.path().join("m.json");
        fs::write(&path, manifest_json("[15, 5, 10, 5]")).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        let msg = err.to_string();
        assert!(msg.contains("`a`") && msg.contains("proposals[p2].box"), "{msg}");
    }

    #[test]
    fn dangling_reference() {
        let dir = tempfile::tempdir().unwrap();
        write_blob(dir.path(), 6, 4);
        let path = dir.path().join("m.json");
        fs::write(&path, manifest_json("[10, 5, 10, 5]")).unwrap();
        let msg = load_manifest(&path).unwrap_err().to_string();
        assert!(msg.contains("dangling feature reference 6"), "{msg}");
    }

    #[test]
    fn blob_dim_must_match_declaration() {
        let dir = tempfile::tempdir().unwrap();
        write_blob(dir.path(), 7, 3);
        let path = dir.path().join("m.json");
        fs::write(&path, manifest_json("[10, 5, 10, 5]")).unwrap();
        assert!(matches!(
            load_manifest(&path).unwrap_err(),
            Error::DimMismatch { expected: 4, actual: 3, .. }
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_manifest(Path::new("/definitely/not/here.json")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
