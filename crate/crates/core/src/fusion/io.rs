use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FusionParams, ObjectSet};
use crate::atomic::write_bytes_atomic;
use crate::error::{Error, Result};
use crate::volume::{load_volume_as, save_volume, BoundingBox, Dims, Resolution};

/// Per-object record in the JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub id: u32,
    pub centroid: [f64; 3],
    pub bbox: BoundingBox,
    pub voxel_count: usize,
    pub z_extent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectManifest {
    /// Label grid file name, relative to the manifest.
    pub labels: String,
    pub dims: Dims,
    pub resolution: Resolution,
    pub params: Option<FusionParams>,
    pub objects: Vec<ObjectSummary>,
}

/// Label grid written next to a manifest: `objects.json` pairs with
/// `objects.labels.vsv`.
pub fn label_path(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.labels.vsv"))
}

impl ObjectSet {
    pub fn manifest(&self, labels: String) -> ObjectManifest {
        ObjectManifest {
            labels,
            dims: self.dims,
            resolution: self.resolution,
            params: self.params,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectSummary {
                    id: o.id,
                    centroid: o.centroid,
                    bbox: o.bbox,
                    voxel_count: o.voxel_count(),
                    z_extent: o.z_extent,
                })
                .collect(),
        }
    }

    /// Writes the JSON manifest at `path` and the label grid beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let labels = label_path(path);
        let name = labels.file_name().expect("label path has a file name").to_string_lossy().into_owned();
        save_volume(&self.label_volume(), &labels)?;
        let json = serde_json::to_vec_pretty(&self.manifest(name)).expect("manifest serializes");
        write_bytes_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<ObjectSet> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: ObjectManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let labels_path = path.with_file_name(&manifest.labels);
        let labels = load_volume_as::<u32>(&labels_path)?;
        if labels.dims() != manifest.dims {
            return Err(Error::Corruption(format!(
                "{}: label grid dims {} differ from manifest {}",
                path.display(),
                labels.dims(),
                manifest.dims
            )));
        }
        let set = ObjectSet::from_labels(&labels, manifest.params);
        if set.manifest(manifest.labels.clone()) != manifest {
            return Err(Error::Corruption(format!(
                "{}: objects in the label grid disagree with the manifest",
                path.display()
            )));
        }
        Ok(set)
    }
}
