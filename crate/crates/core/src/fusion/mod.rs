//! Turns a probability grid into discrete 3D objects.
//!
//! The pipeline thresholds, labels each slice in 2D and drops components
//! outside the in-plane size band, links survivors in 3D, then applies slice
//! persistence and a 3D size floor. Object ids are assigned canonically:
//! descending voxel count, then bounding-box minimum in (z, y, x) order.

mod cc;
mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BoundingBox, Dims, Resolution, Volume};

pub use cc::{group_by_label, label_components, Connectivity};
pub use io::{label_path, ObjectManifest, ObjectSummary};

/// Minimum voxel count below which the baseline fusion rejects an object.
pub const BECKER_MIN_VOXELS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub threshold: f32,
    pub min2d: usize,
    pub max2d: usize,
    pub min3d: usize,
    pub persistence: usize,
    pub connectivity2d: u8,
    pub connectivity3d: u8,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            threshold: 0.5,
            min2d: 0,
            max2d: 10_000,
            min3d: 100,
            persistence: 1,
            connectivity2d: 8,
            connectivity3d: 26,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::param(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.min2d > self.max2d {
            return Err(Error::param(format!("min2d {} exceeds max2d {}", self.min2d, self.max2d)));
        }
        if self.persistence == 0 {
            return Err(Error::param("persistence must be at least 1"));
        }
        Connectivity::planar(self.connectivity2d)?;
        Connectivity::volumetric(self.connectivity3d)?;
        Ok(())
    }

    /// Parameters equivalent to the baseline rule: 3D labelling only, then a
    /// fixed size floor.
    pub fn becker(threshold: f32) -> Self {
        FusionParams {
            threshold,
            min2d: 0,
            max2d: usize::MAX,
            min3d: BECKER_MIN_VOXELS,
            persistence: 1,
            connectivity2d: 8,
            connectivity3d: 26,
        }
    }
}

/// One fused object. `voxels` holds ascending linear indices into the
/// source grid.
#[derive(Clone, PartialEq)]
pub struct DetectionObject {
    pub id: u32,
    pub voxels: Vec<usize>,
    pub centroid: [f64; 3],
    pub bbox: BoundingBox,
    pub z_extent: usize,
}

impl std::fmt::Debug for DetectionObject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DetectionObject")
            .field("id", &self.id)
            .field("voxel_count", &self.voxels.len())
            .field("centroid", &self.centroid)
            .field("bbox", &self.bbox)
            .field("z_extent", &self.z_extent)
            .finish()
    }
}

impl DetectionObject {
    /// Builds an object from sorted, nonempty voxel indices.
    pub fn from_voxels(id: u32, voxels: Vec<usize>, dims: Dims) -> Self {
        debug_assert!(!voxels.is_empty());
        debug_assert!(voxels.windows(2).all(|w| w[0] < w[1]));
        let mut sum = [0f64; 3];
        let mut min = [usize::MAX; 3];
        let mut max = [0usize; 3];
        for &v in &voxels {
            let c = dims.coords(v);
            for a in 0..3 {
                sum[a] += c[a] as f64;
                min[a] = min[a].min(c[a]);
                max[a] = max[a].max(c[a]);
            }
        }
        let n = voxels.len() as f64;
        DetectionObject {
            id,
            centroid: sum.map(|s| s / n),
            bbox: BoundingBox { min, max },
            z_extent: max[2] - min[2] + 1,
            voxels,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    fn order_key(&self) -> (std::cmp::Reverse<usize>, [usize; 3], usize) {
        let m = self.bbox.min;
        (std::cmp::Reverse(self.voxels.len()), [m[2], m[1], m[0]], self.voxels[0])
    }
}

/// A set of disjoint objects over one grid, with ids dense from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSet {
    objects: Vec<DetectionObject>,
    dims: Dims,
    resolution: Resolution,
    params: Option<FusionParams>,
}

impl ObjectSet {
    pub fn empty(dims: Dims, resolution: Resolution, params: Option<FusionParams>) -> Self {
        ObjectSet { objects: Vec::new(), dims, resolution, params }
    }

    /// Builds a canonically ordered set from voxel lists, which must be
    /// sorted, nonempty and pairwise disjoint.
    pub fn from_voxel_sets(
        sets: Vec<Vec<usize>>,
        dims: Dims,
        resolution: Resolution,
        params: Option<FusionParams>,
    ) -> Self {
        let objects = sets.into_iter().map(|v| DetectionObject::from_voxels(0, v, dims)).collect();
        Self::from_objects(objects, dims, resolution, params)
    }

    fn from_objects(
        mut objects: Vec<DetectionObject>,
        dims: Dims,
        resolution: Resolution,
        params: Option<FusionParams>,
    ) -> Self {
        objects.sort_by_cached_key(DetectionObject::order_key);
        for (i, o) in objects.iter_mut().enumerate() {
            o.id = i as u32 + 1;
        }
        ObjectSet { objects, dims, resolution, params }
    }

    /// Reads objects from a label grid; each nonzero label becomes one object.
    pub fn from_labels(labels: &Volume<u32>, params: Option<FusionParams>) -> Self {
        let max = labels.data().iter().copied().max().unwrap_or(0);
        let sets = group_by_label(labels.data(), max).into_iter().filter(|s| !s.is_empty()).collect();
        Self::from_voxel_sets(sets, labels.dims(), labels.resolution(), params)
    }

    pub fn objects(&self) -> &[DetectionObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn params(&self) -> Option<&FusionParams> {
        self.params.as_ref()
    }

    pub fn get(&self, id: u32) -> Option<&DetectionObject> {
        id.checked_sub(1).and_then(|i| self.objects.get(i as usize))
    }

    /// Keeps objects accepted by `keep`, re-densifying ids.
    pub fn retain(self, mut keep: impl FnMut(&DetectionObject) -> bool) -> Self {
        let objects = self.objects.into_iter().filter(|o| keep(o)).collect();
        Self::from_objects(objects, self.dims, self.resolution, self.params)
    }

    /// Rasterizes the set; voxel value is the object id, `0` elsewhere.
    pub fn label_volume(&self) -> Volume<u32> {
        let mut data = vec![0u32; self.dims.len()];
        for o in &self.objects {
            for &v in &o.voxels {
                data[v] = o.id;
            }
        }
        Volume::from_vec(self.dims, self.resolution, data).expect("dims match")
    }

    pub fn total_voxels(&self) -> usize {
        self.objects.iter().map(DetectionObject::voxel_count).sum()
    }
}

/// Objects after the 2D filter and 3D linking, before persistence and the
/// 3D size floor, in canonical order.
pub(crate) fn linked_objects(prob: &Volume<f32>, params: &FusionParams) -> Result<Vec<DetectionObject>> {
    params.validate()?;
    let dims = prob.dims();
    let t = params.threshold;
    let mut binary: Vec<u8> = prob.data().iter().map(|&p| u8::from(p >= t)).collect();
    let slice_len = dims.slice_len();
    if params.min2d > 1 || params.max2d < slice_len {
        let conn2 = Connectivity::planar(params.connectivity2d)?;
        let plane = Dims::new(dims.nx, dims.ny, 1);
        binary.par_chunks_mut(slice_len).for_each(|slice| {
            if slice.iter().all(|&b| b == 0) {
                return;
            }
            let (labels, count) = label_components(slice, plane, conn2);
            let mut sizes = vec![0usize; count as usize + 1];
            for &l in &labels {
                sizes[l as usize] += 1;
            }
            for (b, &l) in slice.iter_mut().zip(&labels) {
                let n = sizes[l as usize];
                if l != 0 && (n < params.min2d || n > params.max2d) {
                    *b = 0;
                }
            }
        });
    }
    let conn3 = Connectivity::volumetric(params.connectivity3d)?;
    let (labels, count) = label_components(&binary, dims, conn3);
    drop(binary);
    let mut objects: Vec<DetectionObject> = group_by_label(&labels, count)
        .into_iter()
        .map(|v| DetectionObject::from_voxels(0, v, dims))
        .collect();
    objects.sort_by_cached_key(DetectionObject::order_key);
    Ok(objects)
}

pub(crate) fn passes_3d(o: &DetectionObject, params: &FusionParams) -> bool {
    o.z_extent >= params.persistence && o.voxel_count() >= params.min3d
}

/// Thresholds, labels and filters `prob` into objects.
pub fn fuse(prob: &Volume<f32>, params: &FusionParams) -> Result<ObjectSet> {
    let objects = linked_objects(prob, params)?
        .into_iter()
        .filter(|o| passes_3d(o, params))
        .collect();
    Ok(ObjectSet::from_objects(objects, prob.dims(), prob.resolution(), Some(*params)))
}

/// Baseline fusion: 26-connected components of `prob >= threshold`, keeping
/// those with at least [`BECKER_MIN_VOXELS`] voxels.
pub fn becker_fuse(prob: &Volume<f32>, threshold: f32) -> Result<ObjectSet> {
    fuse(prob, &FusionParams::becker(threshold))
}

/// Drops objects whose centroid lies closer than `pad` to any face.
pub fn discard_border(objects: ObjectSet, pad: [usize; 3]) -> Result<ObjectSet> {
    let d = objects.dims.as_array();
    if (0..3).any(|a| pad[a] > 0 && 2 * pad[a] >= d[a]) {
        return Err(Error::param(format!("pad {pad:?} must be under half of dims {}", objects.dims)));
    }
    Ok(objects.retain(|o| {
        (0..3).all(|a| o.centroid[a] >= pad[a] as f64 && o.centroid[a] <= (d[a] - 1 - pad[a]) as f64)
    }))
}
