//! Padded-block execution for volumes too large to process whole.
//!
//! Each block is read with a margin, run through the full detect pipeline,
//! and keeps only the objects whose rounded centroid falls in its core.
//! Cores tile the volume, so every object is emitted by exactly one block.
//! Results are merged and relabelled canonically, which makes the output
//! independent of block order and worker count.

mod pipeline;

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic::write_bytes_atomic;
use crate::error::{Error, Result};
use crate::forest::{predict_in_place, RandomForestModel};
use crate::fusion::ObjectSet;
use crate::volume::{BoundingBox, Dims, MaskProvenance, MembraneMask, Resolution, Volume, VsvReader};

pub use pipeline::Pipeline;

pub const DEFAULT_PAD: [usize; 3] = [64, 64, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub index: usize,
    pub core: BoundingBox,
    pub padded: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub dims: Dims,
    pub block_size: [usize; 3],
    pub pad: [usize; 3],
    pub blocks: Vec<BlockSpec>,
}

/// Tiles `dims` with `block_size` cores (smaller at the far faces) and pads
/// each by `pad`, clipped to the volume.
pub fn decompose(dims: Dims, block_size: [usize; 3], pad: [usize; 3]) -> Result<BlockDecomposition> {
    dims.validate()?;
    if block_size.contains(&0) {
        return Err(Error::param(format!("block size {block_size:?} has a zero dimension")));
    }
    let d = dims.as_array();
    let starts = |a: usize| (0..d[a]).step_by(block_size[a]).collect::<Vec<_>>();
    let (xs, ys, zs) = (starts(0), starts(1), starts(2));
    let mut blocks = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let min = [x, y, z];
                let max = std::array::from_fn(|a| (min[a] + block_size[a]).min(d[a]) - 1);
                let core = BoundingBox { min, max };
                blocks.push(BlockSpec { index: blocks.len(), core, padded: core.expand(pad, dims) });
            }
        }
    }
    Ok(BlockDecomposition { dims, block_size, pad, blocks })
}

/// Source of EM sub-volumes.
pub trait VolumeProvider: Sync {
    fn dims(&self) -> Dims;
    fn resolution(&self) -> Resolution;
    fn read(&self, bbox: &BoundingBox) -> Result<Volume<u8>>;
}

impl VolumeProvider for Volume<u8> {
    fn dims(&self) -> Dims {
        Volume::dims(self)
    }

    fn resolution(&self) -> Resolution {
        Volume::resolution(self)
    }

    fn read(&self, bbox: &BoundingBox) -> Result<Volume<u8>> {
        self.extract(bbox)
    }
}

/// Reads boxes from a u8 VSV1 file on demand; the checksum is verified once
/// when opening.
pub struct VsvProvider {
    reader: Mutex<VsvReader>,
    dims: Dims,
    resolution: Resolution,
}

impl VsvProvider {
    pub fn open(path: &Path) -> Result<Self> {
        let reader = VsvReader::open(path)?;
        Ok(VsvProvider { dims: reader.dims(), resolution: reader.resolution(), reader: Mutex::new(reader) })
    }
}

impl VolumeProvider for VsvProvider {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn resolution(&self) -> Resolution {
        self.resolution
    }

    fn read(&self, bbox: &BoundingBox) -> Result<Volume<u8>> {
        self.reader.lock().unwrap_or_else(|e| e.into_inner()).read_box(bbox)
    }
}

/// How each block obtains its membrane mask.
pub enum MaskPolicy<'a> {
    /// Read the mask from a second provider aligned with the EM.
    Provided(&'a dyn VolumeProvider),
    /// Intensity band with absolute cutoffs fixed for the whole volume.
    Bandpass { low: f64, high: f64 },
    /// Every voxel is eligible.
    All,
}

impl MaskPolicy<'_> {
    fn mask_for(&self, em: &Volume<u8>, bbox: &BoundingBox) -> Result<MembraneMask> {
        Ok(match self {
            MaskPolicy::Provided(p) => MembraneMask::new(p.read(bbox)?, MaskProvenance::ExternalProbability),
            MaskPolicy::Bandpass { low, high } => MembraneMask::new(
                em.map(|v| u8::from(*low <= f64::from(v) && f64::from(v) <= *high)),
                MaskProvenance::IntensityBandpass,
            ),
            MaskPolicy::All => MembraneMask::new(em.map(|_| 1u8), MaskProvenance::Synthetic),
        })
    }

    fn check(&self, dims: Dims) -> Result<()> {
        if let MaskPolicy::Provided(p) = self {
            if p.dims() != dims {
                return Err(Error::param(format!("mask dims {} differ from EM dims {dims}", p.dims())));
            }
        }
        Ok(())
    }
}

/// Objects owned by one block, in padded-box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub spec: BlockSpec,
    pub objects: ObjectSet,
}

/// Whether `centroid`, rounded half up, lies in `core`.
pub fn owns(core: &BoundingBox, centroid: [f64; 3]) -> bool {
    let p = centroid.map(|c| (c + 0.5).floor().max(0.0) as usize);
    core.contains(p)
}

/// Runs the pipeline on one padded block and keeps the objects it owns.
pub fn process_block(
    source: &dyn VolumeProvider,
    mask_policy: &MaskPolicy<'_>,
    model: &RandomForestModel,
    pipeline: &Pipeline,
    spec: &BlockSpec,
) -> Result<BlockOutput> {
    let wrap = |e| Error::Block { index: spec.index, source: Box::new(e) };
    // Peak memory is the feature stack plus EM and mask; probabilities
    // overwrite the first feature channel.
    let em = source.read(&spec.padded).map_err(wrap)?;
    let features = pipeline.features(&em).map_err(wrap)?;
    let mask = mask_policy.mask_for(&em, &spec.padded).map_err(wrap)?;
    drop(em);
    let prob = predict_in_place(model, features, &mask).map_err(wrap)?;
    drop(mask);
    let objects = crate::fusion::fuse(&prob, &pipeline.fusion).map_err(wrap)?;
    drop(prob);
    let origin = spec.padded.min;
    let objects = objects.retain(|o| owns(&spec.core, std::array::from_fn(|a| o.centroid[a] + origin[a] as f64)));
    Ok(BlockOutput { spec: *spec, objects })
}

/// Translates block outputs to global coordinates and relabels canonically.
pub fn merge_blocks(dims: Dims, resolution: Resolution, pipeline: &Pipeline, outputs: &[BlockOutput]) -> ObjectSet {
    let mut sets = Vec::new();
    for out in outputs {
        let local = out.spec.padded.dims();
        let origin = out.spec.padded.min;
        for o in out.objects.objects() {
            sets.push(
                o.voxels
                    .iter()
                    .map(|&v| {
                        let [x, y, z] = local.coords(v);
                        dims.index(x + origin[0], y + origin[1], z + origin[2])
                    })
                    .collect(),
            );
        }
    }
    ObjectSet::from_voxel_sets(sets, dims, resolution, Some(pipeline.fusion))
}

fn check_inputs(source: &dyn VolumeProvider, mask_policy: &MaskPolicy<'_>, decomp: &BlockDecomposition) -> Result<()> {
    if source.dims() != decomp.dims {
        return Err(Error::param(format!(
            "decomposition covers {} but the volume is {}",
            decomp.dims,
            source.dims()
        )));
    }
    mask_policy.check(source.dims())
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::param("workers must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::param(format!("cannot start worker pool: {e}")))
}

/// Processes every block on `workers` threads (all cores when `None`) and
/// merges the owned objects.
pub fn run_blockwise(
    source: &dyn VolumeProvider,
    model: &RandomForestModel,
    mask_policy: &MaskPolicy<'_>,
    pipeline: &Pipeline,
    decomp: &BlockDecomposition,
    workers: Option<usize>,
) -> Result<ObjectSet> {
    check_inputs(source, mask_policy, decomp)?;
    let outputs: Vec<BlockOutput> = pool(workers)?.install(|| {
        decomp
            .blocks
            .par_iter()
            .map(|spec| process_block(source, mask_policy, model, pipeline, spec))
            .collect::<Result<_>>()
    })?;
    Ok(merge_blocks(source.dims(), source.resolution(), pipeline, &outputs))
}

/// Per-block file names inside a run directory.
pub fn block_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("block_{index:05}.json")), dir.join(format!("block_{index:05}.done.json")))
}

pub const MERGED_FILE: &str = "merged.json";

/// Reuses a finished block if its marker matches `spec` and its files load
/// cleanly, checksums included.
fn load_finished(dir: &Path, spec: &BlockSpec) -> Option<BlockOutput> {
    let (objects_path, done_path) = block_paths(dir, spec.index);
    let marker: BlockSpec = serde_json::from_slice(&std::fs::read(done_path).ok()?).ok()?;
    if marker != *spec {
        return None;
    }
    let objects = ObjectSet::load(&objects_path).ok()?;
    (objects.dims() == spec.padded.dims()).then_some(BlockOutput { spec: *spec, objects })
}

/// Like [`run_blockwise`], persisting each block to `dir` as it finishes
/// and writing the merged set to `dir/merged.json`. With `resume`, blocks
/// already completed by an earlier run are loaded instead of recomputed.
/// Returns the merged set and the number of blocks reused.
#[allow(clippy::too_many_arguments)]
pub fn run_blockwise_to_dir(
    source: &dyn VolumeProvider,
    model: &RandomForestModel,
    mask_policy: &MaskPolicy<'_>,
    pipeline: &Pipeline,
    decomp: &BlockDecomposition,
    workers: Option<usize>,
    dir: &Path,
    resume: bool,
) -> Result<(ObjectSet, usize)> {
    check_inputs(source, mask_policy, decomp)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results: Vec<(BlockOutput, bool)> = pool(workers)?.install(|| {
        decomp
            .blocks
            .par_iter()
            .map(|spec| {
                if resume {
                    if let Some(out) = load_finished(dir, spec) {
                        return Ok((out, true));
                    }
                }
                let out = process_block(source, mask_policy, model, pipeline, spec)?;
                let (objects_path, done_path) = block_paths(dir, spec.index);
                out.objects.save(&objects_path)?;
                let marker = serde_json::to_vec_pretty(spec).expect("block spec serializes");
                write_bytes_atomic(&done_path, &marker)?;
                Ok((out, false))
            })
            .collect::<Result<_>>()
    })?;
    let reused = results.iter().filter(|r| r.1).count();
    let outputs: Vec<BlockOutput> = results.into_iter().map(|r| r.0).collect();
    let merged = merge_blocks(source.dims(), source.resolution(), pipeline, &outputs);
    merged.save(&dir.join(MERGED_FILE))?;
    Ok((merged, reused))
}
