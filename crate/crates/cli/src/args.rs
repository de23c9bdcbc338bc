use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vesicle_core::fusion::FusionParams;
use vesicle_core::vesicle::{DetectParams, TemplateSource};
use vesicle_core::Resolution;

/// A flag combination that parses but cannot be honoured.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "vesicle", version, about = "Synapse detection for anisotropic EM volumes")]
pub struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true, env = "VESICLE_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom with ground truth.
    Synth(SynthArgs),
    /// Detect vesicle centroids in an EM volume.
    Vesicles(VesiclesArgs),
    /// Train a random-forest synapse classifier.
    Train(TrainArgs),
    /// Compute a per-voxel synapse probability volume.
    Detect(DetectArgs),
    /// Turn a probability volume into 3D objects.
    Fuse(FuseArgs),
    /// Score detected objects against ground truth.
    Eval(EvalArgs),
    /// Evaluate a grid of fusion parameters into a precision-recall table.
    Sweep(SweepArgs),
    /// Run detection over padded blocks of a large volume.
    BlocksRun(BlocksRunArgs),
    /// Render one slice with truth and detection overlays as PNG.
    Render(RenderArgs),
    /// Convert a directory of grayscale PNG slices into a volume.
    ImportPngStack(ImportPngStackArgs),
}

fn triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("cannot parse {p:?}"))?);
    }
    Ok([out.remove(0), out.remove(0), out.remove(0)])
}

pub fn parse_usize3(s: &str) -> Result<[usize; 3], String> {
    triple(s)
}

pub fn parse_f64x3(s: &str) -> Result<[f64; 3], String> {
    triple(s)
}

pub fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|_| format!("cannot parse {a:?}"))?,
            b.parse().map_err(|_| format!("cannot parse {b:?}"))?,
        ]),
        _ => Err(format!("expected two comma-separated values, got {s:?}")),
    }
}

pub fn resolution(r: [f64; 3]) -> Resolution {
    Resolution::new(r[0], r[1], r[2])
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid size as nx,ny,nz.
    #[arg(long, value_parser = parse_usize3, default_value = "128,128,40")]
    pub dims: [usize; 3],
    /// Voxel size in nm as x,y,z.
    #[arg(long, value_parser = parse_f64x3, default_value = "6,6,30")]
    pub resolution: [f64; 3],
    /// Synapses per cubic micrometre.
    #[arg(long, default_value_t = 0.75)]
    pub density: f64,
    /// Decoy vesicle clusters per cubic micrometre.
    #[arg(long, default_value_t = 1.0)]
    pub cluster_rate: f64,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 10.0)]
    pub noise: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Vesicle template and detection knobs.
#[derive(Debug, Clone, Args, Serialize)]
pub struct VesicleOpts {
    /// Ring radius of the synthetic template, in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub template_radius: f32,
    /// Ring thickness of the synthetic template, in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub template_thickness: f32,
    /// Template side length in pixels (odd).
    #[arg(long, default_value_t = 11)]
    pub template_side: usize,
    /// Minimum normalized cross-correlation for a vesicle candidate.
    #[arg(long, default_value_t = 0.6)]
    pub vesicle_threshold: f32,
    /// Non-maximum suppression radius in pixels.
    #[arg(long, default_value_t = 5.0)]
    pub nms_radius: f32,
    /// Neighbourhood radius for the cluster rule, in nm.
    #[arg(long, default_value_t = 500.0)]
    pub cluster_radius_nm: f32,
    /// Candidates needed within the cluster radius, the candidate included.
    #[arg(long, default_value_t = 4)]
    pub cluster_min: usize,
}

impl VesicleOpts {
    pub fn template(&self) -> TemplateSource {
        TemplateSource::Synthetic {
            radius: self.template_radius,
            thickness: self.template_thickness,
            side: self.template_side,
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            threshold: self.vesicle_threshold,
            nms_radius_px: self.nms_radius,
            cluster_radius_nm: self.cluster_radius_nm,
            cluster_min: self.cluster_min,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VesiclesArgs {
    /// EM volume (u8 VSV1).
    #[arg(long)]
    pub em: PathBuf,
    #[command(flatten)]
    pub vesicles: VesicleOpts,
    /// Output text file of `x y z score` lines.
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the membrane mask comes from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskOpts {
    /// Membrane mask (u8, nonzero = membrane) or probability map (f32).
    #[arg(long)]
    pub membrane: Option<PathBuf>,
    /// Cutoff applied to an f32 membrane probability map.
    #[arg(long, default_value_t = 0.5)]
    pub membrane_threshold: f32,
    /// Absolute intensity band low,high used as a membrane surrogate.
    #[arg(long, value_parser = parse_pair, conflicts_with = "membrane")]
    pub mask_cutoffs: Option<[f64; 2]>,
}

#[derive(Debug, Args, Serialize)]
pub struct ForestOpts {
    #[arg(long, default_value_t = 128)]
    pub trees: usize,
    /// Features tried at each split.
    #[arg(long, default_value_t = 3)]
    pub mtry: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 40)]
    pub max_depth: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub em: PathBuf,
    /// Synapse labels: an object manifest (.json) or a u32 label volume.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub mask: MaskOpts,
    /// Quantile band lo,hi of intensities under the labels, used as the
    /// membrane surrogate when neither --membrane nor --mask-cutoffs is set.
    #[arg(long, value_parser = parse_pair, default_value = "0.02,0.80")]
    pub band: [f64; 2],
    /// Precomputed vesicles; detected from the EM when omitted.
    #[arg(long)]
    pub vesicles: Option<PathBuf>,
    #[command(flatten)]
    pub vesicle_opts: VesicleOpts,
    /// Balanced training samples, half positive.
    #[arg(long, default_value_t = 200_000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub forest: ForestOpts,
    /// Output model file (VRF1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub em: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub mask: MaskOpts,
    #[arg(long)]
    pub vesicles: Option<PathBuf>,
    #[command(flatten)]
    pub vesicle_opts: VesicleOpts,
    /// Output probability volume (f32 VSV1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FusionOpts {
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Smallest per-slice region kept, in pixels.
    #[arg(long, default_value_t = 0)]
    pub min2d: usize,
    /// Largest per-slice region kept, in pixels.
    #[arg(long, default_value_t = 10_000)]
    pub max2d: usize,
    /// Smallest 3D object kept, in voxels.
    #[arg(long, default_value_t = 100)]
    pub min3d: usize,
    /// Fewest slices an object must span.
    #[arg(long, default_value_t = 1)]
    pub persistence: usize,
    /// In-plane connectivity, 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub conn2d: u8,
    /// Volumetric connectivity, 6, 18 or 26.
    #[arg(long, default_value_t = 26)]
    pub conn3d: u8,
    /// Use the fixed baseline rule (threshold only, 1000-voxel minimum)
    /// instead of the size and persistence filters.
    #[arg(long)]
    pub baseline: bool,
}

impl FusionOpts {
    pub fn params(&self) -> FusionParams {
        if self.baseline {
            return FusionParams::becker(self.threshold);
        }
        FusionParams {
            threshold: self.threshold,
            min2d: self.min2d,
            max2d: self.max2d,
            min3d: self.min3d,
            persistence: self.persistence,
            connectivity2d: self.conn2d,
            connectivity3d: self.conn3d,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FuseArgs {
    /// Probability volume (f32 VSV1).
    #[arg(long)]
    pub prob: PathBuf,
    #[command(flatten)]
    pub fusion: FusionOpts,
    /// Drop objects whose centroid lies within this many voxels (x,y,z) of
    /// the volume faces.
    #[arg(long, value_parser = parse_usize3)]
    pub discard_border: Option<[usize; 3]>,
    /// Output object manifest (.json); labels go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub detected: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Smallest overlap, as a fraction of the truth object, that counts.
    #[arg(long, default_value_t = 0.0)]
    pub min_overlap: f64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub prob: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated thresholds; defaults to 0.50 to 1.00 in steps of 0.05.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f32>>,
    #[arg(long, value_delimiter = ',')]
    pub min2d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub max2d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub min3d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub persistence: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.0)]
    pub min_overlap: f64,
    /// Output CSV, one row per grid cell.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BlocksRunArgs {
    /// EM volume (u8 VSV1), read block by block.
    #[arg(long)]
    pub em: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Membrane mask (u8 VSV1), read block by block.
    #[arg(long)]
    pub membrane: Option<PathBuf>,
    /// Absolute intensity band low,high used as a membrane surrogate.
    #[arg(long, value_parser = parse_pair, conflicts_with = "membrane")]
    pub mask_cutoffs: Option<[f64; 2]>,
    /// Core block size x,y,z in voxels.
    #[arg(long, value_parser = parse_usize3, default_value = "512,512,50")]
    pub block_size: [usize; 3],
    /// Context added around every block, x,y,z in voxels.
    #[arg(long, value_parser = parse_usize3, default_value = "64,64,5")]
    pub pad: [usize; 3],
    #[command(flatten)]
    pub vesicle_opts: VesicleOpts,
    #[command(flatten)]
    pub fusion: FusionOpts,
    /// Reuse blocks finished by an earlier run into the same directory.
    #[arg(long)]
    pub resume: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub em: PathBuf,
    #[arg(long)]
    pub detected: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Slice index.
    #[arg(long)]
    pub z: usize,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportPngStackArgs {
    /// Directory of grayscale PNG slices, ordered by file name.
    #[arg(long)]
    pub dir: PathBuf,
    /// Voxel size in nm as x,y,z.
    #[arg(long, value_parser = parse_f64x3, default_value = "6,6,30")]
    pub resolution: [f64; 3],
    /// Output volume (u8 VSV1).
    #[arg(long)]
    pub out: PathBuf,
}
