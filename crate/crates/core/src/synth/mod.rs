//! Deterministic EM-like phantoms with known synapses, membranes and
//! vesicles.
//!
//! A phantom is a bright field cut into cells by dark curved membranes.
//! Synapses are dark fuzzy ellipsoids sitting on membranes, each with a
//! nearby cluster of ring-shaped vesicles. Extra vesicle clusters away from
//! any synapse act as decoys. Gaussian noise is added last.

mod membrane;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ObjectSet;
use crate::vesicle::{Vesicle, VesicleSet};
use crate::volume::{load_volume_as, save_volume, Dims, MaskProvenance, MembraneMask, Resolution, Volume};
use membrane::MembraneField;

pub const BACKGROUND_LEVEL: u8 = 200;
pub const MEMBRANE_LEVEL: u8 = 90;
pub const VESICLE_LEVEL: u8 = 90;
/// Synapse voxels take `SYNAPSE_CORE + SYNAPSE_RISE * r^2`, where `r` is the
/// normalized ellipsoid radius; the volume mean is 60.
pub const SYNAPSE_CORE: f64 = 45.0;
pub const SYNAPSE_RISE: f64 = 25.0;
/// Vesicle rings match the default detection template: centre-line radius
/// 3, width 2, so the outer radius is 4 pixels.
pub const VESICLE_RING_RADIUS: f64 = 3.0;
pub const VESICLE_RING_THICKNESS: f64 = 2.0;

const CLUSTER_RADIUS_PX: f64 = 35.0;
const VESICLE_SPACING_PX: f64 = 13.0;
/// Half-size of the square around a vesicle centre that must be free of
/// other dark structure.
const VESICLE_CLEARANCE_PX: usize = 6;
const SYNAPSE_MARGIN_PX: usize = 8;
const DECOY_SYNAPSE_DISTANCE_PX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub resolution: Resolution,
    /// Synapses per µm³.
    pub synapse_density: f64,
    /// Decoy vesicle clusters (not attached to a synapse) per µm³.
    pub vesicle_cluster_rate: f64,
    /// Standard deviation of the additive noise, in intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: Dims::new(128, 128, 40),
            resolution: Resolution::default(),
            synapse_density: 0.75,
            vesicle_cluster_rate: 1.0,
            noise_sigma: 10.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.resolution.validate()?;
        if self.dims.nx < 64 || self.dims.ny < 64 || self.dims.nz < 16 {
            return Err(Error::param(format!("phantom dims {} below the 64x64x16 minimum", self.dims)));
        }
        if !(0.1..=2.0).contains(&self.synapse_density) {
            return Err(Error::param(format!(
                "synapse density {} outside [0.1, 2.0] per cubic micron",
                self.synapse_density
            )));
        }
        if !(self.vesicle_cluster_rate >= 0.0 && self.vesicle_cluster_rate.is_finite()) {
            return Err(Error::param("vesicle cluster rate must be a finite non-negative number"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise sigma must be a finite non-negative number"));
        }
        Ok(())
    }

    pub fn volume_um3(&self) -> f64 {
        self.dims.len() as f64 * self.resolution.voxel_um3()
    }

    pub fn synapse_count(&self) -> usize {
        (self.synapse_density * self.volume_um3()).round() as usize
    }

    pub fn decoy_count(&self) -> usize {
        (self.vesicle_cluster_rate * self.volume_um3()).round() as usize
    }
}

/// Noise-free intensity summaries of what was planted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomStats {
    pub background_mean: f64,
    pub membrane_mean: f64,
    pub synapse_mean: f64,
    pub synapse_max: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub em: Volume<u8>,
    pub membrane: MembraneMask,
    pub truth: ObjectSet,
    pub vesicle_truth: VesicleSet,
    pub stats: PhantomStats,
}

/// Planted synapse: its voxels and the data its vesicle cluster needs.
struct Synapse {
    voxels: Vec<usize>,
    centre: [f64; 3],
    z_range: (usize, usize),
    guard: ([usize; 3], [usize; 3]),
}

struct Builder {
    dims: Dims,
    membrane: Vec<u8>,
    /// Nonzero wherever something dark has been drawn.
    dark: Vec<u8>,
    synapse_level: Vec<u8>,
    synapses: Vec<Synapse>,
    vesicles: Vec<[usize; 3]>,
    ring: Vec<(isize, isize)>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

pub fn ring_offsets(radius: f64, thickness: f64) -> Vec<(isize, isize)> {
    let reach = (radius + thickness / 2.0).ceil() as isize;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if (d - radius).abs() <= thickness / 2.0 {
                out.push((dx, dy));
            }
        }
    }
    out
}

impl Builder {
    fn new(dims: Dims, field: &MembraneField) -> Self {
        let mut membrane = vec![0u8; dims.len()];
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    if field.is_membrane(x as f64, y as f64, z as f64) {
                        membrane[dims.index(x, y, z)] = 1;
                    }
                }
            }
        }
        Builder {
            dims,
            dark: membrane.clone(),
            membrane,
            synapse_level: Vec::new(),
            synapses: Vec::new(),
            vesicles: Vec::new(),
            ring: ring_offsets(VESICLE_RING_RADIUS, VESICLE_RING_THICKNESS),
        }
    }

    fn try_synapse(&self, field: &MembraneField, rng: &mut ChaCha8Rng) -> Option<(Synapse, Vec<(usize, u8)>)> {
        let d = self.dims;
        let span = rng.random_range(2..=5usize);
        let z0 = rng.random_range(0..=d.nz - span);
        let a = rng.random_range(8.0..20.0f64);
        let b = rng.random_range(6.0..9.0f64);
        let reach = a.ceil() as usize + 1;
        let edge = reach + 2;
        let cx = rng.random_range(edge..d.nx - edge) as f64;
        let cy = rng.random_range(edge..d.ny - edge) as f64;
        let zc = z0 as f64 + (span as f64 - 1.0) / 2.0;
        let bd = field.boundary(cx, cy, zc);
        if bd.distance >= 1.0 {
            return None;
        }
        let g = reach + SYNAPSE_MARGIN_PX;
        let guard_min = [(cx as usize).saturating_sub(g), (cy as usize).saturating_sub(g), z0.saturating_sub(1)];
        let guard_max = [cx as usize + g, cy as usize + g, z0 + span];
        let clash = self.synapses.iter().any(|s| (0..3).all(|k| guard_min[k] <= s.guard.1[k] && s.guard.0[k] <= guard_max[k]));
        if clash {
            return None;
        }
        let [nxv, nyv] = bd.normal;
        let (tx, ty) = (-nyv, nxv);
        let half = span as f64 / 2.0;
        let mut voxels = Vec::new();
        for k in 0..span {
            let dz = (k as f64 + 0.5 - half) / half;
            let z = z0 + k;
            for y in cy as usize - reach..=cy as usize + reach {
                for x in cx as usize - reach..=cx as usize + reach {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    let u = dx * tx + dy * ty;
                    let v = dx * nxv + dy * nyv;
                    let r2 = (u / a).powi(2) + (v / b).powi(2) + dz * dz;
                    if r2 <= 1.0 {
                        let level = (SYNAPSE_CORE + SYNAPSE_RISE * r2).round() as u8;
                        voxels.push((d.index(x, y, z), level));
                    }
                }
            }
        }
        voxels.sort_unstable();
        let syn = Synapse {
            voxels: voxels.iter().map(|&(i, _)| i).collect(),
            centre: [cx, cy, zc],
            z_range: (z0, z0 + span - 1),
            guard: (guard_min, guard_max),
        };
        Some((syn, voxels))
    }

    fn vesicle_fits(&self, x: usize, y: usize, z: usize) -> bool {
        let d = self.dims;
        let c = VESICLE_CLEARANCE_PX;
        if x < c || y < c || x + c >= d.nx || y + c >= d.ny {
            return false;
        }
        for yy in y - c..=y + c {
            let row = d.index(0, yy, z);
            if self.dark[row + x - c..=row + x + c].iter().any(|&v| v != 0) {
                return false;
            }
        }
        let s2 = VESICLE_SPACING_PX * VESICLE_SPACING_PX;
        !self.vesicles.iter().any(|v| {
            v[2] == z && ((v[0] as f64 - x as f64).powi(2) + (v[1] as f64 - y as f64).powi(2)) < s2
        })
    }

    fn draw_vesicle(&mut self, p: [usize; 3]) {
        for &(dx, dy) in &self.ring {
            let i = self.dims.index((p[0] as isize + dx) as usize, (p[1] as isize + dy) as usize, p[2]);
            self.dark[i] = 2;
        }
        self.vesicles.push(p);
    }

    fn erase_vesicles(&mut self, keep: usize) {
        while self.vesicles.len() > keep {
            let p = self.vesicles.pop().expect("nonempty");
            for &(dx, dy) in &self.ring {
                let i = self.dims.index((p[0] as isize + dx) as usize, (p[1] as isize + dy) as usize, p[2]);
                self.dark[i] = self.membrane[i];
            }
        }
    }

    /// Scatters `count` vesicles near `centre`; returns how many fit.
    fn cluster(&mut self, centre: [f64; 2], z_range: (usize, usize), count: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut placed = 0;
        for _ in 0..400 {
            if placed == count {
                break;
            }
            let r = CLUSTER_RADIUS_PX * rng.random::<f64>().sqrt();
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let x = (centre[0] + r * t.cos()).round();
            let y = (centre[1] + r * t.sin()).round();
            let z = rng.random_range(z_range.0..=z_range.1);
            if x < 0.0 || y < 0.0 {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            if self.vesicle_fits(x, y, z) {
                self.draw_vesicle([x, y, z]);
                placed += 1;
            }
        }
        placed
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let field = MembraneField::new(dims, &mut stream(spec.seed, 1));
    let mut b = Builder::new(dims, &field);
    b.synapse_level = vec![0u8; dims.len()];

    let mut rng = stream(spec.seed, 2);
    let wanted = spec.synapse_count();
    let mut attempts = 0usize;
    let budget = 20_000 + 5_000 * wanted;
    while b.synapses.len() < wanted {
        attempts += 1;
        if attempts > budget {
            return Err(Error::param(format!(
                "placed only {} of {wanted} synapses in {}; lower the density or enlarge the volume",
                b.synapses.len(),
                dims
            )));
        }
        let Some((syn, voxels)) = b.try_synapse(&field, &mut rng) else { continue };
        for &(i, level) in &voxels {
            b.dark[i] = 3;
            b.synapse_level[i] = level;
        }
        let keep = b.vesicles.len();
        let lo = syn.z_range.0.saturating_sub(1);
        let hi = (syn.z_range.1 + 1).min(dims.nz - 1);
        let n = rng.random_range(6..=10);
        if b.cluster([syn.centre[0], syn.centre[1]], (lo, hi), n, &mut rng) < 6 {
            b.erase_vesicles(keep);
            for &(i, _) in &voxels {
                b.dark[i] = b.membrane[i];
                b.synapse_level[i] = 0;
            }
            continue;
        }
        b.synapses.push(syn);
    }

    let mut rng = stream(spec.seed, 3);
    for _ in 0..spec.decoy_count() {
        for _ in 0..50 {
            let x = rng.random_range(0.0..dims.nx as f64);
            let y = rng.random_range(0.0..dims.ny as f64);
            let z = rng.random_range(0..dims.nz);
            let far = b.synapses.iter().all(|s| (s.centre[0] - x).hypot(s.centre[1] - y) >= DECOY_SYNAPSE_DISTANCE_PX);
            if !far || field.boundary(x, y, z as f64).distance < 12.0 {
                continue;
            }
            let keep = b.vesicles.len();
            let range = (z.saturating_sub(2), (z + 2).min(dims.nz - 1));
            let n = rng.random_range(6..=10);
            if b.cluster([x, y], range, n, &mut rng) >= 6 {
                break;
            }
            b.erase_vesicles(keep);
        }
    }

    let mut clean = vec![BACKGROUND_LEVEL; dims.len()];
    let (mut bg_sum, mut bg_n, mut mem_sum, mut mem_n) = (0f64, 0usize, 0f64, 0usize);
    for (i, c) in clean.iter_mut().enumerate() {
        *c = match b.dark[i] {
            0 => BACKGROUND_LEVEL,
            1 => MEMBRANE_LEVEL,
            2 => VESICLE_LEVEL,
            _ => b.synapse_level[i],
        };
        match b.dark[i] {
            0 => {
                bg_sum += f64::from(*c);
                bg_n += 1;
            }
            1 => {
                mem_sum += f64::from(*c);
                mem_n += 1;
            }
            _ => {}
        }
    }
    let syn_voxels: Vec<usize> = b.synapses.iter().flat_map(|s| s.voxels.iter().copied()).collect();
    let stats = PhantomStats {
        background_mean: bg_sum / bg_n.max(1) as f64,
        membrane_mean: mem_sum / mem_n.max(1) as f64,
        synapse_mean: syn_voxels.iter().map(|&i| f64::from(clean[i])).sum::<f64>() / syn_voxels.len().max(1) as f64,
        synapse_max: syn_voxels.iter().map(|&i| clean[i]).max().unwrap_or(0),
    };

    let mut mask = b.membrane;
    for &i in &syn_voxels {
        mask[i] = 1;
    }
    let em = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;
        let mut rng = stream(spec.seed, 4);
        clean
            .iter()
            .map(|&v| (f64::from(v) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        clean
    };

    let res = spec.resolution;
    let truth = ObjectSet::from_voxel_sets(b.synapses.into_iter().map(|s| s.voxels).collect(), dims, res, None);
    let mut vesicles = b.vesicles;
    vesicles.sort_unstable_by_key(|p| [p[2], p[1], p[0]]);
    Ok(Phantom {
        em: Volume::from_vec(dims, res, em)?,
        membrane: MembraneMask::new(Volume::from_vec(dims, res, mask)?, MaskProvenance::Synthetic),
        truth,
        vesicle_truth: VesicleSet::new(vesicles.into_iter().map(|position| Vesicle { position, score: 1.0 }).collect()),
        stats,
    })
}

/// File names used by [`Phantom::save`].
pub const EM_FILE: &str = "em.vsv";
pub const MEMBRANE_FILE: &str = "membrane.vsv";
pub const TRUTH_FILE: &str = "truth.json";
pub const VESICLES_FILE: &str = "vesicles.txt";

impl Phantom {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_volume(&self.em, &dir.join(EM_FILE))?;
        save_volume(self.membrane.grid(), &dir.join(MEMBRANE_FILE))?;
        self.truth.save(&dir.join(TRUTH_FILE))?;
        self.vesicle_truth.save(&dir.join(VESICLES_FILE))
    }

    /// Reads a saved phantom. Statistics are not stored and come back zeroed.
    pub fn load(dir: &Path) -> Result<Phantom> {
        let em = load_volume_as::<u8>(&dir.join(EM_FILE))?;
        let membrane = MembraneMask::new(load_volume_as::<u8>(&dir.join(MEMBRANE_FILE))?, MaskProvenance::Synthetic);
        let truth = ObjectSet::load(&dir.join(TRUTH_FILE))?;
        let vesicle_truth = VesicleSet::load(&dir.join(VESICLES_FILE))?;
        if membrane.grid().dims() != em.dims() || truth.dims() != em.dims() {
            return Err(Error::Format(format!("{}: phantom parts have mismatched dims", dir.display())));
        }
        Ok(Phantom {
            em,
            membrane,
            truth,
            vesicle_truth,
            stats: PhantomStats { background_mean: 0.0, membrane_mean: 0.0, synapse_mean: 0.0, synapse_max: 0 },
        })
    }
}
