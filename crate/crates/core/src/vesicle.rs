//! Vesicle detection: per-slice normalized matched filtering, greedy
//! non-maximum suppression, and a neighbour-count rule that keeps only
//! vesicles occurring in clusters (isolated responses are usually noise).

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic::{write_atomic, write_bytes_atomic};
use crate::error::{Error, Result};
use crate::volume::{Resolution, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vesicle {
    /// Voxel coordinates `(x, y, z)`.
    pub position: [usize; 3],
    /// Matched-filter response at the centroid, in `[-1, 1]`.
    pub score: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VesicleSet {
    vesicles: Vec<Vesicle>,
}

impl VesicleSet {
    pub fn new(vesicles: Vec<Vesicle>) -> Self {
        VesicleSet { vesicles }
    }

    pub fn len(&self) -> usize {
        self.vesicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vesicles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vesicle> {
        self.vesicles.iter()
    }

    pub fn as_slice(&self) -> &[Vesicle] {
        &self.vesicles
    }

    /// Shifts every centroid by `-origin`, keeping only those inside `dims`.
    pub fn localize(&self, origin: [usize; 3], dims: crate::volume::Dims) -> VesicleSet {
        let d = dims.as_array();
        VesicleSet::new(
            self.vesicles
                .iter()
                .filter(|v| (0..3).all(|a| v.position[a] >= origin[a] && v.position[a] - origin[a] < d[a]))
                .map(|v| Vesicle {
                    position: std::array::from_fn(|a| v.position[a] - origin[a]),
                    score: v.score,
                })
                .collect(),
        )
    }

    /// Writes `x y z score` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            for v in &self.vesicles {
                writeln!(w, "{} {} {} {}", v.position[0], v.position[1], v.position[2], v.score)?;
            }
            Ok(())
        })
    }

    /// Writes the records plus a `<path>.json` sidecar holding the parameters.
    pub fn save_with_params(&self, path: &Path, params: &DetectParams) -> Result<()> {
        self.save(path)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_vec_pretty(params).expect("params serialize");
        write_bytes_atomic(&sidecar, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vesicles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("{}:{}: expected `x y z score`, got {line:?}", path.display(), lineno + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            let coord = |s: &str| s.parse::<usize>().map_err(|_| bad());
            vesicles.push(Vesicle {
                position: [coord(parts[0])?, coord(parts[1])?, coord(parts[2])?],
                score: parts[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(VesicleSet { vesicles })
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Zero-mean, unit-norm square template with odd side.
#[derive(Debug, Clone, PartialEq)]
pub struct VesicleTemplate {
    side: usize,
    patch: Vec<f32>,
}

/// How to build a template.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateSource {
    /// Square patches (row-major, all the same odd side) cut from real data
    /// around known vesicles; the template is their pixelwise mean.
    Exemplars { side: usize, patches: Vec<Vec<f32>> },
    /// Dark ring of centre-line radius `radius` and width `thickness` on a
    /// bright field.
    Synthetic { radius: f32, thickness: f32, side: usize },
}

impl Default for TemplateSource {
    fn default() -> Self {
        TemplateSource::Synthetic {
            radius: 3.0,
            thickness: 2.0,
            side: 11,
        }
    }
}

impl VesicleTemplate {
    pub fn build(source: &TemplateSource) -> Result<Self> {
        let (side, raw) = match source {
            TemplateSource::Exemplars { side, patches } => {
                check_side(*side)?;
                if patches.is_empty() {
                    return Err(Error::param("no exemplar patches given"));
                }
                let n = side * side;
                if let Some(p) = patches.iter().find(|p| p.len() != n) {
                    return Err(Error::param(format!(
                        "exemplar patches must all be {side}x{side}; found one with {} pixels",
                        p.len()
                    )));
                }
                let mut mean = vec![0f64; n];
                for p in patches {
                    mean.iter_mut().zip(p).for_each(|(m, &v)| *m += f64::from(v));
                }
                mean.iter_mut().for_each(|m| *m /= patches.len() as f64);
                (*side, mean)
            }
            TemplateSource::Synthetic { radius, thickness, side } => {
                check_side(*side)?;
                if !(*radius > 0.0 && *thickness > 0.0) {
                    return Err(Error::param("ring radius and thickness must be > 0"));
                }
                let c = (side / 2) as f64;
                let raw = (0..side * side)
                    .map(|i| {
                        let (x, y) = ((i % side) as f64, (i / side) as f64);
                        let d = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
                        if (d - f64::from(*radius)).abs() <= f64::from(*thickness) / 2.0 {
                            -1.0
                        } else {
                            1.0
                        }
                    })
                    .collect();
                (*side, raw)
            }
        };
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let centred: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::param("template has no contrast"));
        }
        Ok(VesicleTemplate {
            side,
            patch: centred.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn patch(&self) -> &[f32] {
        &self.patch
    }
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side.is_multiple_of(2) {
        return Err(Error::param(format!("template side must be odd, got {side}")));
    }
    Ok(())
}

/// Cuts `side x side` patches centred on `centres` from `em`; centres too
/// close to the slice edge are skipped.
pub fn extract_exemplars(em: &Volume<u8>, centres: &[[usize; 3]], side: usize) -> Result<TemplateSource> {
    check_side(side)?;
    let d = em.dims();
    let h = side / 2;
    let patches = centres
        .iter()
        .filter(|c| c[0] >= h && c[1] >= h && c[0] + h < d.nx && c[1] + h < d.ny && c[2] < d.nz)
        .map(|c| {
            let mut p = Vec::with_capacity(side * side);
            for y in c[1] - h..=c[1] + h {
                for x in c[0] - h..=c[0] + h {
                    p.push(f32::from(em.get(x, y, c[2])));
                }
            }
            p
        })
        .collect();
    Ok(TemplateSource::Exemplars { side, patches })
}

/// Normalized cross-correlation of every slice with `template`. Pixels whose
/// window leaves the slice get -1 (all of them when the slice is smaller than
/// the template); flat windows get 0.
pub fn matched_response(em: &Volume<u8>, template: &VesicleTemplate) -> Result<Volume<f32>> {
    let d = em.dims();
    let s = template.side;
    if s > d.nx || s > d.ny {
        return em.with_data(vec![-1f32; d.len()]);
    }
    let (nx, ny) = (d.nx, d.ny);
    let h = s / 2;
    let n = (s * s) as f64;
    let t = &template.patch;
    let mut out = vec![-1f32; d.len()];
    out.par_chunks_mut(d.slice_len())
        .zip(em.data().par_chunks(d.slice_len()))
        .for_each(|(dst, src)| {
            let w = nx + 1;
            let mut sum = vec![0f64; w * (ny + 1)];
            let mut sq = vec![0f64; w * (ny + 1)];
            for y in 0..ny {
                let (mut a, mut b) = (0f64, 0f64);
                for x in 0..nx {
                    let v = f64::from(src[y * nx + x]);
                    a += v;
                    b += v * v;
                    sum[(y + 1) * w + x + 1] = sum[y * w + x + 1] + a;
                    sq[(y + 1) * w + x + 1] = sq[y * w + x + 1] + b;
                }
            }
            let f: Vec<f32> = src.iter().map(|&v| f32::from(v)).collect();
            for y in h..ny - h {
                for x in h..nx - h {
                    let (x0, y0, x1, y1) = (x - h, y - h, x + h + 1, y + h + 1);
                    let box_sum = |a: &[f64]| a[y1 * w + x1] - a[y0 * w + x1] - a[y1 * w + x0] + a[y0 * w + x0];
                    let s1 = box_sum(&sum);
                    let var = box_sum(&sq) - s1 * s1 / n;
                    if var <= 1e-9 {
                        dst[y * nx + x] = 0.0;
                        continue;
                    }
                    let mut corr = 0f32;
                    for j in 0..s {
                        let row = &f[(y0 + j) * nx + x0..(y0 + j) * nx + x0 + s];
                        let trow = &t[j * s..(j + 1) * s];
                        corr += row.iter().zip(trow).map(|(a, b)| a * b).sum::<f32>();
                    }
                    dst[y * nx + x] = (f64::from(corr) / var.sqrt()).clamp(-1.0, 1.0) as f32;
                }
            }
        });
    em.with_data(out)
}

/// Parameters for [`detect_vesicles`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub threshold: f32,
    pub nms_radius_px: f32,
    pub cluster_radius_nm: f32,
    pub cluster_min: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            threshold: 0.6,
            nms_radius_px: 5.0,
            cluster_radius_nm: 500.0,
            cluster_min: 4,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > -1.0 && self.threshold < 1.0) {
            return Err(Error::param(format!("threshold must be in (-1, 1), got {}", self.threshold)));
        }
        if self.cluster_min < 1 {
            return Err(Error::param("cluster_min must be >= 1"));
        }
        if !(self.nms_radius_px >= 0.0 && self.cluster_radius_nm >= 0.0) {
            return Err(Error::param("radii must be non-negative"));
        }
        Ok(())
    }
}

/// Local maxima at or above threshold, thinned by greedy in-plane NMS.
/// Ties in score are broken by `(z, y, x)`.
fn nms_candidates(response: &Volume<f32>, params: &DetectParams) -> Vec<Vesicle> {
    let d = response.dims();
    let (nx, ny) = (d.nx, d.ny);
    let mut cands: Vec<Vesicle> = (0..d.nz)
        .into_par_iter()
        .flat_map_iter(|z| {
            let s = response.slice(z);
            let mut found = Vec::new();
            for y in 0..ny {
                for x in 0..nx {
                    let v = s[y * nx + x];
                    if v < params.threshold {
                        continue;
                    }
                    let mut is_max = true;
                    'nb: for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                        for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                            if s[yy * nx + xx] > v {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                    if is_max {
                        found.push(Vesicle { position: [x, y, z], score: v });
                    }
                }
            }
            found
        })
        .collect();
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| [a.position[2], a.position[1], a.position[0]].cmp(&[b.position[2], b.position[1], b.position[0]]))
    });

    let r2 = f64::from(params.nms_radius_px).powi(2);
    let mut kept_by_slice: HashMap<usize, Vec<[usize; 2]>> = HashMap::new();
    let mut kept = Vec::new();
    for c in cands {
        let [x, y, z] = c.position;
        let slice = kept_by_slice.entry(z).or_default();
        let clash = slice.iter().any(|p| {
            let dx = p[0] as f64 - x as f64;
            let dy = p[1] as f64 - y as f64;
            dx * dx + dy * dy < r2
        });
        if !clash {
            slice.push([x, y]);
            kept.push(c);
        }
    }
    kept
}

/// Keeps candidates with at least `cluster_min - 1` others within
/// `cluster_radius_nm` (physical 3D distance).
fn cluster_filter(cands: Vec<Vesicle>, resolution: Resolution, params: &DetectParams) -> Vec<Vesicle> {
    if params.cluster_min <= 1 {
        return cands;
    }
    let radius = f64::from(params.cluster_radius_nm);
    let res = resolution.as_array();
    let phys = |v: &Vesicle| -> [f64; 3] { std::array::from_fn(|a| v.position[a] as f64 * res[a]) };
    let cell_size = radius.max(1e-9);
    let cell = |p: [f64; 3]| -> [i64; 3] { std::array::from_fn(|a| (p[a] / cell_size).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let points: Vec<[f64; 3]> = cands.iter().map(phys).collect();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(*p)).or_default().push(i);
    }
    let need = params.cluster_min - 1;
    let r2 = radius * radius;
    cands
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let p = points[*i];
            let c = cell(p);
            let mut count = 0;
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(members) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in members {
                                if j == *i {
                                    continue;
                                }
                                let q = points[j];
                                let d2: f64 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum();
                                if d2 <= r2 {
                                    count += 1;
                                    if count >= need {
                                        return true;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            false
        })
        .map(|(_, v)| *v)
        .collect()
}

/// Turns a matched-filter response into vesicle centroids, sorted by `(z, y, x)`.
pub fn detect_vesicles(response: &Volume<f32>, params: &DetectParams) -> Result<VesicleSet> {
    params.validate()?;
    let cands = nms_candidates(response, params);
    let mut kept = cluster_filter(cands, response.resolution(), params);
    kept.sort_by_key(|v| [v.position[2], v.position[1], v.position[0]]);
    Ok(VesicleSet::new(kept))
}

/// Matched filtering followed by detection.
pub fn find_vesicles(em: &Volume<u8>, template: &VesicleTemplate, params: &DetectParams) -> Result<VesicleSet> {
    params.validate()?;
    let response = matched_response(em, template)?;
    detect_vesicles(&response, params)
}
