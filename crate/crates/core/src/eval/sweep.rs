use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{greedy_match, overlaps_of, MatchOptions, MatchPair, OperatingPoint};
use crate::error::{Error, Result};
use crate::fusion::{linked_objects, passes_3d, FusionParams, ObjectSet};
use crate::volume::Volume;

/// Cartesian grid of fusion parameters. Cells are enumerated with
/// threshold outermost and persistence innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub thresholds: Vec<f32>,
    pub min2d: Vec<usize>,
    pub max2d: Vec<usize>,
    pub min3d: Vec<usize>,
    pub persistence: Vec<usize>,
    pub connectivity2d: u8,
    pub connectivity3d: u8,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            thresholds: (0..=10).map(|i| (50 + 5 * i) as f32 / 100.0).collect(),
            min2d: vec![0, 50, 100, 200],
            max2d: vec![2500, 5000, 10_000],
            min3d: vec![100, 500, 1000, 2000],
            persistence: (1..=5).collect(),
            connectivity2d: 8,
            connectivity3d: 26,
        }
    }
}

impl SweepGrid {
    /// A grid holding exactly one cell.
    pub fn single(p: FusionParams) -> Self {
        SweepGrid {
            thresholds: vec![p.threshold],
            min2d: vec![p.min2d],
            max2d: vec![p.max2d],
            min3d: vec![p.min3d],
            persistence: vec![p.persistence],
            connectivity2d: p.connectivity2d,
            connectivity3d: p.connectivity3d,
        }
    }

    pub fn len(&self) -> usize {
        self.thresholds.len() * self.min2d.len() * self.max2d.len() * self.min3d.len() * self.persistence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> Vec<FusionParams> {
        let mut out = Vec::with_capacity(self.len());
        for &threshold in &self.thresholds {
            for &min2d in &self.min2d {
                for &max2d in &self.max2d {
                    for &min3d in &self.min3d {
                        for &persistence in &self.persistence {
                            out.push(FusionParams {
                                threshold,
                                min2d,
                                max2d,
                                min3d,
                                persistence,
                                connectivity2d: self.connectivity2d,
                                connectivity3d: self.connectivity3d,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::param("sweep grid has no cells"));
        }
        self.cells().iter().try_for_each(FusionParams::validate)
    }
}

/// Sweep output: `points` sorted by ascending recall, `grid` in cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<OperatingPoint>,
    pub grid: Vec<OperatingPoint>,
}

impl PrCurve {
    fn new(grid: Vec<OperatingPoint>) -> Self {
        let mut points = grid.clone();
        points.sort_by(|a, b| a.recall.total_cmp(&b.recall));
        PrCurve { points, grid }
    }

    /// Highest-F1 point; the earliest grid cell wins ties.
    pub fn best_f1(&self) -> &OperatingPoint {
        let mut best = &self.grid[0];
        for p in &self.grid[1..] {
            if p.f1() > best.f1() {
                best = p;
            }
        }
        best
    }
}

/// Scores every grid cell as `fuse` followed by `match_objects_with`.
///
/// Cells sharing a threshold and planar size band share their labelling
/// work, so the cost grows with those two axes only.
pub fn sweep(prob: &Volume<f32>, truth: &ObjectSet, grid: &SweepGrid, options: &MatchOptions) -> Result<PrCurve> {
    grid.validate()?;
    options.validate()?;
    if prob.dims() != truth.dims() {
        return Err(Error::param(format!(
            "probabilities cover {} but truth covers {}",
            prob.dims(),
            truth.dims()
        )));
    }
    let raster = truth.label_volume();
    let truth_sizes: Vec<usize> = truth.objects().iter().map(|o| o.voxel_count()).collect();
    let cells = grid.cells();
    let per_group = grid.min3d.len() * grid.persistence.len();
    let groups: Vec<Vec<OperatingPoint>> = cells
        .par_chunks(per_group)
        .map(|group| -> Result<Vec<OperatingPoint>> {
            let linked = linked_objects(prob, &group[0])?;
            let touched: Vec<Vec<(u32, usize)>> =
                linked.iter().map(|o| overlaps_of(&o.voxels, raster.data())).collect();
            Ok(group
                .iter()
                .map(|params| {
                    let mut candidates = Vec::new();
                    let mut n = 0u32;
                    for (o, hits) in linked.iter().zip(&touched) {
                        if passes_3d(o, params) {
                            n += 1;
                            candidates.extend(hits.iter().map(|&(t, k)| MatchPair { detection: n, truth: t, overlap: k }));
                        }
                    }
                    let m = greedy_match(n as usize, &truth_sizes, candidates, options);
                    OperatingPoint::from_counts(*params, m.tp(), m.fp(), m.fn_())
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(PrCurve::new(groups.into_iter().flatten().collect()))
}
