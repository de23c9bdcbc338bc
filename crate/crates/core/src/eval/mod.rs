//! Object-level scoring: one-to-one matching of detections to truth, and
//! operating-point sweeps over fusion parameters.

mod sweep;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_bytes_atomic;
use crate::error::{Error, Result};
use crate::fusion::{FusionParams, ObjectSet};

pub use sweep::{sweep, PrCurve, SweepGrid};

pub const CSV_HEADER: &str = "threshold,min2d,max2d,min3d,persistence,tp,fp,fn,precision,recall";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Smallest accepted overlap as a fraction of the truth object's size.
    /// Zero accepts any single shared voxel.
    pub min_overlap_fraction: f64,
}

impl MatchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_overlap_fraction) {
            return Err(Error::param(format!(
                "min overlap fraction {} outside [0, 1]",
                self.min_overlap_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub detection: u32,
    pub truth: u32,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_detections: Vec<u32>,
    pub unmatched_truths: Vec<u32>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_detections.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_truths.len()
    }
}

/// Every detection/truth pair sharing at least one voxel.
pub fn overlaps(detected: &ObjectSet, truth: &ObjectSet) -> Result<Vec<MatchPair>> {
    if detected.dims() != truth.dims() {
        return Err(Error::param(format!(
            "detections cover {} but truth covers {}",
            detected.dims(),
            truth.dims()
        )));
    }
    let raster = truth.label_volume();
    let mut out = Vec::new();
    for o in detected.objects() {
        out.extend(overlaps_of(&o.voxels, raster.data()).into_iter().map(|(t, n)| MatchPair {
            detection: o.id,
            truth: t,
            overlap: n,
        }));
    }
    Ok(out)
}

/// Truth ids touched by `voxels` and the shared voxel counts, by truth id.
pub(crate) fn overlaps_of(voxels: &[usize], truth_labels: &[u32]) -> Vec<(u32, usize)> {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &v in voxels {
        let t = truth_labels[v];
        if t != 0 {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut v: Vec<(u32, usize)> = counts.into_iter().collect();
    v.sort_unstable();
    v
}

/// Greedy one-to-one assignment over candidate pairs: largest overlap
/// first, ties to the smaller truth id, then the smaller detection id.
pub fn greedy_match(
    n_detections: usize,
    truth_sizes: &[usize],
    mut candidates: Vec<MatchPair>,
    options: &MatchOptions,
) -> MatchResult {
    candidates.retain(|p| {
        p.overlap >= 1 && p.overlap as f64 >= options.min_overlap_fraction * truth_sizes[p.truth as usize - 1] as f64
    });
    candidates.sort_unstable_by(|a, b| {
        b.overlap.cmp(&a.overlap).then(a.truth.cmp(&b.truth)).then(a.detection.cmp(&b.detection))
    });
    let mut det_used = vec![false; n_detections];
    let mut truth_used = vec![false; truth_sizes.len()];
    let mut pairs = Vec::new();
    for p in candidates {
        let (d, t) = (p.detection as usize - 1, p.truth as usize - 1);
        if !det_used[d] && !truth_used[t] {
            det_used[d] = true;
            truth_used[t] = true;
            pairs.push(p);
        }
    }
    let unused = |used: Vec<bool>| (1..=used.len() as u32).filter(|&i| !used[i as usize - 1]).collect();
    MatchResult {
        pairs,
        unmatched_detections: unused(det_used),
        unmatched_truths: unused(truth_used),
    }
}

pub fn match_objects(detected: &ObjectSet, truth: &ObjectSet) -> Result<MatchResult> {
    match_objects_with(detected, truth, &MatchOptions::default())
}

pub fn match_objects_with(detected: &ObjectSet, truth: &ObjectSet, options: &MatchOptions) -> Result<MatchResult> {
    options.validate()?;
    let candidates = overlaps(detected, truth)?;
    let sizes: Vec<usize> = truth.objects().iter().map(|o| o.voxel_count()).collect();
    Ok(greedy_match(detected.len(), &sizes, candidates, options))
}

/// Counts and rates for one parameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub params: FusionParams,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl OperatingPoint {
    /// Precision is 1 when nothing was detected; recall is 1 when there is
    /// nothing to find.
    pub fn from_counts(params: FusionParams, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        OperatingPoint { params, tp, fp, fn_, precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fn_) }
    }

    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / s
        }
    }

    pub fn csv_row(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            p.threshold, p.min2d, p.max2d, p.min3d, p.persistence, self.tp, self.fp, self.fn_, self.precision, self.recall
        )
    }
}

pub fn precision_recall(m: &MatchResult, params: FusionParams) -> OperatingPoint {
    OperatingPoint::from_counts(params, m.tp(), m.fp(), m.fn_())
}

pub fn to_csv(points: &[OperatingPoint]) -> String {
    let mut s = String::with_capacity(64 * (points.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for p in points {
        writeln!(s, "{}", p.csv_row()).expect("writing to a string");
    }
    s
}

pub fn write_csv(points: &[OperatingPoint], path: &Path) -> Result<()> {
    write_bytes_atomic(path, to_csv(points).as_bytes())
}
