use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{quantile_u8, Volume};

/// Where a membrane mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskProvenance {
    ExternalProbability,
    IntensityBandpass,
    Synthetic,
}

/// Binary membrane mask; 1 marks voxels eligible for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneMask {
    grid: Volume<u8>,
    provenance: MaskProvenance,
}

impl MembraneMask {
    /// Wraps a 0/1 grid; any nonzero value is normalized to 1.
    pub fn new(grid: Volume<u8>, provenance: MaskProvenance) -> Self {
        let grid = if grid.data().iter().all(|&v| v <= 1) {
            grid
        } else {
            grid.map(|v| u8::from(v != 0))
        };
        MembraneMask { grid, provenance }
    }

    /// Thresholds an external membrane-probability map.
    pub fn from_probability(prob: &Volume<f32>, threshold: f32) -> Self {
        MembraneMask::new(prob.map(|p| u8::from(p >= threshold)), MaskProvenance::ExternalProbability)
    }

    pub fn grid(&self) -> &Volume<u8> {
        &self.grid
    }

    pub fn into_grid(self) -> Volume<u8> {
        self.grid
    }

    pub fn provenance(&self) -> MaskProvenance {
        self.provenance
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.grid.data()[index] != 0
    }

    pub fn count(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v != 0).count()
    }
}

fn histogram(values: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in values {
        h[v as usize] += 1;
    }
    h
}

/// Absolute intensity cutoffs at quantile positions `lo` and `hi` of the
/// reference distribution.
pub fn bandpass_cutoffs(reference: &[u8], lo: f32, hi: f32) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
        return Err(Error::param(format!("band [{lo}, {hi}] must lie in [0, 1]")));
    }
    if lo >= hi {
        return Err(Error::param(format!("band lower bound {lo} must be below upper bound {hi}")));
    }
    let h = histogram(reference);
    Ok((quantile_u8(&h, f64::from(lo))?, quantile_u8(&h, f64::from(hi))?))
}

/// Membrane surrogate for volumes without membrane probabilities: marks voxels
/// whose intensity lies within the `[lo, hi]` quantile band of `reference`
/// (typically the intensities under training synapse labels), or of the grid
/// itself when no reference is given.
pub fn intensity_bandpass_mask(grid: &Volume<u8>, lo: f32, hi: f32, reference: Option<&[u8]>) -> Result<MembraneMask> {
    let (lo_v, hi_v) = bandpass_cutoffs(reference.unwrap_or(grid.data()), lo, hi)?;
    Ok(MembraneMask::new(
        grid.map(|v| u8::from(lo_v <= f64::from(v) && f64::from(v) <= hi_v)),
        MaskProvenance::IntensityBandpass,
    ))
}
