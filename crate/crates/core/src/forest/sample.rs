use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureStack, NUM_CHANNELS};
use crate::volume::{MembraneMask, Volume};

/// Balanced training rows drawn from a labelled volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<[f32; NUM_CHANNELS]>,
    pub labels: Vec<bool>,
    /// Linear voxel index each row was taken from.
    pub voxels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(rows: Vec<[f32; NUM_CHANNELS]>, labels: Vec<bool>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::param("rows and labels differ in length"));
        }
        let voxels = (0..rows.len()).collect();
        Ok(TrainingSet { rows, labels, voxels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Draws `n` rows: half from synapse voxels (label > 0), half from membrane
/// voxels that are not synapse. Sampling is uniform without replacement and
/// deterministic in `seed`. Odd `n` gives the extra row to the positives.
pub fn sample_training(
    features: &FeatureStack,
    labels: &Volume<u32>,
    mask: &MembraneMask,
    n: usize,
    seed: u64,
) -> Result<TrainingSet> {
    let dims = features.dims();
    if labels.dims() != dims || mask.grid().dims() != dims {
        return Err(Error::param(format!(
            "features {dims}, labels {} and mask {} must share dims",
            labels.dims(),
            mask.grid().dims()
        )));
    }
    if n < 2 {
        return Err(Error::param("need at least 2 samples"));
    }
    let n_pos = n.div_ceil(2);
    let n_neg = n / 2;
    let positives: Vec<usize> = (0..dims.len()).filter(|&i| labels.data()[i] > 0).collect();
    let negatives: Vec<usize> = (0..dims.len()).filter(|&i| labels.data()[i] == 0 && mask.is_set(i)).collect();
    if positives.len() < n_pos {
        return Err(Error::Shortfall {
            class: "synapse",
            needed: n_pos,
            available: positives.len(),
        });
    }
    if negatives.len() < n_neg {
        return Err(Error::Shortfall {
            class: "membrane non-synapse",
            needed: n_neg,
            available: negatives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pop: &[usize], k: usize| {
        let mut chosen: Vec<usize> = index::sample(&mut rng, pop.len(), k).into_iter().map(|i| pop[i]).collect();
        chosen.sort_unstable();
        chosen
    };
    let pos = pick(&positives, n_pos);
    let neg = pick(&negatives, n_neg);

    let mut ts = TrainingSet {
        rows: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        voxels: Vec::with_capacity(n),
    };
    for (set, label) in [(pos, true), (neg, false)] {
        for i in set {
            ts.rows.push(features.row(i));
            ts.labels.push(label);
            ts.voxels.push(i);
        }
    }
    Ok(ts)
}
