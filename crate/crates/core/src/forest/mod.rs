//! Random-forest voxel classifier.
//!
//! Trees are trained on balanced samples where the negatives come only from
//! membrane voxels, and prediction is restricted to the same mask: voxels off
//! the membrane get probability exactly 0 without touching the trees.

mod io;
mod sample;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureStack, NUM_CHANNELS};
use crate::volume::{MembraneMask, Volume};

pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use sample::{sample_training, TrainingSet};
pub use train::{train, train_with_oob, OobReport};

/// Training knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried at each split.
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 128,
            mtry: 3,
            min_leaf: 5,
            max_depth: 40,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("n_trees must be >= 1"));
        }
        if self.mtry == 0 || self.mtry > NUM_CHANNELS {
            return Err(Error::param(format!("mtry must be in 1..={NUM_CHANNELS}")));
        }
        if self.min_leaf == 0 {
            return Err(Error::param("min_leaf must be >= 1"));
        }
        Ok(())
    }
}

/// Hyperparameters as recorded in a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    pub seed: u64,
}

/// Tree node. Split nodes send `x[feature] <= threshold` to the left child,
/// which always immediately follows the split in pre-order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split { feature: u8, threshold: f32, right: u32 },
    Leaf { fraction: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Positive-class fraction of the leaf `row` falls into.
    #[inline]
    pub fn predict(&self, row: &[f32; NUM_CHANNELS]) -> f32 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { fraction } => return fraction,
                Node::Split { feature, threshold, right } => {
                    i = if row[feature as usize] <= threshold { i + 1 } else { right as usize };
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Corruption("empty tree".into()));
        }
        // Every node must be reached exactly once from the root.
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return Err(Error::Corruption(format!("tree node {i} is out of range or shared")));
            }
            seen[i] = true;
            match self.nodes[i] {
                Node::Leaf { fraction } => {
                    if !(0.0..=1.0).contains(&fraction) {
                        return Err(Error::Corruption(format!("leaf fraction {fraction} outside [0, 1]")));
                    }
                }
                Node::Split { feature, threshold, right } => {
                    if feature as usize >= NUM_CHANNELS {
                        return Err(Error::Corruption(format!("split on feature {feature}")));
                    }
                    if threshold.is_nan() || (right as usize) <= i + 1 {
                        return Err(Error::Corruption(format!("malformed split at node {i}")));
                    }
                    stack.push(right as usize);
                    stack.push(i + 1);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Corruption("tree has unreachable nodes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    trees: Vec<Tree>,
    hyperparams: Hyperparams,
    feature_order_tag: u64,
}

impl RandomForestModel {
    pub fn from_parts(trees: Vec<Tree>, hyperparams: Hyperparams, feature_order_tag: u64) -> Result<Self> {
        if trees.len() != hyperparams.n_trees {
            return Err(Error::Corruption(format!(
                "model declares {} trees but holds {}",
                hyperparams.n_trees,
                trees.len()
            )));
        }
        for t in &trees {
            t.validate()?;
        }
        Ok(RandomForestModel {
            trees,
            hyperparams,
            feature_order_tag,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn feature_order_tag(&self) -> u64 {
        self.feature_order_tag
    }

    /// Mean leaf fraction across trees.
    pub fn predict_row(&self, row: &[f32; NUM_CHANNELS]) -> f32 {
        let sum: f64 = self.trees.iter().map(|t| f64::from(t.predict(row))).sum();
        (sum / self.trees.len() as f64) as f32
    }

    pub fn predict_rows(&self, rows: &[[f32; NUM_CHANNELS]]) -> Vec<f32> {
        rows.par_iter().map(|r| self.predict_row(r)).collect()
    }

    /// How often each feature is used as a split variable.
    pub fn split_counts(&self) -> [usize; NUM_CHANNELS] {
        let mut counts = [0; NUM_CHANNELS];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    counts[*feature as usize] += 1;
                }
            }
        }
        counts
    }

    fn check_compatible(&self) -> Result<()> {
        let expected = crate::features::feature_order_tag();
        if self.feature_order_tag != expected {
            return Err(Error::ModelCompatibility(format!(
                "model channel-order tag {:016x} != feature stack tag {expected:016x}",
                self.feature_order_tag
            )));
        }
        Ok(())
    }
}

const PREDICT_CHUNK: usize = 4096;

/// Per-voxel synapse probability. Voxels outside `mask` get exactly 0.
pub fn predict(model: &RandomForestModel, features: &FeatureStack, mask: &MembraneMask) -> Result<Volume<f32>> {
    model.check_compatible()?;
    let dims = features.dims();
    if mask.grid().dims() != dims {
        return Err(Error::param(format!("mask dims {} != feature dims {dims}", mask.grid().dims())));
    }
    let mut out = vec![0f32; dims.len()];
    out.par_chunks_mut(PREDICT_CHUNK).enumerate().for_each(|(c, chunk)| {
        let base = c * PREDICT_CHUNK;
        for (k, o) in chunk.iter_mut().enumerate() {
            let i = base + k;
            if mask.is_set(i) {
                *o = model.predict_row(&features.row(i));
            }
        }
    });
    Volume::from_vec(dims, features.resolution(), out)
}

/// Like [`predict`], but consumes the stack and writes probabilities over
/// its first channel, so no extra full-size buffer is allocated.
pub fn predict_in_place(model: &RandomForestModel, features: FeatureStack, mask: &MembraneMask) -> Result<Volume<f32>> {
    model.check_compatible()?;
    let dims = features.dims();
    if mask.grid().dims() != dims {
        return Err(Error::param(format!("mask dims {} != feature dims {dims}", mask.grid().dims())));
    }
    let mut channels = features.into_channels();
    let mut out = channels.remove(0);
    let rest: Vec<&[f32]> = channels.iter().map(|c| c.data()).collect();
    out.data_mut().par_chunks_mut(PREDICT_CHUNK).enumerate().for_each(|(c, chunk)| {
        let base = c * PREDICT_CHUNK;
        for (k, o) in chunk.iter_mut().enumerate() {
            let i = base + k;
            *o = if mask.is_set(i) {
                let row = std::array::from_fn(|ch| if ch == 0 { *o } else { rest[ch - 1][i] });
                model.predict_row(&row)
            } else {
                0.0
            };
        }
    });
    Ok(out)
}
