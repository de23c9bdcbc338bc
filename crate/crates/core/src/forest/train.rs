//! CART trees on bootstrap resamples, Gini impurity, random feature subsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::NUM_CHANNELS;

use super::{ForestParams, Hyperparams, Node, RandomForestModel, Tree, TrainingSet};

/// Out-of-bag estimate gathered during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobReport {
    pub accuracy: f64,
    /// Rows that were out of bag for at least one tree.
    pub evaluated: usize,
}

struct Builder<'a> {
    columns: &'a [Vec<f32>],
    labels: &'a [bool],
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    pairs: Vec<(f32, bool)>,
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f32,
    gain: f64,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn leaf(&mut self, pos: usize, n: usize) {
        self.nodes.push(Node::Leaf {
            fraction: (pos as f64 / n as f64) as f32,
        });
    }

    fn best_split(&mut self, idx: &[u32], pos: usize) -> Option<Split> {
        let n = idx.len();
        let nf = n as f64;
        let parent = gini(pos as f64, nf);
        let min_leaf = self.params.min_leaf.max(1);

        let mut feats: [usize; NUM_CHANNELS] = std::array::from_fn(|i| i);
        let m = self.params.mtry.clamp(1, NUM_CHANNELS);
        for i in 0..m {
            let j = self.rng.random_range(i..NUM_CHANNELS);
            feats.swap(i, j);
        }
        let mut chosen = feats[..m].to_vec();
        chosen.sort_unstable();

        let mut best: Option<Split> = None;
        for f in chosen {
            let col = &self.columns[f];
            self.pairs.clear();
            self.pairs.extend(idx.iter().map(|&i| (col[i as usize], self.labels[i as usize])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                if self.pairs[k].1 {
                    left_pos += 1;
                }
                let (a, b) = (self.pairs[k].0, self.pairs[k + 1].0);
                if a == b {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right_pos = pos - left_pos;
                let child = (nl as f64 / nf) * gini(left_pos as f64, nl as f64)
                    + (nr as f64 / nf) * gini(right_pos as f64, nr as f64);
                let gain = parent - child;
                if best.is_none_or(|s| gain > s.gain) {
                    let mut threshold = ((f64::from(a) + f64::from(b)) / 2.0) as f32;
                    if !(threshold >= a && threshold < b) {
                        threshold = a;
                    }
                    best = Some(Split { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [u32], depth: usize) {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.labels[i as usize]).count();
        if pos == 0 || pos == n || depth >= self.params.max_depth || n < 2 * self.params.min_leaf.max(1) {
            return self.leaf(pos, n);
        }
        let Some(split) = self.best_split(idx, pos) else {
            return self.leaf(pos, n);
        };
        let col = &self.columns[split.feature];
        let mut lo = 0;
        for k in 0..n {
            if col[idx[k] as usize] <= split.threshold {
                idx.swap(lo, k);
                lo += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature as u8,
            threshold: split.threshold,
            right: 0,
        });
        let (left, right) = idx.split_at_mut(lo);
        self.build(left, depth + 1);
        let right_index = self.nodes.len() as u32;
        if let Node::Split { right, .. } = &mut self.nodes[me] {
            *right = right_index;
        }
        self.build(right, depth + 1);
    }
}

/// Per-tree random stream: same master seed, distinct ChaCha stream per tree,
/// so results do not depend on scheduling.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    rng
}

fn grow_tree(columns: &[Vec<f32>], labels: &[bool], params: &ForestParams, seed: u64, t: usize) -> (Tree, Vec<bool>) {
    let n = labels.len();
    let mut rng = tree_rng(seed, t);
    let mut in_bag = vec![false; n];
    let mut idx: Vec<u32> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            in_bag[i] = true;
            i as u32
        })
        .collect();
    let mut b = Builder {
        columns,
        labels,
        params,
        rng,
        nodes: Vec::new(),
        pairs: Vec::with_capacity(n),
    };
    b.build(&mut idx, 0);
    (Tree { nodes: b.nodes }, in_bag)
}

/// Trains a forest and reports its out-of-bag accuracy.
pub fn train_with_oob(ts: &TrainingSet, params: &ForestParams, seed: u64) -> Result<(RandomForestModel, OobReport)> {
    params.validate()?;
    let n = ts.len();
    if n < 2 {
        return Err(Error::param("training set needs at least 2 rows"));
    }
    let pos = ts.positives();
    if pos == 0 || pos == n {
        return Err(Error::param("training set contains a single class"));
    }
    let columns: Vec<Vec<f32>> = (0..NUM_CHANNELS).map(|f| ts.rows.iter().map(|r| r[f]).collect()).collect();
    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(&columns, &ts.labels, params, seed, t))
        .collect();

    let mut sums = vec![0f64; n];
    let mut counts = vec![0u32; n];
    for (tree, in_bag) in &grown {
        for i in 0..n {
            if !in_bag[i] {
                sums[i] += f64::from(tree.predict(&ts.rows[i]));
                counts[i] += 1;
            }
        }
    }
    let (mut correct, mut evaluated) = (0usize, 0usize);
    for i in 0..n {
        if counts[i] > 0 {
            evaluated += 1;
            if (sums[i] / f64::from(counts[i]) >= 0.5) == ts.labels[i] {
                correct += 1;
            }
        }
    }
    let oob = OobReport {
        accuracy: if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 },
        evaluated,
    };
    let model = RandomForestModel::from_parts(
        grown.into_iter().map(|(t, _)| t).collect(),
        Hyperparams {
            n_trees: params.n_trees,
            mtry: params.mtry,
            min_leaf: params.min_leaf,
            max_depth: params.max_depth,
            seed,
        },
        crate::features::feature_order_tag(),
    )?;
    Ok((model, oob))
}

pub fn train(ts: &TrainingSet, params: &ForestParams, seed: u64) -> Result<RandomForestModel> {
    train_with_oob(ts, params, seed).map(|(m, _)| m)
}
