//! VRF1 model files.
//!
//! ```text
//! "VRF1"  u32 version
//! u32 n_trees  u32 mtry  u32 min_leaf  u32 max_depth  u64 seed
//! u64 feature_order_tag
//! u32 tree_count
//! per tree: u32 node_count, then nodes in pre-order:
//!     0x00 f32 fraction                       (leaf)
//!     0x01 u8 feature  f32 threshold  u32 right  (split)
//! u64 FNV-1a of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::atomic::write_bytes_atomic;
use crate::error::{Error, Result};
use crate::hash::fnv1a;

use super::{Hyperparams, Node, RandomForestModel, Tree};

pub const MAGIC: &[u8; 4] = b"VRF1";
pub const FORMAT_VERSION: u32 = 1;

const LEAF: u8 = 0;
const SPLIT: u8 = 1;

pub fn encode_model(model: &RandomForestModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let h = model.hyperparams();
    for v in [h.n_trees, h.mtry, h.min_leaf, h.max_depth] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&h.seed.to_le_bytes());
    out.extend_from_slice(&model.feature_order_tag().to_le_bytes());
    out.extend_from_slice(&(model.trees().len() as u32).to_le_bytes());
    for t in model.trees() {
        out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
        for n in &t.nodes {
            match *n {
                Node::Leaf { fraction } => {
                    out.push(LEAF);
                    out.extend_from_slice(&fraction.to_le_bytes());
                }
                Node::Split { feature, threshold, right } => {
                    out.push(SPLIT);
                    out.push(feature);
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
            }
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corruption(format!("model truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<RandomForestModel> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing VRF1 magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version(format!("model format version {version}, this build reads {FORMAT_VERSION}")));
    }
    if bytes.len() < 16 {
        return Err(Error::Corruption("model truncated".into()));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut c = Cursor { bytes: body, pos: 8 };
    let n_trees = c.u32()? as usize;
    let mtry = c.u32()? as usize;
    let min_leaf = c.u32()? as usize;
    let max_depth = c.u32()? as usize;
    let seed = c.u64()?;
    let tag = c.u64()?;
    let count = c.u32()? as usize;
    let mut trees = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = c.u32()? as usize;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            nodes.push(match c.u8()? {
                LEAF => Node::Leaf { fraction: c.f32()? },
                SPLIT => Node::Split {
                    feature: c.u8()?,
                    threshold: c.f32()?,
                    right: c.u32()?,
                },
                other => return Err(Error::Corruption(format!("unknown node tag {other}"))),
            });
        }
        trees.push(Tree { nodes });
    }
    if c.pos != body.len() {
        return Err(Error::Corruption(format!("{} unexpected bytes after trees", body.len() - c.pos)));
    }
    RandomForestModel::from_parts(
        trees,
        Hyperparams {
            n_trees,
            mtry,
            min_leaf,
            max_depth,
            seed,
        },
        tag,
    )
}

pub fn save_model(model: &RandomForestModel, path: &Path) -> Result<()> {
    write_bytes_atomic(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> Result<RandomForestModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
