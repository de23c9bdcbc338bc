//! Dense voxel grids with anisotropic resolution, plus the shared I/O and
//! resampling utilities every other stage builds on.
//!
//! Data is stored x-fastest, then y, then z. Label grids use `0` for
//! background and ids `>= 1` for objects.

mod io;
mod mask;
mod ops;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{decode_volume, encode_volume, load_volume, load_volume_as, save_volume, VsvReader, HEADER_LEN, MAGIC};
pub use mask::{bandpass_cutoffs, intensity_bandpass_mask, MaskProvenance, MembraneMask};
pub use ops::{downsample_xy, quantile_u8};

/// Voxel counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let rest = index / self.nx;
        [x, rest % self.ny, rest / self.ny]
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::param(format!("dims must be >= 1 on every axis, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Physical voxel size in nanometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Resolution {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Resolution { x, y, z }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.as_array() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("resolution must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Voxel volume in cubic micrometres.
    pub fn voxel_um3(&self) -> f64 {
        self.x * self.y * self.z * 1e-9
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution::new(6.0, 6.0, 30.0)
    }
}

/// On-disk element type codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U8 = 0,
    F32 = 1,
    U32 = 2,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::F32),
            2 => Some(DType::U32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 | DType::U32 => 4,
        }
    }
}

/// Element types a [`Volume`] can hold.
pub trait Voxel: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {
    const DTYPE: DType;
    fn to_f64(self) -> f64;
    /// Converts back from a computed value; integer types round to nearest
    /// and saturate.
    fn from_f64(v: f64) -> Self;
    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
}

impl Voxel for u8 {
    const DTYPE: DType = DType::U8;
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn get_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Voxel for f32 {
    const DTYPE: DType = DType::F32;
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Voxel for u32 {
    const DTYPE: DType = DType::U32;
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, u32::MAX as f64) as u32
    }
    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get_le(bytes: &[u8]) -> Self {
        u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

/// A dense 3D lattice of voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    resolution: Resolution,
    data: Vec<T>,
}

impl<T: Voxel> Volume<T> {
    pub fn from_vec(dims: Dims, resolution: Resolution, data: Vec<T>) -> Result<Self> {
        dims.validate()?;
        resolution.validate()?;
        if data.len() != dims.len() {
            return Err(Error::param(format!(
                "data length {} does not match dims {dims} ({} voxels)",
                data.len(),
                dims.len()
            )));
        }
        Ok(Volume { dims, resolution, data })
    }

    pub fn filled(dims: Dims, resolution: Resolution, value: T) -> Result<Self> {
        dims.validate()?;
        Volume::from_vec(dims, resolution, vec![value; dims.len()])
    }

    pub fn zeros(dims: Dims, resolution: Resolution) -> Result<Self> {
        Volume::filled(dims, resolution, T::default())
    }

    /// Same dims and resolution as `self`, new contents.
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Volume::from_vec(self.dims, self.resolution, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn slice(&self, z: usize) -> &[T] {
        let n = self.dims.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [T] {
        let n = self.dims.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            resolution: self.resolution,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f32(&self) -> Volume<f32> {
        self.map(|v| v.to_f64() as f32)
    }

    /// Copies the voxels inside `bbox` into a new grid with the same resolution.
    pub fn extract(&self, bbox: &BoundingBox) -> Result<Volume<T>> {
        bbox.check_within(self.dims)?;
        let out_dims = bbox.dims();
        let mut data = Vec::with_capacity(out_dims.len());
        for z in bbox.min[2]..=bbox.max[2] {
            for y in bbox.min[1]..=bbox.max[1] {
                let start = self.dims.index(bbox.min[0], y, z);
                data.extend_from_slice(&self.data[start..start + out_dims.nx]);
            }
        }
        Volume::from_vec(out_dims, self.resolution, data)
    }
}

/// A volume of any supported element type, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    U8(Volume<u8>),
    F32(Volume<f32>),
    U32(Volume<u32>),
}

impl AnyVolume {
    pub fn dtype(&self) -> DType {
        match self {
            AnyVolume::U8(_) => DType::U8,
            AnyVolume::F32(_) => DType::F32,
            AnyVolume::U32(_) => DType::U32,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            AnyVolume::U8(v) => v.dims(),
            AnyVolume::F32(v) => v.dims(),
            AnyVolume::U32(v) => v.dims(),
        }
    }
}

/// Axis-aligned box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| min[a] > max[a]) {
            return Err(Error::param(format!("bounding box min {min:?} exceeds max {max:?}")));
        }
        Ok(BoundingBox { min, max })
    }

    pub fn whole(dims: Dims) -> Self {
        BoundingBox {
            min: [0; 3],
            max: [dims.nx - 1, dims.ny - 1, dims.nz - 1],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        )
    }

    pub fn len(&self) -> usize {
        self.dims().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    /// Grows the box by `pad` on every side, clipped to `dims`.
    pub fn expand(&self, pad: [usize; 3], dims: Dims) -> BoundingBox {
        let d = dims.as_array();
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].saturating_sub(pad[a]);
            out.max[a] = (self.max[a] + pad[a]).min(d[a] - 1);
        }
        out
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].min(other.min[a]);
            out.max[a] = out.max[a].max(other.max[a]);
        }
        out
    }

    pub fn check_within(&self, dims: Dims) -> Result<()> {
        let d = dims.as_array();
        if (0..3).any(|a| self.min[a] > self.max[a] || self.max[a] >= d[a]) {
            return Err(Error::param(format!("bounding box {self:?} not contained in dims {dims}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let d = Dims::new(4, 3, 2);
        for i in 0..d.len() {
            let [x, y, z] = d.coords(i);
            assert_eq!(d.index(x, y, z), i);
        }
        assert_eq!(d.index(1, 0, 0), 1);
        assert_eq!(d.index(0, 1, 0), 4);
        assert_eq!(d.index(0, 0, 1), 12);
    }

    #[test]
    fn rejects_empty_dims_and_bad_resolution() {
        let r = Resolution::default();
        assert!(Volume::<u8>::zeros(Dims::new(0, 2, 2), r).is_err());
        assert!(Volume::<u8>::zeros(Dims::new(2, 2, 2), Resolution::new(6.0, 0.0, 30.0)).is_err());
        assert!(Volume::<u8>::zeros(Dims::new(2, 2, 2), Resolution::new(f64::NAN, 6.0, 30.0)).is_err());
        assert!(Volume::from_vec(Dims::new(2, 2, 1), r, vec![0u8; 3]).is_err());
    }

    #[test]
    fn extract_sub_box() {
        let d = Dims::new(4, 4, 2);
        let v = Volume::from_vec(d, Resolution::default(), (0..32u32).collect()).unwrap();
        let b = BoundingBox::new([1, 2, 1], [2, 3, 1]).unwrap();
        let s = v.extract(&b).unwrap();
        assert_eq!(s.dims(), Dims::new(2, 2, 1));
        assert_eq!(s.data(), &[25, 26, 29, 30]);
    }

    #[test]
    fn bbox_expand_clips() {
        let d = Dims::new(100, 100, 10);
        let core = BoundingBox::new([0, 0, 0], [49, 49, 9]).unwrap();
        let p = core.expand([8, 8, 2], d);
        assert_eq!(p.min, [0, 0, 0]);
        assert_eq!(p.max, [57, 57, 9]);
        assert!(p.contains_box(&core));
    }
}
