//! The VSV1 volume container.
//!
//! Layout, little-endian throughout:
//!
//! | bytes   | content                                   |
//! |---------|-------------------------------------------|
//! | 0..4    | magic `VSV1`                              |
//! | 4       | dtype code (0 = u8, 1 = f32, 2 = u32)     |
//! | 5..29   | nx, ny, nz as u64                         |
//! | 29..33  | reserved, zero                            |
//! | 33..57  | rx, ry, rz as f64 (nm per voxel)          |
//! | 57..    | payload, x-fastest                        |
//! | last 8  | FNV-1a 64 of the payload bytes            |

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::hash::Fnv1a;

use super::{AnyVolume, BoundingBox, DType, Dims, Resolution, Volume, Voxel};

pub const MAGIC: &[u8; 4] = b"VSV1";
pub const HEADER_LEN: usize = 57;
const CHECKSUM_LEN: usize = 8;

fn header_bytes(dtype: DType, dims: Dims, res: Resolution) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.push(dtype.code());
    for d in dims.as_array() {
        h.extend_from_slice(&(d as u64).to_le_bytes());
    }
    h.extend_from_slice(&[0u8; 4]);
    for r in res.as_array() {
        h.extend_from_slice(&r.to_le_bytes());
    }
    debug_assert_eq!(h.len(), HEADER_LEN);
    h
}

struct Header {
    dtype: DType,
    dims: Dims,
    resolution: Resolution,
}

fn parse_header(h: &[u8]) -> Result<Header> {
    if h.len() < HEADER_LEN {
        if h.len() >= 4 && &h[..4] != MAGIC {
            return Err(Error::Format("missing VSV1 magic".into()));
        }
        return Err(Error::Corruption(format!("header truncated at {} bytes", h.len())));
    }
    if &h[..4] != MAGIC {
        return Err(Error::Format("missing VSV1 magic".into()));
    }
    let dtype = DType::from_code(h[4]).ok_or_else(|| Error::Version(format!("unknown dtype code {}", h[4])))?;
    let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let dims_raw = [u64_at(5), u64_at(13), u64_at(21)];
    let mut d = [0usize; 3];
    for a in 0..3 {
        d[a] = usize::try_from(dims_raw[a]).map_err(|_| Error::Format(format!("dimension {} too large", dims_raw[a])))?;
    }
    let dims = Dims::from_array(d);
    if dims.is_empty() {
        return Err(Error::Format(format!("zero-sized dims {dims}")));
    }
    if h[29..33] != [0u8; 4] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let resolution = Resolution::new(f64_at(33), f64_at(41), f64_at(49));
    resolution.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(Header { dtype, dims, resolution })
}

fn payload_len(h: &Header) -> Result<usize> {
    h.dims
        .nx
        .checked_mul(h.dims.ny)
        .and_then(|v| v.checked_mul(h.dims.nz))
        .and_then(|v| v.checked_mul(h.dtype.size()))
        .ok_or_else(|| Error::Format(format!("payload size overflows for dims {}", h.dims)))
}

/// Serializes a grid to VSV1 bytes.
pub fn encode_volume<T: Voxel>(grid: &Volume<T>) -> Vec<u8> {
    let mut out = header_bytes(T::DTYPE, grid.dims(), grid.resolution());
    out.reserve(grid.len() * T::DTYPE.size() + CHECKSUM_LEN);
    for &v in grid.data() {
        v.put_le(&mut out);
    }
    let sum = crate::hash::fnv1a(&out[HEADER_LEN..]);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn decode_payload<T: Voxel>(dims: Dims, res: Resolution, payload: &[u8]) -> Result<Volume<T>> {
    let size = T::DTYPE.size();
    let data = payload.chunks_exact(size).map(T::get_le).collect();
    Volume::from_vec(dims, res, data)
}

/// Parses VSV1 bytes, verifying length and checksum.
pub fn decode_volume(bytes: &[u8]) -> Result<AnyVolume> {
    let h = parse_header(bytes)?;
    let n = payload_len(&h)?;
    let expected = HEADER_LEN + n + CHECKSUM_LEN;
    if bytes.len() < expected {
        return Err(Error::Corruption(format!(
            "file is {} bytes, expected {expected} for {} {:?} voxels",
            bytes.len(),
            h.dims,
            h.dtype
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Corruption(format!("{} trailing bytes after checksum", bytes.len() - expected)));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + n];
    let stored = u64::from_le_bytes(bytes[HEADER_LEN + n..].try_into().unwrap());
    let computed = crate::hash::fnv1a(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(match h.dtype {
        DType::U8 => AnyVolume::U8(decode_payload(h.dims, h.resolution, payload)?),
        DType::F32 => AnyVolume::F32(decode_payload(h.dims, h.resolution, payload)?),
        DType::U32 => AnyVolume::U32(decode_payload(h.dims, h.resolution, payload)?),
    })
}

pub fn save_volume<T: Voxel>(grid: &Volume<T>, path: &Path) -> Result<()> {
    grid.dims().validate()?;
    let header = header_bytes(T::DTYPE, grid.dims(), grid.resolution());
    write_atomic(path, |w| {
        w.write_all(&header)?;
        let mut hasher = Fnv1a::new();
        let mut buf = Vec::with_capacity(1 << 16);
        for chunk in grid.data().chunks(1 << 14) {
            buf.clear();
            for &v in chunk {
                v.put_le(&mut buf);
            }
            hasher.update(&buf);
            w.write_all(&buf)?;
        }
        w.write_all(&hasher.finish().to_le_bytes())
    })
}

pub fn load_volume(path: &Path) -> Result<AnyVolume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

/// Loads a volume and insists on a particular element type.
pub fn load_volume_as<T: Voxel>(path: &Path) -> Result<Volume<T>> {
    let any = load_volume(path)?;
    let found = any.dtype();
    let wrong = || Error::Format(format!("{}: expected {:?} volume, found {found:?}", path.display(), T::DTYPE));
    // Downcast through the concrete variants.
    let boxed: Box<dyn std::any::Any> = match any {
        AnyVolume::U8(v) => Box::new(v),
        AnyVolume::F32(v) => Box::new(v),
        AnyVolume::U32(v) => Box::new(v),
    };
    boxed.downcast::<Volume<T>>().map(|b| *b).map_err(|_| wrong())
}

/// Random-access reader for sub-boxes of a VSV1 file, so large volumes never
/// have to be resident in full.
pub struct VsvReader {
    path: PathBuf,
    file: BufReader<File>,
    dtype: DType,
    dims: Dims,
    resolution: Resolution,
}

impl VsvReader {
    /// Opens the file and verifies the payload checksum in a streaming pass.
    pub fn open(path: &Path) -> Result<Self> {
        let io_err = |e| Error::io(path, e);
        let file = File::open(path).map_err(io_err)?;
        let file_len = file.metadata().map_err(io_err)?.len();
        let mut file = BufReader::with_capacity(1 << 20, file);
        let mut hbuf = vec![0u8; HEADER_LEN.min(file_len as usize)];
        file.read_exact(&mut hbuf).map_err(io_err)?;
        let h = parse_header(&hbuf)?;
        let n = payload_len(&h)?;
        let expected = (HEADER_LEN + n + CHECKSUM_LEN) as u64;
        if file_len != expected {
            return Err(Error::Corruption(format!(
                "{}: file is {file_len} bytes, expected {expected}",
                path.display()
            )));
        }
        let mut hasher = Fnv1a::new();
        let mut remaining = n;
        let mut buf = vec![0u8; 1 << 20];
        while remaining > 0 {
            let take = remaining.min(buf.len());
            file.read_exact(&mut buf[..take]).map_err(io_err)?;
            hasher.update(&buf[..take]);
            remaining -= take;
        }
        let mut sum = [0u8; 8];
        file.read_exact(&mut sum).map_err(io_err)?;
        let stored = u64::from_le_bytes(sum);
        if stored != hasher.finish() {
            return Err(Error::Checksum {
                stored,
                computed: hasher.finish(),
            });
        }
        Ok(VsvReader {
            path: path.to_path_buf(),
            file,
            dtype: h.dtype,
            dims: h.dims,
            resolution: h.resolution,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Reads the voxels inside `bbox`, row by row.
    pub fn read_box<T: Voxel>(&mut self, bbox: &BoundingBox) -> Result<Volume<T>> {
        if T::DTYPE != self.dtype {
            return Err(Error::Format(format!(
                "{}: expected {:?} volume, found {:?}",
                self.path.display(),
                T::DTYPE,
                self.dtype
            )));
        }
        bbox.check_within(self.dims)?;
        let size = self.dtype.size();
        let out_dims = bbox.dims();
        let row_bytes = out_dims.nx * size;
        let mut row = vec![0u8; row_bytes];
        let mut data = Vec::with_capacity(out_dims.len());
        for z in bbox.min[2]..=bbox.max[2] {
            for y in bbox.min[1]..=bbox.max[1] {
                let offset = HEADER_LEN + self.dims.index(bbox.min[0], y, z) * size;
                self.file
                    .seek(SeekFrom::Start(offset as u64))
                    .and_then(|_| self.file.read_exact(&mut row))
                    .map_err(|e| Error::io(&self.path, e))?;
                data.extend(row.chunks_exact(size).map(T::get_le));
            }
        }
        Volume::from_vec(out_dims, self.resolution, data)
    }
}
