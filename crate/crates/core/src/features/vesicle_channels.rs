//! Vesicle-derived channels: a centroid indicator (box filtering it gives
//! local vesicle density) and the distance to the nearest vesicle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::vesicle::VesicleSet;
use crate::volume::{Dims, Resolution, Volume};

/// 1.0 at every vesicle centroid, 0.0 elsewhere.
pub fn vesicle_indicator(dims: Dims, resolution: Resolution, vesicles: &VesicleSet) -> Result<Volume<f32>> {
    let mut out = Volume::<f32>::zeros(dims, resolution)?;
    for v in vesicles.iter() {
        let [x, y, z] = v.position;
        if x >= dims.nx || y >= dims.ny || z >= dims.nz {
            return Err(Error::param(format!("vesicle centroid {:?} outside dims {dims}", v.position)));
        }
        out.set(x, y, z, 1.0);
    }
    Ok(out)
}

/// Exact 1D squared distance transform with sample spacing `w`, over the lower
/// envelope of parabolas. `f` holds squared distances (`INFINITY` for none).
fn edt_1d(f: &[f64], w: f64, out: &mut [f64], v: &mut [usize], zs: &mut [f64]) {
    let n = f.len();
    let w2 = w * w;
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                zs[0] = f64::NEG_INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = (fq - (f[p] + w2 * (p * p) as f64)) / (2.0 * w2 * (q - p) as f64);
            if s <= zs[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                zs[k as usize] = s;
                break;
            }
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let k = k as usize;
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while j < k && zs[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        *o = w2 * dq * dq + f[p];
    }
}

/// Anisotropy-aware Euclidean distance (nm) from every voxel to the nearest
/// vesicle centroid, clamped to `cap_nm`. An empty set yields `cap_nm`
/// everywhere.
pub fn vesicle_distance(dims: Dims, resolution: Resolution, vesicles: &VesicleSet, cap_nm: f32) -> Result<Volume<f32>> {
    if !(cap_nm.is_finite() && cap_nm > 0.0) {
        return Err(Error::param(format!("distance cap must be > 0, got {cap_nm}")));
    }
    resolution.validate()?;
    if vesicles.is_empty() {
        return Volume::filled(dims, resolution, cap_nm);
    }
    let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
    let slice_len = dims.slice_len();
    let mut d2 = vec![f64::INFINITY; dims.len()];
    for v in vesicles.iter() {
        let [x, y, z] = v.position;
        if x >= nx || y >= ny || z >= nz {
            return Err(Error::param(format!("vesicle centroid {:?} outside dims {dims}", v.position)));
        }
        d2[dims.index(x, y, z)] = 0.0;
    }

    // x then y, each slice independently.
    d2.par_chunks_mut(slice_len).for_each(|plane| {
        let m = nx.max(ny);
        let (mut f, mut out, mut v, mut zs) = (vec![0.0; m], vec![0.0; m], vec![0usize; m], vec![0.0; m + 1]);
        for y in 0..ny {
            let row = &mut plane[y * nx..(y + 1) * nx];
            f[..nx].copy_from_slice(row);
            edt_1d(&f[..nx], resolution.x, &mut out[..nx], &mut v, &mut zs);
            row.copy_from_slice(&out[..nx]);
        }
        for x in 0..nx {
            for y in 0..ny {
                f[y] = plane[y * nx + x];
            }
            edt_1d(&f[..ny], resolution.y, &mut out[..ny], &mut v, &mut zs);
            for y in 0..ny {
                plane[y * nx + x] = out[y];
            }
        }
    });

    // z, one column at a time.
    let (mut f, mut out, mut v, mut zs) = (vec![0.0; nz], vec![0.0; nz], vec![0usize; nz], vec![0.0; nz + 1]);
    for i in 0..slice_len {
        for z in 0..nz {
            f[z] = d2[z * slice_len + i];
        }
        edt_1d(&f, resolution.z, &mut out, &mut v, &mut zs);
        for z in 0..nz {
            d2[z * slice_len + i] = out[z];
        }
    }

    let cap = f64::from(cap_nm);
    let data = d2.into_par_iter().map(|s| s.sqrt().min(cap) as f32).collect();
    Volume::from_vec(dims, resolution, data)
}
