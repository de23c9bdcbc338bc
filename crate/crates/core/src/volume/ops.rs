use crate::error::{Error, Result};

use super::{Dims, Resolution, Volume, Voxel};

/// Block-mean downsampling in x and y; z is untouched.
///
/// Output voxel `(i, j, z)` is the mean of the in-bounds source voxels in
/// `[i*f, (i+1)*f) x [j*f, (j+1)*f)` on slice `z`.
pub fn downsample_xy<T: Voxel>(grid: &Volume<T>, factor: usize) -> Result<Volume<T>> {
    if factor == 0 {
        return Err(Error::param("downsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let d = grid.dims();
    let out = Dims::new(d.nx.div_ceil(factor), d.ny.div_ceil(factor), d.nz);
    let mut data = Vec::with_capacity(out.len());
    for z in 0..d.nz {
        let slice = grid.slice(z);
        for j in 0..out.ny {
            let y1 = ((j + 1) * factor).min(d.ny);
            for i in 0..out.nx {
                let x1 = ((i + 1) * factor).min(d.nx);
                let mut sum = 0.0;
                for y in j * factor..y1 {
                    let row = &slice[y * d.nx..(y + 1) * d.nx];
                    sum += row[i * factor..x1].iter().map(|v| v.to_f64()).sum::<f64>();
                }
                let count = ((y1 - j * factor) * (x1 - i * factor)) as f64;
                data.push(T::from_f64(sum / count));
            }
        }
    }
    let r = grid.resolution();
    let f = factor as f64;
    Volume::from_vec(out, Resolution::new(r.x * f, r.y * f, r.z), data)
}

/// Linear-interpolated quantile (type 7) of a u8 distribution given as a
/// 256-bin histogram.
pub fn quantile_u8(hist: &[u64; 256], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param(format!("quantile position {q} outside [0, 1]")));
    }
    let n: u64 = hist.iter().sum();
    if n == 0 {
        return Err(Error::param("quantile of an empty distribution"));
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as u64;
    let frac = pos - lo as f64;
    let a = order_statistic(hist, lo);
    if frac == 0.0 {
        return Ok(a);
    }
    let b = order_statistic(hist, lo + 1);
    Ok(a + frac * (b - a))
}

fn order_statistic(hist: &[u64; 256], k: u64) -> f64 {
    let mut seen = 0u64;
    for (v, &c) in hist.iter().enumerate() {
        seen += c;
        if seen > k {
            return v as f64;
        }
    }
    255.0
}
