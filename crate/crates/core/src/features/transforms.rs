//! Per-slice 2D data transforms. Each output slice depends only on the same
//! input slice, which keeps them meaningful on anisotropic data.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Neighbour offsets, clockwise from east (y grows downward). Bit `i` of an
/// LBP code refers to `LBP_NEIGHBOURS[i]`.
pub const LBP_NEIGHBOURS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn per_slice<F>(grid: &Volume<u8>, f: F) -> Volume<f32>
where
    F: Fn(&[u8], usize, usize, &mut [f32]) + Sync,
{
    let d = grid.dims();
    let mut out = vec![0f32; d.len()];
    out.par_chunks_mut(d.slice_len())
        .zip(grid.data().par_chunks(d.slice_len()))
        .for_each(|(dst, src)| f(src, d.nx, d.ny, dst));
    grid.with_data(out).expect("same dims")
}

/// 8-neighbour local binary pattern per slice. Bit `i` is set when neighbour
/// `i` is `>=` the centre; neighbours outside the slice count as equal.
pub fn lbp_transform(grid: &Volume<u8>) -> Volume<f32> {
    per_slice(grid, lbp_slice)
}

fn lbp_slice(src: &[u8], nx: usize, ny: usize, dst: &mut [f32]) {
    for y in 0..ny {
        for x in 0..nx {
            let c = src[y * nx + x];
            let mut code = 0u8;
            for (bit, &(dx, dy)) in LBP_NEIGHBOURS.iter().enumerate() {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                let set = if xx < 0 || yy < 0 || xx >= nx as isize || yy >= ny as isize {
                    true
                } else {
                    src[yy as usize * nx + xx as usize] >= c
                };
                if set {
                    code |= 1 << bit;
                }
            }
            dst[y * nx + x] = f32::from(code);
        }
    }
}

/// 3x3 Sobel derivatives with replicated borders.
pub(crate) fn sobel_slice(src: &[u8], nx: usize, ny: usize, gx: &mut [f64], gy: &mut [f64]) {
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, nx as isize - 1) as usize;
        let yy = y.clamp(0, ny as isize - 1) as usize;
        f64::from(src[yy * nx + xx])
    };
    for y in 0..ny as isize {
        for x in 0..nx as isize {
            let i = y as usize * nx + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
}

/// Sobel gradient magnitude per slice.
pub fn gradient_magnitude(grid: &Volume<u8>) -> Volume<f32> {
    per_slice(grid, |src, nx, ny, dst| {
        let mut gx = vec![0f64; nx * ny];
        let mut gy = vec![0f64; nx * ny];
        sobel_slice(src, nx, ny, &mut gx, &mut gy);
        for ((d, a), b) in dst.iter_mut().zip(&gx).zip(&gy) {
            *d = a.hypot(*b) as f32;
        }
    })
}

pub(crate) const COHERENCE_EPS: f64 = 1e-8;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with replicated borders, in place.
fn gaussian_blur(plane: &mut [f64], nx: usize, ny: usize, kernel: &[f64], tmp: &mut [f64]) {
    let r = (kernel.len() / 2) as isize;
    for y in 0..ny {
        for x in 0..nx {
            let mut s = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, nx as isize - 1) as usize;
                s += w * plane[y * nx + xx];
            }
            tmp[y * nx + x] = s;
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            let mut s = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, ny as isize - 1) as usize;
                s += w * tmp[yy * nx + x];
            }
            plane[y * nx + x] = s;
        }
    }
}

/// Gaussian-smoothed structure tensor entries `(Jxx, Jxy, Jyy)` of one slice.
pub(crate) fn smoothed_tensor(src: &[u8], nx: usize, ny: usize, sigma: f64) -> [Vec<f64>; 3] {
    let n = nx * ny;
    let mut gx = vec![0f64; n];
    let mut gy = vec![0f64; n];
    sobel_slice(src, nx, ny, &mut gx, &mut gy);
    let mut jxx: Vec<f64> = gx.iter().map(|a| a * a).collect();
    let mut jxy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let mut jyy: Vec<f64> = gy.iter().map(|b| b * b).collect();
    let kernel = gaussian_kernel(sigma);
    let mut tmp = gx;
    gaussian_blur(&mut jxx, nx, ny, &kernel, &mut tmp);
    gaussian_blur(&mut jxy, nx, ny, &kernel, &mut tmp);
    gaussian_blur(&mut jyy, nx, ny, &kernel, &mut tmp);
    [jxx, jxy, jyy]
}

/// Structure-tensor coherence `(l1 - l2) / (l1 + l2 + eps)` per slice, in
/// `[0, 1]`: near 1 on oriented structure such as membranes, 0 on flat or
/// isotropic texture.
pub fn structure_tensor_scalar(grid: &Volume<u8>, window_sigma: f32) -> Result<Volume<f32>> {
    if !(window_sigma.is_finite() && window_sigma > 0.0) {
        return Err(Error::param(format!("structure tensor sigma must be > 0, got {window_sigma}")));
    }
    let sigma = f64::from(window_sigma);
    Ok(per_slice(grid, |src, nx, ny, dst| {
        let [jxx, jxy, jyy] = smoothed_tensor(src, nx, ny, sigma);
        for i in 0..nx * ny {
            let trace = jxx[i] + jyy[i];
            let diff = ((jxx[i] - jyy[i]).powi(2) + 4.0 * jxy[i] * jxy[i]).sqrt();
            dst[i] = (diff / (trace + COHERENCE_EPS)).clamp(0.0, 1.0) as f32;
        }
    }))
}
