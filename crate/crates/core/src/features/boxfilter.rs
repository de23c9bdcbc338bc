//! Truncated-window box means via summed-area tables.
//!
//! Each slice gets a 2D integral image; a running sum of those integrals over
//! the z-window gives the 3D integral for the current output slice. Cost per
//! voxel is constant in the kernel extent.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Voxel, Volume};

use super::KernelSpec;

/// Output slices handled per task. Fixed so the floating-point summation
/// order, and therefore the result, does not depend on the thread count.
const Z_CHUNK: usize = 8;

fn plane_integral<T: Voxel>(slice: &[T], nx: usize, ny: usize, out: &mut [f64]) {
    let w = nx + 1;
    out[..w].fill(0.0);
    for y in 0..ny {
        let row = &slice[y * nx..(y + 1) * nx];
        let mut acc = 0.0f64;
        out[(y + 1) * w] = 0.0;
        for x in 0..nx {
            acc += row[x].to_f64();
            out[(y + 1) * w + x + 1] = out[y * w + x + 1] + acc;
        }
    }
}

/// Mean of `grid` over a `kernel`-sized window centred on every voxel,
/// normalized by the number of in-bounds voxels.
pub fn box_filter<T: Voxel>(grid: &Volume<T>, kernel: &KernelSpec) -> Result<Volume<f32>> {
    kernel.validate()?;
    let d = grid.dims();
    let (nx, ny, nz) = (d.nx, d.ny, d.nz);
    let [hx, hy, hz] = kernel.half_extent();
    let plane = (nx + 1) * (ny + 1);
    let w = nx + 1;
    let mut out = vec![0f32; d.len()];
    let src = grid.data();
    let slice_len = d.slice_len();

    out.par_chunks_mut(Z_CHUNK * slice_len).enumerate().for_each(|(chunk, out_chunk)| {
        let z_start = chunk * Z_CHUNK;
        let z_end = (z_start + Z_CHUNK).min(nz);
        let mut running = vec![0f64; plane];
        let mut scratch = vec![0f64; plane];
        let window = |z: usize| (z.saturating_sub(hz), (z + hz).min(nz - 1));

        let (w0, w1) = window(z_start);
        for zz in w0..=w1 {
            plane_integral(&src[zz * slice_len..(zz + 1) * slice_len], nx, ny, &mut scratch);
            running.iter_mut().zip(&scratch).for_each(|(r, s)| *r += s);
        }

        for z in z_start..z_end {
            let (z0, z1) = window(z);
            if z > z_start {
                let (p0, p1) = window(z - 1);
                if p0 < z0 {
                    plane_integral(&src[p0 * slice_len..(p0 + 1) * slice_len], nx, ny, &mut scratch);
                    running.iter_mut().zip(&scratch).for_each(|(r, s)| *r -= s);
                }
                if z1 > p1 {
                    plane_integral(&src[z1 * slice_len..(z1 + 1) * slice_len], nx, ny, &mut scratch);
                    running.iter_mut().zip(&scratch).for_each(|(r, s)| *r += s);
                }
            }
            let zc = (z1 - z0 + 1) as f64;
            let dst = &mut out_chunk[(z - z_start) * slice_len..(z - z_start + 1) * slice_len];
            for y in 0..ny {
                let y0 = y.saturating_sub(hy);
                let y1 = (y + hy).min(ny - 1);
                for x in 0..nx {
                    let x0 = x.saturating_sub(hx);
                    let x1 = (x + hx).min(nx - 1);
                    let sum = running[(y1 + 1) * w + x1 + 1] - running[y0 * w + x1 + 1] - running[(y1 + 1) * w + x0]
                        + running[y0 * w + x0];
                    let count = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64 * zc;
                    dst[y * nx + x] = (sum / count) as f32;
                }
            }
        }
    });

    grid.with_data(out)
}

/// Even extents have no centre voxel.
pub(crate) fn check_odd(extent: [usize; 3]) -> Result<()> {
    if extent.iter().any(|&e| e == 0 || e % 2 == 0) {
        return Err(Error::param(format!("box kernel extents must be odd and positive, got {extent:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Resolution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn brute_force(grid: &Volume<f32>, k: [usize; 3]) -> Vec<f64> {
        let d = grid.dims();
        let h = [k[0] / 2, k[1] / 2, k[2] / 2];
        let mut out = Vec::with_capacity(d.len());
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let (mut s, mut c) = (0.0f64, 0usize);
                    for zz in z as isize - h[2] as isize..=(z + h[2]) as isize {
                        for yy in y as isize - h[1] as isize..=(y + h[1]) as isize {
                            for xx in x as isize - h[0] as isize..=(x + h[0]) as isize {
                                if xx >= 0 && yy >= 0 && zz >= 0 && (xx as usize) < d.nx && (yy as usize) < d.ny && (zz as usize) < d.nz {
                                    s += f64::from(grid.get(xx as usize, yy as usize, zz as usize));
                                    c += 1;
                                }
                            }
                        }
                    }
                    out.push(s / c as f64);
                }
            }
        }
        out
    }

    #[test]
    fn constant_stays_constant() {
        let g = Volume::filled(Dims::new(12, 9, 6), Resolution::default(), 42.5f32).unwrap();
        for k in [KernelSpec::THETA0, KernelSpec::THETA1, KernelSpec::THETA2, KernelSpec::THETA3] {
            let out = box_filter(&g, &k).unwrap();
            assert!(out.data().iter().all(|&v| (v - 42.5).abs() < 1e-4), "{}", k.name);
        }
    }

    #[test]
    fn even_extent_rejected() {
        let g = Volume::filled(Dims::new(4, 4, 2), Resolution::default(), 1f32).unwrap();
        let k = KernelSpec::custom([4, 5, 1]);
        assert!(matches!(box_filter(&g, &k), Err(Error::Parameter(_))));
    }

    #[test]
    fn random_grid_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims::new(9, 9, 5);
        let g = Volume::from_vec(dims, Resolution::default(), (0..dims.len()).map(|_| rng.random::<f32>() * 255.0).collect()).unwrap();
        let out = box_filter(&g, &KernelSpec::custom([5, 5, 3])).unwrap();
        let oracle = brute_force(&g, [5, 5, 3]);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() < 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn widest_kernel_on_taller_volume() {
        // Crosses several z chunks so the running window is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = Dims::new(7, 6, 21);
        let g = Volume::from_vec(dims, Resolution::default(), (0..dims.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
        for k in [[101, 101, 5], [3, 1, 5], [1, 1, 1]] {
            let out = box_filter(&g, &KernelSpec::custom(k)).unwrap();
            let oracle = brute_force(&g, k);
            for (a, b) in out.data().iter().zip(&oracle) {
                assert!((f64::from(*a) - b).abs() < 1e-5, "{k:?}: {a} vs {b}");
            }
        }
    }
}
