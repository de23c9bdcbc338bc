use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::volume::Dims;

/// Mean spacing between cell seeds, in pixels.
const CELL_SPACING: f64 = 56.0;
/// Period, in slices, of the seed drift that bends membranes through z.
const DRIFT_PERIOD: f64 = 48.0;
const WARP_AMPLITUDE: f64 = 3.0;
const WARP_PERIOD: f64 = 70.0;

struct Seed {
    x: f64,
    y: f64,
    amplitude: f64,
    phase: f64,
}

/// Warped 2D Voronoi tessellation whose seeds drift slowly with z, so cell
/// boundaries form curved sheets through the stack.
pub(super) struct MembraneField {
    seeds: Vec<Seed>,
    gx: usize,
    gy: usize,
    warp_phase: [f64; 2],
    thickness_phase: f64,
}

/// Distance to the nearest cell boundary and the unit normal of that
/// boundary, in pixels.
pub(super) struct Boundary {
    pub distance: f64,
    pub normal: [f64; 2],
}

impl MembraneField {
    pub fn new(dims: Dims, rng: &mut ChaCha8Rng) -> Self {
        let gx = (dims.nx as f64 / CELL_SPACING).ceil() as usize + 2;
        let gy = (dims.ny as f64 / CELL_SPACING).ceil() as usize + 2;
        let mut seeds = Vec::with_capacity(gx * gy);
        for j in 0..gy {
            for i in 0..gx {
                seeds.push(Seed {
                    x: (i as f64 - 1.0 + rng.random_range(0.15..0.85)) * CELL_SPACING,
                    y: (j as f64 - 1.0 + rng.random_range(0.15..0.85)) * CELL_SPACING,
                    amplitude: rng.random_range(0.0..3.0),
                    phase: rng.random_range(0.0..TAU),
                });
            }
        }
        MembraneField {
            seeds,
            gx,
            gy,
            warp_phase: [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
            thickness_phase: rng.random_range(0.0..TAU),
        }
    }

    fn seed_at(&self, k: usize, z: f64) -> [f64; 2] {
        let s = &self.seeds[k];
        let w = TAU * z / DRIFT_PERIOD + s.phase;
        [s.x + s.amplitude * w.sin(), s.y + s.amplitude * w.cos()]
    }

    pub fn boundary(&self, x: f64, y: f64, z: f64) -> Boundary {
        let px = x + WARP_AMPLITUDE * (TAU * y / WARP_PERIOD + self.warp_phase[0]).sin();
        let py = y + WARP_AMPLITUDE * (TAU * x / WARP_PERIOD + self.warp_phase[1]).sin();
        let ci = (px / CELL_SPACING).floor() as isize + 1;
        let cj = (py / CELL_SPACING).floor() as isize + 1;
        let mut near: [([f64; 2], f64); 25] = [([0.0; 2], f64::INFINITY); 25];
        let mut n = 0;
        for j in cj - 2..=cj + 2 {
            for i in ci - 2..=ci + 2 {
                if i < 0 || j < 0 || i as usize >= self.gx || j as usize >= self.gy {
                    continue;
                }
                let s = self.seed_at(j as usize * self.gx + i as usize, z);
                near[n] = (s, (px - s[0]).powi(2) + (py - s[1]).powi(2));
                n += 1;
            }
        }
        let near = &near[..n];
        let (k1, &(s1, d1)) = near
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .expect("seed grid covers the volume");
        let mut best = Boundary { distance: f64::INFINITY, normal: [1.0, 0.0] };
        for (k, &(s, d)) in near.iter().enumerate() {
            if k == k1 {
                continue;
            }
            let (vx, vy) = (s[0] - s1[0], s[1] - s1[1]);
            let len = (vx * vx + vy * vy).sqrt();
            let dist = (d - d1) / (2.0 * len);
            if dist < best.distance {
                best = Boundary { distance: dist, normal: [vx / len, vy / len] };
            }
        }
        best
    }

    /// Local membrane thickness, between 2 and 4 pixels.
    pub fn thickness(&self, x: f64, y: f64, z: f64) -> f64 {
        3.0 + (0.045 * x + 0.031 * y + 0.2 * z + self.thickness_phase).sin()
    }

    pub fn is_membrane(&self, x: f64, y: f64, z: f64) -> bool {
        self.boundary(x, y, z).distance < self.thickness(x, y, z) / 2.0
    }
}
