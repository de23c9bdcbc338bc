use crate::error::{Error, Result};
use crate::volume::Dims;

/// Voxel adjacency used by component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    pub fn planar(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::param(format!("2D connectivity must be 4 or 8, got {n}"))),
        }
    }

    pub fn volumetric(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::param(format!("3D connectivity must be 6, 18 or 26, got {n}"))),
        }
    }

    /// Every neighbour offset, both directions.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let (planar, max_nonzero) = match self {
            Connectivity::Four => (true, 1),
            Connectivity::Eight => (true, 2),
            Connectivity::Six => (false, 1),
            Connectivity::Eighteen => (false, 2),
            Connectivity::TwentySix => (false, 3),
        };
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            if planar && dz != 0 {
                continue;
            }
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nonzero > 0 && nonzero <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the current voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
            .collect()
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let grand = parent[parent[a as usize] as usize];
        parent[a as usize] = grand;
        a = grand;
    }
    a
}

/// Two-pass union-find labelling of the nonzero voxels of `mask`.
///
/// Returns per-voxel labels (`0` for background) numbered `1..=count` in
/// order of first appearance in raster order, plus `count`.
pub fn label_components(mask: &[u8], dims: Dims, conn: Connectivity) -> (Vec<u32>, u32) {
    debug_assert_eq!(mask.len(), dims.len());
    let back = conn.backward_offsets();
    let (nx, ny, nz) = (dims.nx as isize, dims.ny as isize, dims.nz as isize);
    let steps: Vec<isize> = back.iter().map(|&[dx, dy, dz]| dx + nx * (dy + ny * dz)).collect();
    let mut labels = vec![0u32; mask.len()];
    let mut parent: Vec<u32> = vec![0];
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask[i] != 0 {
                    let mut cur = 0u32;
                    for (o, &[dx, dy, dz]) in back.iter().enumerate() {
                        let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                        if xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny {
                            continue;
                        }
                        let l = labels[(i as isize + steps[o]) as usize];
                        if l == 0 {
                            continue;
                        }
                        let r = find(&mut parent, l);
                        if cur == 0 {
                            cur = r;
                        } else if r != cur {
                            let (lo, hi) = if r < cur { (r, cur) } else { (cur, r) };
                            parent[hi as usize] = lo;
                            cur = lo;
                        }
                    }
                    if cur == 0 {
                        cur = parent.len() as u32;
                        parent.push(cur);
                    }
                    labels[i] = cur;
                }
                i += 1;
            }
        }
    }
    let mut compact = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let r = find(&mut parent, *l);
        if compact[r as usize] == 0 {
            count += 1;
            compact[r as usize] = count;
        }
        *l = compact[r as usize];
    }
    (labels, count)
}

/// Groups voxel indices by label; entry `k` holds label `k + 1`, ascending.
pub fn group_by_label(labels: &[u32], count: u32) -> Vec<Vec<usize>> {
    let mut sizes = vec![0usize; count as usize];
    for &l in labels.iter().filter(|&&l| l != 0) {
        sizes[l as usize - 1] += 1;
    }
    let mut groups: Vec<Vec<usize>> = sizes.into_iter().map(Vec::with_capacity).collect();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            groups[l as usize - 1].push(i);
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use proptest::prelude::*;

    use super::*;

    fn flood_fill(mask: &[u8], dims: Dims, conn: Connectivity) -> Vec<Vec<usize>> {
        let offs = conn.offsets();
        let mut seen = vec![false; mask.len()];
        let mut out = Vec::new();
        for start in 0..mask.len() {
            if mask[start] == 0 || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                let [x, y, z] = dims.coords(i);
                for [dx, dy, dz] in &offs {
                    let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if xx < 0 || yy < 0 || zz < 0 {
                        continue;
                    }
                    let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                    if xx >= dims.nx || yy >= dims.ny || zz >= dims.nz {
                        continue;
                    }
                    let j = dims.index(xx, yy, zz);
                    if mask[j] != 0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    #[test]
    fn offset_counts() {
        assert_eq!(Connectivity::Four.offsets().len(), 4);
        assert_eq!(Connectivity::Eight.offsets().len(), 8);
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::Eighteen.offsets().len(), 18);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
        assert!(Connectivity::planar(6).is_err());
        assert!(Connectivity::volumetric(8).is_err());
    }

    #[test]
    fn diagonal_pair_depends_on_connectivity() {
        let dims = Dims::new(2, 2, 2);
        let mut mask = vec![0u8; 8];
        mask[dims.index(0, 0, 0)] = 1;
        mask[dims.index(1, 1, 1)] = 1;
        assert_eq!(label_components(&mask, dims, Connectivity::TwentySix).1, 1);
        assert_eq!(label_components(&mask, dims, Connectivity::Eighteen).1, 2);
        assert_eq!(label_components(&mask, dims, Connectivity::Six).1, 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two arms joined only at the bottom row force a union of distinct labels.
        let dims = Dims::new(5, 3, 1);
        let rows = ["1.1.1", "1.1.1", "11111"];
        let mask: Vec<u8> = rows.iter().flat_map(|r| r.bytes().map(|b| u8::from(b == b'1'))).collect();
        let (labels, count) = label_components(&mask, dims, Connectivity::Four);
        assert_eq!(count, 1);
        assert!(labels.iter().zip(&mask).all(|(&l, &m)| (l == 1) == (m == 1)));
    }

    fn check_against_oracle(bits: &[bool], conn: Connectivity) {
        let dims = Dims::new(20, 20, 20);
        let mask: Vec<u8> = bits.iter().map(|&b| u8::from(b)).collect();
        let (labels, count) = label_components(&mask, dims, conn);
        let ours = group_by_label(&labels, count);
        let oracle = flood_fill(&mask, dims, conn);
        assert_eq!(ours, oracle);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn matches_flood_fill_6(bits in proptest::collection::vec(proptest::bool::weighted(0.3), 8000)) {
            check_against_oracle(&bits, Connectivity::Six);
        }

        #[test]
        fn matches_flood_fill_26(bits in proptest::collection::vec(proptest::bool::weighted(0.15), 8000)) {
            check_against_oracle(&bits, Connectivity::TwentySix);
        }

        #[test]
        fn matches_flood_fill_18(bits in proptest::collection::vec(proptest::bool::weighted(0.2), 8000)) {
            check_against_oracle(&bits, Connectivity::Eighteen);
        }
    }
}
