//! Grid vertices shared by three or more blocks.
//!
//! Every sharer can estimate a vertex value from its own interior cells
//! around the vertex, and those one-sided estimates disagree. The owner
//! (lowest block id) publishes its estimate; the value rides on the owner's
//! coalesced halo message to each sharer, so no extra message is sent.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gas::NVARS;
use crate::grid::{BlockField, IndexBox};
use crate::partition::Decomposition;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingularPoint {
    /// Vertex in zone coordinates (cell corners run from 0 to n).
    pub vertex: [i64; 3],
    /// Blocks whose closed box contains the vertex, ascending.
    pub sharers: Vec<u32>,
    pub owner: u32,
}

/// Vertices where block cuts along at least two axes meet. Periodic images
/// are not identified with each other.
pub fn find_singular_points(dec: &Decomposition) -> Vec<SingularPoint> {
    let inner_cuts: [Vec<i64>; 3] = std::array::from_fn(|d| {
        let c = &dec.cuts[d];
        c[1..c.len() - 1].to_vec()
    });
    let extent: [i64; 3] = std::array::from_fn(|d| *dec.cuts[d].last().unwrap());
    let mut points = BTreeMap::new();
    for free in 0..3 {
        let [a, b] = [(free + 1) % 3, (free + 2) % 3];
        for &ca in &inner_cuts[a] {
            for &cb in &inner_cuts[b] {
                for x in 0..=extent[free] {
                    let mut v = [0i64; 3];
                    v[a] = ca;
                    v[b] = cb;
                    v[free] = x;
                    points.entry([v[2], v[1], v[0]]).or_insert(v);
                }
            }
        }
    }
    points
        .into_values()
        .map(|v| {
            let per_axis: [Vec<usize>; 3] = std::array::from_fn(|d| {
                let c = &dec.cuts[d];
                (0..c.len() - 1).filter(|&k| c[k] <= v[d] && v[d] <= c[k + 1]).collect()
            });
            let mut sharers = Vec::new();
            for &cz in &per_axis[2] {
                for &cy in &per_axis[1] {
                    for &cx in &per_axis[0] {
                        sharers.push(dec.block_id([cx, cy, cz]));
                    }
                }
            }
            sharers.sort_unstable();
            SingularPoint {
                vertex: v,
                owner: sharers[0],
                sharers,
            }
        })
        .filter(|p| p.sharers.len() >= 3)
        .collect()
}

/// Average of the block's own interior cells touching `vertex`.
/// `cells` is the block's box in zone coordinates.
pub fn one_sided_value(field: &BlockField, cells: &IndexBox, vertex: [i64; 3]) -> [f64; NVARS] {
    let mut sum = [0.0; NVARS];
    let mut n = 0usize;
    for dz in [-1, 0] {
        for dy in [-1, 0] {
            for dx in [-1, 0] {
                let g = [vertex[0] + dx, vertex[1] + dy, vertex[2] + dz];
                if cells.contains(g) {
                    let local = std::array::from_fn(|d| g[d] - cells.lo[d]);
                    let q = field.state(local);
                    for c in 0..NVARS {
                        sum[c] += q[c];
                    }
                    n += 1;
                }
            }
        }
    }
    sum.map(|s| s / n.max(1) as f64)
}

/// Vertex values held by each sharer, keyed by (point index, block).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SingularValues {
    pub values: BTreeMap<(usize, u32), [f64; NVARS]>,
}

impl SingularValues {
    /// One-sided estimates for every point shared by the given blocks;
    /// `cells[id]` is each block's box in zone coordinates.
    pub fn estimate<'a>(
        points: &[SingularPoint],
        cells: &[IndexBox],
        blocks: impl IntoIterator<Item = (u32, &'a BlockField)>,
    ) -> Self {
        let mut values = BTreeMap::new();
        let blocks: Vec<_> = blocks.into_iter().collect();
        for (k, p) in points.iter().enumerate() {
            for (id, field) in &blocks {
                if p.sharers.contains(id) {
                    values.insert((k, *id), one_sided_value(field, &cells[*id as usize], p.vertex));
                }
            }
        }
        Self { values }
    }

    /// Overwrite every sharer's value with the owner's.
    pub fn resolve(&mut self, points: &[SingularPoint]) -> Result<()> {
        for (k, p) in points.iter().enumerate() {
            let owner = *self.values.get(&(k, p.owner)).ok_or_else(|| {
                Error::HaloPlan(format!("singular point {:?}: owner block {} missing", p.vertex, p.owner))
            })?;
            for &s in &p.sharers {
                if let Some(v) = self.values.get_mut(&(k, s)) {
                    *v = owner;
                }
            }
        }
        Ok(())
    }

    /// Whether all sharers present agree exactly.
    pub fn consistent(&self, points: &[SingularPoint]) -> bool {
        points.iter().enumerate().all(|(k, p)| {
            let vals: Vec<_> = p.sharers.iter().filter_map(|s| self.values.get(&(k, *s))).collect();
            vals.windows(2).all(|w| w[0] == w[1])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::split::balanced_sizes;

    #[test]
    fn four_blocks_around_an_edge() {
        let dec = Decomposition::from_sizes([balanced_sizes(8, 2), balanced_sizes(8, 2), vec![4]]);
        let pts = find_singular_points(&dec);
        // the vertical line x = y = 4, z = 0..=4
        assert_eq!(pts.len(), 5);
        for p in &pts {
            assert_eq!(p.sharers, vec![0, 1, 2, 3]);
            assert_eq!(p.owner, 0);
            assert_eq!(p.sharers.iter().filter(|&&s| s != p.owner).count(), 3);
        }
    }

    #[test]
    fn eight_blocks_meet_at_the_centre() {
        let dec = Decomposition::from_sizes([balanced_sizes(4, 2), balanced_sizes(4, 2), balanced_sizes(4, 2)]);
        let pts = find_singular_points(&dec);
        assert_eq!(pts.len(), 3 * 5 - 2);
        let centre = pts.iter().find(|p| p.vertex == [2, 2, 2]).unwrap();
        assert_eq!(centre.sharers.len(), 8);
        let edge = pts.iter().find(|p| p.vertex == [2, 2, 0]).unwrap();
        assert_eq!(edge.sharers.len(), 4);
    }

    #[test]
    fn missing_owner_is_reported() {
        let dec = Decomposition::from_sizes([balanced_sizes(8, 2), balanced_sizes(8, 2), vec![2]]);
        let pts = find_singular_points(&dec);
        let mut vals = SingularValues::default();
        vals.values.insert((0, 1), [1.0; NVARS]);
        assert!(vals.resolve(&pts).is_err());
    }
}
