//! Structured index boxes and per-block field storage.
//!
//! Fields are stored structure-of-arrays: one contiguous array per conserved
//! component, x innermost with unit stride, halo layers included in every
//! direction. Local cell indices run over `[-halo, n + halo)`, with the
//! interior at `[0, n)`.

use serde::{Deserialize, Serialize};

use crate::gas::NVARS;

/// Halo width required by the widest stencil (edge `i+5/2` reaches node `i+5`).
pub const HALO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    /// The two axes orthogonal to this one, in increasing order.
    pub fn others(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Half-open integer box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl IndexBox {
    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn from_dims(dims: [usize; 3]) -> Self {
        Self::new([0; 3], [dims[0] as i64, dims[1] as i64, dims[2] as i64])
    }

    pub fn extent(&self, d: usize) -> i64 {
        (self.hi[d] - self.lo[d]).max(0)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.extent(0) as usize, self.extent(1) as usize, self.extent(2) as usize]
    }

    pub fn volume(&self) -> usize {
        (0..3).map(|d| self.extent(d) as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.volume() == 0
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|d| p[d] >= self.lo[d] && p[d] < self.hi[d])
    }

    pub fn intersect(&self, other: &IndexBox) -> IndexBox {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for d in 0..3 {
            lo[d] = self.lo[d].max(other.lo[d]);
            hi[d] = self.hi[d].min(other.hi[d]).max(lo[d]);
        }
        IndexBox { lo, hi }
    }

    pub fn grow(&self, by: i64) -> IndexBox {
        IndexBox {
            lo: [self.lo[0] - by, self.lo[1] - by, self.lo[2] - by],
            hi: [self.hi[0] + by, self.hi[1] + by, self.hi[2] + by],
        }
    }

    pub fn shift(&self, by: [i64; 3]) -> IndexBox {
        IndexBox {
            lo: [self.lo[0] + by[0], self.lo[1] + by[1], self.lo[2] + by[2]],
            hi: [self.hi[0] + by[0], self.hi[1] + by[1], self.hi[2] + by[2]],
        }
    }

    /// Points in x-fastest order.
    pub fn iter(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        let b = *self;
        let empty = self.is_empty();
        (b.lo[2]..b.hi[2])
            .flat_map(move |k| (b.lo[1]..b.hi[1]).flat_map(move |j| (b.lo[0]..b.hi[0]).map(move |i| [i, j, k])))
            .filter(move |_| !empty)
    }

    /// Split into sub-boxes of at most `tile` cells per axis, x-fastest order.
    pub fn tiles(&self, tile: [usize; 3]) -> Vec<IndexBox> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let t: [i64; 3] = std::array::from_fn(|d| tile[d].clamp(1, i64::MAX as usize) as i64);
        let mut k = self.lo[2];
        while k < self.hi[2] {
            let k1 = k.saturating_add(t[2]).min(self.hi[2]);
            let mut j = self.lo[1];
            while j < self.hi[1] {
                let j1 = j.saturating_add(t[1]).min(self.hi[1]);
                let mut i = self.lo[0];
                while i < self.hi[0] {
                    let i1 = i.saturating_add(t[0]).min(self.hi[0]);
                    out.push(IndexBox::new([i, j, k], [i1, j1, k1]));
                    i = i1;
                }
                j = j1;
            }
            k = k1;
        }
        out
    }

    /// `self` minus `inner` as at most six disjoint slabs (z slabs first,
    /// then y, then x). `inner` must lie inside `self`.
    pub fn shell_around(&self, inner: &IndexBox) -> Vec<IndexBox> {
        let mut out = Vec::new();
        if inner.is_empty() {
            if !self.is_empty() {
                out.push(*self);
            }
            return out;
        }
        let mut rest = *self;
        for d in (0..3).rev() {
            if inner.lo[d] > rest.lo[d] {
                let mut slab = rest;
                slab.hi[d] = inner.lo[d];
                out.push(slab);
            }
            if inner.hi[d] < rest.hi[d] {
                let mut slab = rest;
                slab.lo[d] = inner.hi[d];
                out.push(slab);
            }
            rest.lo[d] = inner.lo[d];
            rest.hi[d] = inner.hi[d];
        }
        out.retain(|b| !b.is_empty());
        out
    }
}

/// Conserved-variable storage for one block, including halo layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockField {
    pub id: u32,
    dims: [usize; 3],
    halo: usize,
    strides: [usize; 3],
    data: [Vec<f64>; NVARS],
}

impl BlockField {
    pub fn new(id: u32, dims: [usize; 3], halo: usize) -> Self {
        let padded = [dims[0] + 2 * halo, dims[1] + 2 * halo, dims[2] + 2 * halo];
        let strides = [1, padded[0], padded[0] * padded[1]];
        let len = padded[0] * padded[1] * padded[2];
        Self {
            id,
            dims,
            halo,
            strides,
            data: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn halo(&self) -> usize {
        self.halo
    }

    pub fn strides(&self) -> [usize; 3] {
        self.strides
    }

    pub fn interior_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn interior_box(&self) -> IndexBox {
        IndexBox::from_dims(self.dims)
    }

    pub fn padded_box(&self) -> IndexBox {
        self.interior_box().grow(self.halo as i64)
    }

    pub fn padded_len(&self) -> usize {
        self.data[0].len()
    }

    #[inline(always)]
    pub fn index(&self, i: i64, j: i64, k: i64) -> usize {
        let h = self.halo as i64;
        debug_assert!(self.padded_box().contains([i, j, k]), "({i},{j},{k}) outside block {}", self.id);
        ((i + h) as usize) + ((j + h) as usize) * self.strides[1] + ((k + h) as usize) * self.strides[2]
    }

    #[inline(always)]
    pub fn index_of(&self, p: [i64; 3]) -> usize {
        self.index(p[0], p[1], p[2])
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c]
    }

    pub fn components(&self) -> &[Vec<f64>; NVARS] {
        &self.data
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>; NVARS] {
        &mut self.data
    }

    #[inline(always)]
    pub fn state_at(&self, idx: usize) -> [f64; NVARS] {
        [
            self.data[0][idx],
            self.data[1][idx],
            self.data[2][idx],
            self.data[3][idx],
            self.data[4][idx],
        ]
    }

    pub fn state(&self, p: [i64; 3]) -> [f64; NVARS] {
        self.state_at(self.index_of(p))
    }

    #[inline(always)]
    pub fn set_state_at(&mut self, idx: usize, q: [f64; NVARS]) {
        for (c, v) in q.into_iter().enumerate() {
            self.data[c][idx] = v;
        }
    }

    pub fn set_state(&mut self, p: [i64; 3], q: [f64; NVARS]) {
        let idx = self.index_of(p);
        self.set_state_at(idx, q);
    }

    /// Fill every cell (halos included) with one state.
    pub fn fill(&mut self, q: [f64; NVARS]) {
        for (c, v) in q.into_iter().enumerate() {
            self.data[c].iter_mut().for_each(|x| *x = v);
        }
    }

    /// Copy the interior into a dense x-fastest array per component.
    pub fn interior_values(&self) -> [Vec<f64>; NVARS] {
        let ib = self.interior_box();
        std::array::from_fn(|c| ib.iter().map(|p| self.data[c][self.index_of(p)]).collect())
    }

    pub fn set_interior_values(&mut self, values: &[Vec<f64>; NVARS]) {
        let ib = self.interior_box();
        for (n, p) in ib.iter().enumerate() {
            let idx = self.index_of(p);
            for c in 0..NVARS {
                self.data[c][idx] = values[c][n];
            }
        }
    }
}

/// Uniform Cartesian geometry of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockGeometry {
    /// Physical coordinate of the block's low corner (a cell face).
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
}

impl BlockGeometry {
    pub fn cell_center(&self, p: [i64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| self.origin[d] + (p[d] as f64 + 0.5) * self.spacing[d])
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shell_and_interior_partition_the_box() {
        let outer = IndexBox::new([0, 0, 0], [12, 13, 14]);
        let inner = IndexBox::new([5, 5, 5], [7, 8, 9]);
        let shell = outer.shell_around(&inner);
        let total: usize = shell.iter().map(|b| b.volume()).sum::<usize>() + inner.volume();
        assert_eq!(total, outer.volume());
        for p in outer.iter() {
            let hits = shell.iter().filter(|b| b.contains(p)).count() + inner.contains(p) as usize;
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn tiles_cover_box() {
        let b = IndexBox::new([-1, 0, 2], [9, 5, 7]);
        let tiles = b.tiles([4, 2, 3]);
        assert_eq!(tiles.iter().map(|t| t.volume()).sum::<usize>(), b.volume());
        assert_eq!(tiles[0], IndexBox::new([-1, 0, 2], [3, 2, 5]));
    }

    #[test]
    fn field_indexing_is_x_fastest() {
        let f = BlockField::new(0, [4, 3, 2], 2);
        assert_eq!(f.index(1, 0, 0) - f.index(0, 0, 0), 1);
        assert_eq!(f.index(0, 1, 0) - f.index(0, 0, 0), 8);
        assert_eq!(f.index(-2, -2, -2), 0);
        assert_eq!(f.padded_len(), 8 * 7 * 6);
    }
}
