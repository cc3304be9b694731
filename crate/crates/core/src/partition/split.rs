//! Tensor-product splitting of a zone into blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::IndexBox;
use crate::partition::zone::ZoneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTarget {
    Blocks(usize),
    MaxBlockCells(usize),
}

/// Block cut positions per axis: `cuts[d]` runs from 0 to the zone extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub cuts: [Vec<i64>; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub id: u32,
    /// Position in the block grid.
    pub coords: [usize; 3],
    /// Cell box in zone coordinates.
    pub cells: IndexBox,
}

impl Decomposition {
    /// Cuts from per-axis block sizes.
    pub fn from_sizes(sizes: [Vec<usize>; 3]) -> Self {
        let cuts = sizes.map(|s| {
            let mut c = vec![0i64];
            for n in s {
                c.push(c.last().unwrap() + n as i64);
            }
            c
        });
        Self { cuts }
    }

    pub fn counts(&self) -> [usize; 3] {
        std::array::from_fn(|d| self.cuts[d].len() - 1)
    }

    pub fn block_count(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn block_id(&self, c: [usize; 3]) -> u32 {
        let n = self.counts();
        (c[0] + n[0] * (c[1] + n[1] * c[2])) as u32
    }

    pub fn coords_of(&self, id: u32) -> [usize; 3] {
        let n = self.counts();
        let id = id as usize;
        [id % n[0], (id / n[0]) % n[1], id / (n[0] * n[1])]
    }

    pub fn block_box(&self, c: [usize; 3]) -> IndexBox {
        IndexBox::new(
            std::array::from_fn(|d| self.cuts[d][c[d]]),
            std::array::from_fn(|d| self.cuts[d][c[d] + 1]),
        )
    }

    /// Block index along `d` containing zone coordinate `x` (in range).
    pub fn locate(&self, d: usize, x: i64) -> usize {
        self.cuts[d].partition_point(|&c| c <= x) - 1
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        let n = self.counts();
        let mut out = Vec::with_capacity(self.block_count());
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let c = [i, j, k];
                    out.push(BlockSpec {
                        id: self.block_id(c),
                        coords: c,
                        cells: self.block_box(c),
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self, zone: &ZoneSpec) -> Result<()> {
        for d in 0..3 {
            let c = &self.cuts[d];
            if c.len() < 2 || c[0] != 0 || *c.last().unwrap() != zone.cells[d] as i64 {
                return Err(Error::Partition(format!("cuts along axis {d} do not span the zone")));
            }
            if c.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Partition(format!("empty block along axis {d}")));
            }
        }
        Ok(())
    }
}

/// Sizes of `parts` nearly equal pieces of `n`, larger pieces first.
pub fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let rem = n % parts;
    (0..parts).map(|i| base + usize::from(i < rem)).collect()
}

fn factorizations(count: usize, cells: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for px in 1..=count.min(cells[0]) {
        if !count.is_multiple_of(px) {
            continue;
        }
        let rest = count / px;
        for py in 1..=rest.min(cells[1]) {
            if !rest.is_multiple_of(py) {
                continue;
            }
            let pz = rest / py;
            if pz <= cells[2] {
                out.push([px, py, pz]);
            }
        }
    }
    out
}

/// Best factorization: smallest largest block, then least cut surface, then
/// the lexicographically largest split (more blocks along x first).
fn best_factorization(count: usize, cells: [usize; 3]) -> Option<[usize; 3]> {
    factorizations(count, cells).into_iter().min_by_key(|p| {
        let largest: usize = (0..3).map(|d| cells[d].div_ceil(p[d])).product();
        let surface: usize = (0..3)
            .map(|d| (p[d] - 1) * cells[(d + 1) % 3] * cells[(d + 2) % 3])
            .sum();
        (largest, surface, std::cmp::Reverse(*p))
    })
}

pub fn split_zone(zone: &ZoneSpec, target: SplitTarget) -> Result<Decomposition> {
    zone.validate()?;
    let total = zone.total_cells();
    let counts = match target {
        SplitTarget::Blocks(n) => {
            if n == 0 {
                return Err(Error::Partition("block count must be at least 1".into()));
            }
            if n > total {
                return Err(Error::Partition(format!(
                    "cannot split {total} cells into {n} blocks"
                )));
            }
            best_factorization(n, zone.cells).ok_or_else(|| {
                Error::Partition(format!(
                    "{n} blocks admit no axis-aligned split of a {:?} zone",
                    zone.cells
                ))
            })?
        }
        SplitTarget::MaxBlockCells(m) => {
            if m == 0 {
                return Err(Error::Partition("block cell limit must be at least 1".into()));
            }
            (total.div_ceil(m)..=total)
                .filter_map(|n| best_factorization(n, zone.cells))
                .find(|p| (0..3).map(|d| zone.cells[d].div_ceil(p[d])).product::<usize>() <= m)
                .ok_or_else(|| Error::Partition(format!("no split keeps blocks under {m} cells")))?
        }
    };
    Ok(Decomposition::from_sizes(std::array::from_fn(|d| {
        balanced_sizes(zone.cells[d], counts[d])
    })))
}
