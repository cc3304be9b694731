//! Halo plans: which source cells fill which halo cells.
//!
//! Each halo cell takes its value from a global function of the interior
//! (neighbor copy, periodic image, boundary-condition image or a fixed
//! inflow state), so the filled halos never depend on how the zone is cut.
//! The mapping is separable per axis, which lets regions be built as
//! products of one-dimensional runs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exchange::singular::{find_singular_points, SingularPoint};
use crate::gas::{conserved_from_primitive, GasModel, NVARS};
use crate::grid::{BlockField, IndexBox};
use crate::partition::{AxisSource, PartitionPlan};

/// Largest message id that fits under the epoch bits of a tag.
pub const MAX_MESSAGE_ID: u32 = (1 << 20) - 16;

pub fn message_tag(epoch: u64, id: u32) -> u32 {
    (((epoch & 0xFFF) as u32) << 20) | (id & 0xF_FFFF)
}

/// A box of halo cells in one block and where its values come from.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub dst_block: u32,
    /// Halo cells, local coordinates of the destination block.
    pub dst: IndexBox,
    pub source: RegionSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionSource {
    Copy {
        src_block: u32,
        /// Source cell (local coordinates) feeding `dst.lo`.
        start: [i64; 3],
        /// Source step per destination step along each axis: 1, -1 or 0.
        step: [i64; 3],
        /// Negate the momentum component along each flagged axis.
        flip: [bool; 3],
    },
    Fixed([f64; NVARS]),
}

impl Region {
    pub fn cells(&self) -> usize {
        self.dst.volume()
    }

    /// Source cells as a box (the mirror image of `dst`).
    pub fn source_box(&self) -> Option<(u32, IndexBox)> {
        match &self.source {
            RegionSource::Copy { src_block, start, step, .. } => {
                let dims = self.dst.dims();
                let mut lo = [0; 3];
                let mut hi = [0; 3];
                for d in 0..3 {
                    let end = start[d] + step[d] * (dims[d] as i64 - 1);
                    lo[d] = start[d].min(end);
                    hi[d] = start[d].max(end) + 1;
                }
                Some((*src_block, IndexBox::new(lo, hi)))
            }
            RegionSource::Fixed(_) => None,
        }
    }

    /// Append this region's values, component-major, x-fastest.
    pub fn pack(&self, src: &BlockField, out: &mut Vec<f64>) {
        let RegionSource::Copy { start, step, flip, .. } = &self.source else {
            return;
        };
        if self.dst.is_empty() {
            return;
        }
        let [nx, ny, nz] = self.dst.dims();
        let st = src.strides();
        let base = src.index_of(*start) as i64;
        let (sy, sz) = (step[1] * st[1] as i64, step[2] * st[2] as i64);
        out.reserve(nx * ny * nz * NVARS);
        for c in 0..NVARS {
            let comp = src.component(c);
            let neg = (1..=3).contains(&c) && flip[c - 1];
            for k in 0..nz as i64 {
                for j in 0..ny as i64 {
                    let i = base + j * sy + k * sz;
                    if step[0] == 1 && !neg {
                        out.extend_from_slice(&comp[i as usize..i as usize + nx]);
                    } else {
                        let sign = if neg { -1.0 } else { 1.0 };
                        out.extend((0..nx as i64).map(|m| sign * comp[(i + step[0] * m) as usize]));
                    }
                }
            }
        }
    }

    /// Write values produced by `pack`; returns the number consumed.
    pub fn unpack(&self, dst: &mut BlockField, values: &[f64]) -> usize {
        let n = self.cells();
        let nx = self.dst.extent(0).max(0) as usize;
        if nx == 0 {
            return 0;
        }
        let [_, ny, _] = self.dst.dims();
        let st = dst.strides();
        let base = dst.index_of(self.dst.lo);
        for c in 0..NVARS {
            let comp = dst.component_mut(c);
            let chunk = &values[c * n..(c + 1) * n];
            for (r, row) in chunk.chunks_exact(nx).enumerate() {
                let i = base + (r % ny) * st[1] + (r / ny) * st[2];
                comp[i..i + nx].copy_from_slice(row);
            }
        }
        n * NVARS
    }

    /// Copy straight from `src` to `dst` (different blocks).
    pub fn copy(&self, src: &BlockField, dst: &mut BlockField) {
        match &self.source {
            RegionSource::Copy { .. } => {
                let mut buf = Vec::with_capacity(self.cells() * NVARS);
                self.pack(src, &mut buf);
                self.unpack(dst, &buf);
            }
            RegionSource::Fixed(q) => self.fill(dst, q),
        }
    }

    fn fill(&self, dst: &mut BlockField, q: &[f64; NVARS]) {
        for p in self.dst.iter() {
            let i = dst.index_of(p);
            dst.set_state_at(i, *q);
        }
    }

    /// Fill a region whose source is the destination block itself or a
    /// fixed state.
    pub fn apply_within(&self, field: &mut BlockField) {
        match &self.source {
            RegionSource::Fixed(q) => self.fill(field, q),
            RegionSource::Copy { .. } => {
                let mut buf = Vec::with_capacity(self.cells() * NVARS);
                self.pack(field, &mut buf);
                self.unpack(field, &buf);
            }
        }
    }
}

/// All regions between one ordered block pair; they travel as one message.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExchange {
    pub id: u32,
    pub src_block: u32,
    pub dst_block: u32,
    pub src_rank: usize,
    pub dst_rank: usize,
    /// Indices into `HaloPlan::regions`.
    pub regions: Vec<usize>,
    pub cells: usize,
    /// Singular points whose owner value rides along (owner = `src_block`).
    pub singular: Vec<usize>,
}

impl PairExchange {
    pub fn is_local(&self) -> bool {
        self.src_rank == self.dst_rank
    }

    pub fn payload_len(&self) -> usize {
        self.cells * NVARS + self.singular.len() * NVARS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloPlan {
    pub halo: usize,
    pub regions: Vec<Region>,
    /// Block-to-block exchanges, ordered by (source block, destination block).
    pub pairs: Vec<PairExchange>,
    /// Fixed-state regions (inflow ghosts), filled by the owning rank.
    pub fixed: Vec<usize>,
    pub singular: Vec<SingularPoint>,
    /// Each block's box in zone coordinates, by id.
    pub block_cells: Vec<IndexBox>,
    block_rank: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AxisRun {
    /// Start in zone coordinates.
    start: i64,
    len: i64,
    kind: RunKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunKind {
    Own,
    Copy {
        block: usize,
        src: i64,
        step: i64,
        flip: bool,
    },
    Inflow,
}

/// Runs along axis `d` over `[lo - h, hi + h)` for a block spanning `[lo, hi)`.
fn axis_runs(plan: &PartitionPlan, d: usize, lo: i64, hi: i64, h: i64) -> Vec<AxisRun> {
    let dec = &plan.decomposition;
    let mut runs: Vec<AxisRun> = Vec::new();
    let mut x = lo - h;
    while x < hi + h {
        if x == lo {
            runs.push(AxisRun { start: lo, len: hi - lo, kind: RunKind::Own });
            x = hi;
            continue;
        }
        let kind = match plan.zone.axis_source(d, x) {
            AxisSource::Inflow => RunKind::Inflow,
            AxisSource::Cell { src, flip } => RunKind::Copy {
                block: dec.locate(d, src),
                src,
                step: 0,
                flip,
            },
        };
        let boundary = x == hi;
        let extend = match (runs.last_mut(), kind) {
            (Some(last), _) if boundary || last.start + last.len != x => None,
            (Some(last), RunKind::Inflow) if last.kind == RunKind::Inflow => Some(last),
            (
                Some(last),
                RunKind::Copy { block, src, flip, .. },
            ) => match last.kind {
                RunKind::Copy { block: b0, src: s0, step, flip: f0 } if b0 == block && f0 == flip => {
                    let prev = s0 + step * (last.len - 1);
                    let diff = src - prev;
                    if last.len == 1 && diff.abs() <= 1 {
                        last.kind = RunKind::Copy { block, src: s0, step: diff, flip };
                        Some(last)
                    } else if last.len > 1 && diff == step {
                        Some(last)
                    } else {
                        None
                    }
                }
                _ => None,
            },
            _ => None,
        };
        match extend {
            Some(last) => last.len += 1,
            None => runs.push(AxisRun { start: x, len: 1, kind }),
        }
        x += 1;
    }
    runs
}

pub fn build_halo_plan(plan: &PartitionPlan, gas: &GasModel) -> Result<HaloPlan> {
    let h = plan.halo as i64;
    let dec = &plan.decomposition;
    let owners = plan.block_owners();
    let mut regions = Vec::new();
    for b in &plan.blocks {
        let runs: [Vec<AxisRun>; 3] =
            std::array::from_fn(|d| axis_runs(plan, d, b.cells.lo[d], b.cells.hi[d], h));
        for rz in &runs[2] {
            for ry in &runs[1] {
                for rx in &runs[0] {
                    let rr = [rx, ry, rz];
                    if rr.iter().all(|r| r.kind == RunKind::Own) {
                        continue;
                    }
                    let glo: [i64; 3] = std::array::from_fn(|d| rr[d].start);
                    let dst = IndexBox::new(
                        std::array::from_fn(|d| glo[d] - b.cells.lo[d]),
                        std::array::from_fn(|d| glo[d] + rr[d].len - b.cells.lo[d]),
                    );
                    let source = if rr.iter().any(|r| r.kind == RunKind::Inflow) {
                        let w = plan.zone.inflow_state(glo).ok_or_else(|| {
                            Error::HaloPlan(format!("block {}: inflow region without an inflow face", b.id))
                        })?;
                        RegionSource::Fixed(conserved_from_primitive(&w, gas)?.to_array())
                    } else {
                        let mut coords = [0usize; 3];
                        let mut start = [0i64; 3];
                        let mut step = [0i64; 3];
                        let mut flip = [false; 3];
                        for d in 0..3 {
                            match rr[d].kind {
                                RunKind::Own => {
                                    coords[d] = b.coords[d];
                                    start[d] = glo[d];
                                    step[d] = 1;
                                }
                                RunKind::Copy { block, src, step: s, flip: f } => {
                                    coords[d] = block;
                                    start[d] = src;
                                    step[d] = s;
                                    flip[d] = f;
                                }
                                RunKind::Inflow => unreachable!(),
                            }
                        }
                        let src_block = dec.block_id(coords);
                        let src_lo = plan.blocks[src_block as usize].cells.lo;
                        RegionSource::Copy {
                            src_block,
                            start: std::array::from_fn(|d| start[d] - src_lo[d]),
                            step,
                            flip,
                        }
                    };
                    regions.push(Region { dst_block: b.id, dst, source });
                }
            }
        }
    }

    let mut by_pair: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    let mut fixed = Vec::new();
    for (i, r) in regions.iter().enumerate() {
        match r.source {
            RegionSource::Copy { src_block, .. } => by_pair.entry((src_block, r.dst_block)).or_default().push(i),
            RegionSource::Fixed(_) => fixed.push(i),
        }
    }
    // per-region mode numbers regions first, then one singular message per pair
    if (by_pair.len() + regions.len()) as u64 > MAX_MESSAGE_ID as u64 {
        return Err(Error::HaloPlan("too many messages per epoch for the tag space".into()));
    }
    let mut pairs: Vec<PairExchange> = by_pair
        .into_iter()
        .enumerate()
        .map(|(id, ((s, d), regs))| PairExchange {
            id: id as u32,
            src_block: s,
            dst_block: d,
            src_rank: owners[s as usize].0,
            dst_rank: owners[d as usize].0,
            cells: regs.iter().map(|&i| regions[i].cells()).sum(),
            regions: regs,
            singular: Vec::new(),
        })
        .collect();

    let singular = find_singular_points(dec);
    for (k, sp) in singular.iter().enumerate() {
        for &s in sp.sharers.iter().filter(|&&s| s != sp.owner) {
            let pair = pairs
                .iter_mut()
                .find(|p| p.src_block == sp.owner && p.dst_block == s)
                .ok_or_else(|| {
                    Error::HaloPlan(format!(
                        "singular point {:?}: owner block {} has no exchange with block {s}",
                        sp.vertex, sp.owner
                    ))
                })?;
            pair.singular.push(k);
        }
    }

    Ok(HaloPlan {
        halo: plan.halo,
        regions,
        pairs,
        fixed,
        singular,
        block_cells: plan.blocks.iter().map(|b| b.cells).collect(),
        block_rank: owners.iter().map(|o| o.0).collect(),
    })
}

impl HaloPlan {
    pub fn rank_of(&self, block: u32) -> usize {
        self.block_rank[block as usize]
    }

    /// Messages that cross ranks (coalesced).
    pub fn remote_pairs(&self) -> impl Iterator<Item = &PairExchange> {
        self.pairs.iter().filter(|p| !p.is_local())
    }

    /// Regions that cross ranks (one message each when not coalesced).
    pub fn remote_regions(&self) -> impl Iterator<Item = (usize, &Region)> + '_ {
        self.regions.iter().enumerate().filter(move |(_, r)| match r.source {
            RegionSource::Copy { src_block, .. } => self.rank_of(src_block) != self.rank_of(r.dst_block),
            RegionSource::Fixed(_) => false,
        })
    }

    /// Distinct unordered neighbor pairs of blocks (self-wraps excluded).
    pub fn neighbor_pairs(&self) -> usize {
        let mut set = std::collections::BTreeSet::new();
        for p in &self.pairs {
            if p.src_block != p.dst_block {
                set.insert((p.src_block.min(p.dst_block), p.src_block.max(p.dst_block)));
            }
        }
        set.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{regroup_blocks, split_zone, Boundary, Faces, NodeTopology, SplitTarget, ZoneSpec};

    fn plan_for(zone: ZoneSpec, blocks: usize, ranks: usize) -> PartitionPlan {
        let dec = split_zone(&zone, SplitTarget::Blocks(blocks)).unwrap();
        regroup_blocks(&zone, &dec, ranks, &NodeTopology::homogeneous(ranks, 1), 1.0).unwrap()
    }

    #[test]
    fn two_blocks_in_x_exchange_faces() {
        let mut zone = ZoneSpec::periodic_cube(16, 1.0);
        zone.cells = [32, 16, 16];
        zone.faces = Faces::all(Boundary::Extrapolation);
        let plan = plan_for(zone, 2, 2);
        let hp = build_halo_plan(&plan, &GasModel::default()).unwrap();
        let cross: Vec<_> = hp.pairs.iter().filter(|p| p.src_block != p.dst_block).collect();
        assert_eq!(cross.len(), 2);
        for p in cross {
            // the face itself, plus edge and corner ghosts whose clamped
            // images also live in the neighbor
            let faces: Vec<_> = p.regions.iter().filter(|&&r| hp.regions[r].dst.dims() == [5, 16, 16]).collect();
            assert_eq!(faces.len(), 1);
            assert_eq!(p.cells, 5 * 26 * 26);
            assert!(!p.is_local());
        }
    }

    #[test]
    fn single_periodic_block_only_wraps_itself() {
        let plan = plan_for(ZoneSpec::periodic_cube(8, 1.0), 1, 1);
        let hp = build_halo_plan(&plan, &GasModel::default()).unwrap();
        assert_eq!(hp.pairs.len(), 1);
        assert_eq!(hp.pairs[0].src_block, 0);
        assert_eq!(hp.pairs[0].dst_block, 0);
        assert!(hp.fixed.is_empty());
        assert_eq!(hp.pairs[0].cells, 18 * 18 * 18 - 8 * 8 * 8);
    }

    #[test]
    fn coalescing_counts_pairs_not_regions() {
        let plan = plan_for(ZoneSpec::periodic_cube(16, 1.0), 8, 8);
        let hp = build_halo_plan(&plan, &GasModel::default()).unwrap();
        // 2x2x2 periodic: every block sees all 7 others through faces, edges and corners
        assert_eq!(hp.pairs.len(), 56);
        assert!(hp.regions.len() > hp.pairs.len());
        assert_eq!(hp.remote_pairs().count(), 56);
        assert_eq!(hp.neighbor_pairs(), 28);
    }

    #[test]
    fn tags_pack_epoch_and_id() {
        assert_eq!(message_tag(1, 5), (1 << 20) | 5);
        assert_eq!(message_tag(0x1001, 7), (1 << 20) | 7);
    }
}
