//! Data movement of blocks held by a coprocessor.
//!
//! Kernels of coprocessor blocks run on host workers, but every byte the
//! device would need goes through a [`ResidencyCache`], so the transfers
//! charged to the host link are exactly those a real offload would make:
//! halos imported from other devices before the kernel, and the cells other
//! devices read after it.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::exchange::{HaloPlan, RegionSource};
use crate::gas::NVARS;
use crate::grid::IndexBox;
use crate::hetero::{union_cells, DeviceMemory, DeviceModel, ResidencyCache, SliceId, SliceKind, TransferStats};
use crate::partition::{DeviceRef, PartitionPlan};

const VALUE_BYTES: usize = std::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, Default)]
struct BlockBytes {
    interior: usize,
    /// Halo cells filled from another device, per component.
    import: usize,
    /// Interior cells another device reads, per component.
    export: usize,
    geometry: usize,
}

/// Residency of one coprocessor's blocks.
#[derive(Debug, Clone)]
pub struct Offload {
    pub device: DeviceRef,
    pub name: String,
    pub model: DeviceModel,
    pub cache: ResidencyCache,
    pub memory: DeviceMemory,
    blocks: BTreeMap<u32, BlockBytes>,
}

fn slice(block: u32, kind: SliceKind, component: usize) -> SliceId {
    SliceId { block, kind, component: component as u8 }
}

impl Offload {
    /// Allocate the device buffers of `device`'s blocks once. Every slice
    /// starts on the host.
    pub fn new(
        plan: &PartitionPlan,
        hp: &HaloPlan,
        rank: usize,
        device: DeviceRef,
        model: DeviceModel,
        exports: &BTreeMap<u32, Vec<IndexBox>>,
    ) -> Result<Self> {
        let name = format!("r{rank}.{device}");
        let owner = plan.block_owners();
        let mine: Vec<u32> = plan
            .groups
            .iter()
            .filter(|g| g.rank == rank && g.device == device)
            .flat_map(|g| g.blocks.iter().copied())
            .collect();
        let mut blocks: BTreeMap<u32, BlockBytes> = mine
            .iter()
            .map(|&b| {
                let dims = plan.blocks[b as usize].cells.dims();
                let bytes = BlockBytes {
                    interior: dims.iter().product::<usize>() * VALUE_BYTES,
                    import: 0,
                    export: exports.get(&b).map_or(0, |bx| union_cells(bx)) * VALUE_BYTES,
                    geometry: dims.iter().sum::<usize>() * VALUE_BYTES,
                };
                (b, bytes)
            })
            .collect();
        for r in &hp.regions {
            if let RegionSource::Copy { src_block, .. } = r.source {
                if let Some(b) = blocks.get_mut(&r.dst_block) {
                    if owner[src_block as usize] != (rank, device) {
                        b.import += r.cells() * VALUE_BYTES;
                    }
                }
            }
        }
        let mut memory = DeviceMemory::new(name.clone(), model.memory);
        let mut cache = ResidencyCache::new(name.clone());
        for (&b, _) in &blocks {
            let dims = plan.blocks[b as usize].cells.dims();
            let padded: usize = dims.iter().map(|n| n + 2 * plan.halo).product();
            // state with halos, stage start copy, residual
            memory.allocate(padded * NVARS * VALUE_BYTES)?;
            memory.allocate(2 * dims.iter().product::<usize>() * NVARS * VALUE_BYTES)?;
            cache.host_write(slice(b, SliceKind::Geometry, 0));
            for c in 0..NVARS {
                for kind in [SliceKind::Core, SliceKind::Shell, SliceKind::Halo] {
                    cache.host_write(slice(b, kind, c));
                }
            }
        }
        Ok(Self {
            device,
            name,
            model,
            cache,
            memory,
            blocks,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = u32> + '_ {
        self.blocks.keys().copied()
    }

    /// Move the whole initial state to the device; done before timing.
    pub fn warm_up(&mut self) -> Result<usize> {
        let mut moved = 0;
        for (&b, bytes) in &self.blocks {
            moved += self.cache.to_device(slice(b, SliceKind::Geometry, 0), bytes.geometry)?;
            for c in 0..NVARS {
                let shell = bytes.export;
                moved += self.cache.to_device(slice(b, SliceKind::Shell, c), shell)?;
                moved += self.cache.to_device(slice(b, SliceKind::Core, c), bytes.interior - shell)?;
                moved += self.cache.to_device(slice(b, SliceKind::Halo, c), bytes.import)?;
            }
        }
        Ok(moved)
    }

    /// The host has refreshed the halos; bring everything the kernel reads
    /// up to date. Returns the bytes moved.
    pub fn upload(&mut self) -> Result<usize> {
        let mut moved = 0;
        for (&b, bytes) in &self.blocks {
            moved += self.cache.to_device(slice(b, SliceKind::Geometry, 0), bytes.geometry)?;
            for c in 0..NVARS {
                if bytes.import > 0 {
                    self.cache.host_write(slice(b, SliceKind::Halo, c));
                }
                moved += self.cache.to_device(slice(b, SliceKind::Halo, c), bytes.import)?;
                moved += self.cache.to_device(slice(b, SliceKind::Shell, c), bytes.export)?;
                moved += self.cache.to_device(slice(b, SliceKind::Core, c), bytes.interior - bytes.export)?;
            }
        }
        Ok(moved)
    }

    /// One fused kernel over every block: checks it reads only current data
    /// and records the new interior generation.
    pub fn kernel(&mut self) -> Result<()> {
        for &b in self.blocks.keys() {
            self.cache.check_device(slice(b, SliceKind::Geometry, 0))?;
            for c in 0..NVARS {
                for kind in [SliceKind::Core, SliceKind::Shell, SliceKind::Halo] {
                    self.cache.check_device(slice(b, kind, c))?;
                }
                self.cache.device_write(slice(b, SliceKind::Core, c));
                self.cache.device_write(slice(b, SliceKind::Shell, c));
            }
        }
        Ok(())
    }

    /// Bring back the cells other devices read. Returns the bytes moved.
    pub fn download(&mut self) -> Result<usize> {
        let mut moved = 0;
        for (&b, bytes) in &self.blocks {
            if bytes.export > 0 {
                for c in 0..NVARS {
                    moved += self.cache.to_host(slice(b, SliceKind::Shell, c), bytes.export)?;
                }
            }
        }
        Ok(moved)
    }

    /// Bring the whole interior back, for output.
    pub fn collect(&mut self) -> Result<usize> {
        let mut moved = 0;
        for (&b, bytes) in &self.blocks {
            for c in 0..NVARS {
                moved += self.cache.to_host(slice(b, SliceKind::Shell, c), bytes.export)?;
                moved += self.cache.to_host(slice(b, SliceKind::Core, c), bytes.interior - bytes.export)?;
            }
        }
        Ok(moved)
    }

    pub fn stats(&self) -> TransferStats {
        self.cache.stats
    }
}
