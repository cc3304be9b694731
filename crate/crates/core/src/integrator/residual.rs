//! Residual assembly from independent directional tasks.
//!
//! The residual of a region is split into units of (block, tile, task).
//! Units run in any order on any worker; each returns its own buffer and the
//! buffers are combined per cell in the fixed order
//! `0 - Dx - Dy - Dz + Vx + Vy + Vz`, so the result never depends on
//! scheduling, worker count or tile size.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::measure;
use crate::error::Result;
use crate::gas::{GasModel, NVARS};
use crate::grid::{BlockField, IndexBox};
use crate::scheme::{block_residual_direction, DirectionalTask, FluxKind, Primitives, SweepInput};

/// Tile shape for residual tasks, in cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub tile: [usize; 3],
}

impl Default for Tiling {
    /// One tile per region.
    fn default() -> Self {
        Self { tile: [usize::MAX; 3] }
    }
}

/// Residual of one block's interior, component-major, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockResidual {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl BlockResidual {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![0.0; NVARS * dims.iter().product::<usize>()],
        }
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn offset(&self, p: [i64; 3]) -> usize {
        p[0] as usize + self.dims[0] * (p[1] as usize + self.dims[1] * p[2] as usize)
    }

    pub fn get(&self, c: usize, p: [i64; 3]) -> f64 {
        self.values[c * self.cells() + self.offset(p)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Sum of squares in storage order.
    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Residuals of a set of blocks, keyed by block id.
pub type ResidualField = BTreeMap<u32, BlockResidual>;

/// One schedulable piece of work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskUnit {
    pub block: u32,
    pub tile: IndexBox,
    pub task: DirectionalTask,
}

/// Tasks needed for the given gas and active axes, in combination order.
pub fn active_tasks(gas: &GasModel, active: [bool; 3]) -> Vec<DirectionalTask> {
    DirectionalTask::ALL
        .into_iter()
        .filter(|t| active[t.axis.index()] && (t.kind == FluxKind::Inviscid || gas.viscous))
        .collect()
}

/// Units covering `regions` of `block`; the tasks of one tile are adjacent
/// and in combination order.
pub fn plan_units(block: u32, regions: &[IndexBox], tiling: Tiling, tasks: &[DirectionalTask], out: &mut Vec<TaskUnit>) {
    for r in regions {
        for tile in r.tiles(tiling.tile) {
            for &task in tasks {
                out.push(TaskUnit { block, tile, task });
            }
        }
    }
}

/// Read-only inputs shared by every unit.
#[derive(Clone, Copy)]
pub struct ResidualInputs<'a> {
    pub fields: &'a BTreeMap<u32, BlockField>,
    pub prims: &'a BTreeMap<u32, Primitives>,
    pub spacing: [f64; 3],
    pub gas: &'a GasModel,
    pub active: [bool; 3],
}

impl ResidualInputs<'_> {
    fn run(&self, u: &TaskUnit) -> Result<(Vec<f64>, f64)> {
        let inp = SweepInput {
            field: &self.fields[&u.block],
            prims: &self.prims[&u.block],
            spacing: self.spacing,
            gas: self.gas,
            active: self.active,
        };
        let (out, t) = measure(|| block_residual_direction(&inp, u.task, &u.tile));
        out.map(|o| (o, t))
    }
}

/// Run units on `pool` (or the calling thread). Outputs are returned in unit
/// order with the CPU seconds each took.
pub fn run_units(
    inputs: ResidualInputs<'_>,
    units: &[TaskUnit],
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<(Vec<f64>, f64)>> {
    match pool {
        Some(p) if p.current_num_threads() > 1 => {
            p.install(|| units.par_iter().map(|u| inputs.run(u)).collect::<Result<Vec<_>>>())
        }
        _ => units.iter().map(|u| inputs.run(u)).collect(),
    }
}

/// Add unit outputs into block residuals in the fixed combination order.
/// Units of each tile must be adjacent, as produced by [`plan_units`].
pub fn accumulate(residuals: &mut ResidualField, units: &[TaskUnit], outputs: &[(Vec<f64>, f64)]) {
    let mut i = 0;
    while i < units.len() {
        let (block, tile) = (units[i].block, units[i].tile);
        let mut j = i;
        while j < units.len() && units[j].block == block && units[j].tile == tile {
            j += 1;
        }
        let res = residuals.get_mut(&block).expect("residual for every block");
        let vol = tile.volume();
        let cells = res.cells();
        for (n, p) in tile.iter().enumerate() {
            let off = res.offset(p);
            for c in 0..NVARS {
                let mut r = 0.0;
                for k in i..j {
                    let v = outputs[k].0[c * vol + n];
                    r = match units[k].task.kind {
                        FluxKind::Inviscid => r - v,
                        FluxKind::Viscous => r + v,
                    };
                }
                res.values[c * cells + off] = r;
            }
        }
        i = j;
    }
}

/// Compute primitives of `regions` of every block, validating states.
pub fn update_primitives(
    fields: &BTreeMap<u32, BlockField>,
    prims: &mut BTreeMap<u32, Primitives>,
    gas: &GasModel,
    regions: impl Fn(&BlockField) -> Vec<IndexBox>,
) -> Result<()> {
    for (id, f) in fields {
        let p = prims.entry(*id).or_insert_with(|| Primitives::for_field(f));
        for r in regions(f) {
            p.update(f, gas, &r)?;
        }
    }
    Ok(())
}

/// Cells at least `reach` away from every face along active axes: their
/// stencils never touch halo cells.
pub fn core_box(field: &BlockField, active: [bool; 3], reach: usize) -> IndexBox {
    let ib = field.interior_box();
    let r = reach as i64;
    let mut lo = ib.lo;
    let mut hi = ib.hi;
    for d in 0..3 {
        if active[d] {
            lo[d] += r;
            hi[d] -= r;
            if hi[d] <= lo[d] {
                return IndexBox::new([0; 3], [0; 3]);
            }
        }
    }
    IndexBox::new(lo, hi)
}

/// Residual of whole blocks on the calling thread or a pool. Convenience
/// for callers that have already filled halos.
pub fn compute_residual(
    fields: &BTreeMap<u32, BlockField>,
    gas: &GasModel,
    spacing: [f64; 3],
    active: [bool; 3],
    tiling: Tiling,
    pool: Option<&rayon::ThreadPool>,
) -> Result<ResidualField> {
    let mut prims = BTreeMap::new();
    update_primitives(fields, &mut prims, gas, |f| vec![f.padded_box()])?;
    let tasks = active_tasks(gas, active);
    let mut units = Vec::new();
    for (id, f) in fields {
        plan_units(*id, &[f.interior_box()], tiling, &tasks, &mut units);
    }
    let inputs = ResidualInputs {
        fields,
        prims: &prims,
        spacing,
        gas,
        active,
    };
    let outputs = run_units(inputs, &units, pool)?;
    let mut res: ResidualField = fields.iter().map(|(id, f)| (*id, BlockResidual::zeros(f.dims()))).collect();
    accumulate(&mut res, &units, &outputs);
    Ok(res)
}
