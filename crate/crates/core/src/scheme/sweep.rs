//! Directional residual terms over a tile of one block.
//!
//! A task sweeps every line of a tile along one axis. Inviscid terms go
//! through the split-flux interpolation and the edge difference; viscous
//! terms form the viscous flux at nodes from central gradients and take its
//! central derivative. Each task returns a dense buffer of `5 * tile.volume()`
//! values, component-major, x-fastest inside the tile, so tasks never share
//! mutable state and the caller combines them in a fixed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::{check_state, GasModel, NVARS};
use crate::grid::{Axis, BlockField, IndexBox};
use crate::scheme::difference::{central4, edge_difference};
use crate::scheme::split::split_point;
use crate::scheme::wcns::interpolate_window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FluxKind {
    Inviscid,
    Viscous,
}

/// One of the six independent directional tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DirectionalTask {
    pub axis: Axis,
    pub kind: FluxKind,
}

impl DirectionalTask {
    /// Fixed combination order: inviscid x, y, z then viscous x, y, z.
    pub const ALL: [DirectionalTask; 6] = [
        DirectionalTask { axis: Axis::X, kind: FluxKind::Inviscid },
        DirectionalTask { axis: Axis::Y, kind: FluxKind::Inviscid },
        DirectionalTask { axis: Axis::Z, kind: FluxKind::Inviscid },
        DirectionalTask { axis: Axis::X, kind: FluxKind::Viscous },
        DirectionalTask { axis: Axis::Y, kind: FluxKind::Viscous },
        DirectionalTask { axis: Axis::Z, kind: FluxKind::Viscous },
    ];

    pub fn name(&self) -> String {
        let k = match self.kind {
            FluxKind::Inviscid => "invFlux",
            FluxKind::Viscous => "visFlux",
        };
        format!("{k}_{}", self.axis.name().to_uppercase())
    }
}

/// Primitive variables over a block's padded box, same layout as the field.
#[derive(Debug, Clone, Default)]
pub struct Primitives {
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub p: Vec<f64>,
    pub temp: Vec<f64>,
}

impl Primitives {
    pub fn for_field(field: &BlockField) -> Self {
        let n = field.padded_len();
        Self {
            rho: vec![0.0; n],
            u: vec![0.0; n],
            v: vec![0.0; n],
            w: vec![0.0; n],
            p: vec![0.0; n],
            temp: vec![0.0; n],
        }
    }

    /// Convert and validate every cell of the padded box.
    pub fn compute(field: &BlockField, gas: &GasModel) -> Result<Self> {
        let mut prims = Self::for_field(field);
        prims.update(field, gas, &field.padded_box())?;
        Ok(prims)
    }

    /// Convert and validate the cells of `region` (local coordinates).
    pub fn update(&mut self, field: &BlockField, gas: &GasModel, region: &IndexBox) -> Result<()> {
        let [q0, q1, q2, q3, q4] = field.components();
        let g1 = gas.gamma - 1.0;
        for k in region.lo[2]..region.hi[2] {
            for j in region.lo[1]..region.hi[1] {
                let row = field.index(region.lo[0], j, k);
                for (n, i) in (region.lo[0]..region.hi[0]).enumerate() {
                    let idx = row + n;
                    let rho = q0[idx];
                    let u = q1[idx] / rho;
                    let v = q2[idx] / rho;
                    let w = q3[idx] / rho;
                    let p = g1 * (q4[idx] - 0.5 * (q1[idx] * u + q2[idx] * v + q3[idx] * w));
                    if let Err(e) = check_state(rho, p) {
                        return Err(e.at_cell(field.id, [i, j, k]));
                    }
                    self.rho[idx] = rho;
                    self.u[idx] = u;
                    self.v[idx] = v;
                    self.w[idx] = w;
                    self.p[idx] = p;
                    self.temp[idx] = p / rho;
                }
            }
        }
        Ok(())
    }

    #[inline(always)]
    fn velocity(&self, d: usize) -> &[f64] {
        match d {
            0 => &self.u,
            1 => &self.v,
            _ => &self.w,
        }
    }
}

/// Everything a directional task reads.
#[derive(Clone, Copy)]
pub struct SweepInput<'a> {
    pub field: &'a BlockField,
    pub prims: &'a Primitives,
    pub spacing: [f64; 3],
    pub gas: &'a GasModel,
    /// Axes along which the solution varies; gradients along the others are
    /// identically zero and are skipped.
    pub active: [bool; 3],
}

/// Lines of `tile` along `axis`: yields (padded index of the first cell,
/// offset of the first cell in the tile buffer).
fn lines(field: &BlockField, tile: &IndexBox, axis: Axis) -> Vec<(usize, usize)> {
    let d = axis.index();
    let [o1, o2] = axis.others().map(|a| a.index());
    let dims = tile.dims();
    let tstride = [1, dims[0], dims[0] * dims[1]];
    let mut out = Vec::with_capacity(dims[o1] * dims[o2]);
    for b in 0..dims[o2] {
        for a in 0..dims[o1] {
            let mut p = tile.lo;
            p[o1] += a as i64;
            p[o2] += b as i64;
            p[d] = tile.lo[d];
            out.push((field.index_of(p), a * tstride[o1] + b * tstride[o2]));
        }
    }
    out
}

fn tile_stride(tile: &IndexBox, d: usize) -> usize {
    let dims = tile.dims();
    [1, dims[0], dims[0] * dims[1]][d]
}

fn check_halo(field: &BlockField, reach: usize) -> Result<()> {
    if field.halo() < reach {
        return Err(Error::InsufficientHalo {
            needed: reach,
            available: field.halo(),
        });
    }
    Ok(())
}

/// `dF/dx_axis` of the inviscid flux over `tile`.
pub fn inviscid_derivative(inp: &SweepInput<'_>, axis: Axis, tile: &IndexBox) -> Result<Vec<f64>> {
    check_halo(inp.field, 5)?;
    let d = axis.index();
    let vol = tile.volume();
    let mut out = vec![0.0; NVARS * vol];
    let n = tile.extent(d) as usize;
    if vol == 0 {
        return Ok(out);
    }
    let h = inp.spacing[d];
    let gamma = inp.gas.gamma;
    let s = inp.field.strides()[d];
    let ts = tile_stride(tile, d);
    let comps = inp.field.components();
    let pr = inp.prims;
    let un = pr.velocity(d);

    // nodes a-5 .. b+5, edges a-3+1/2 .. b+1+1/2
    let nodes = n + 10;
    let nedges = n + 5;
    let mut q = vec![[0.0; NVARS]; nodes];
    let mut f = vec![[0.0; NVARS]; nodes];
    let mut lam = vec![0.0; nodes];
    let mut edges = vec![[0.0; NVARS]; nedges];

    for (first, toff) in lines(inp.field, tile, axis) {
        let start = first - 5 * s;
        for m in 0..nodes {
            let idx = start + m * s;
            let qm = [comps[0][idx], comps[1][idx], comps[2][idx], comps[3][idx], comps[4][idx]];
            let u = un[idx];
            let p = pr.p[idx];
            let mut fm = [qm[0] * u, qm[1] * u, qm[2] * u, qm[3] * u, (qm[4] + p) * u];
            fm[1 + d] += p;
            q[m] = qm;
            f[m] = fm;
            lam[m] = u.abs() + (gamma * p / pr.rho[idx]).sqrt();
        }
        for (e, edge) in edges.iter_mut().enumerate() {
            // edge between nodes m and m+1
            let m = e + 2;
            let lambda = lam[m - 2..=m + 3].iter().fold(0.0f64, |a, &b| a.max(b));
            let mut plus = [[0.0; 5]; NVARS];
            let mut minus = [[0.0; 5]; NVARS];
            for k in 0..5 {
                let (pp, _) = split_point(&q[m - 2 + k], &f[m - 2 + k], lambda);
                let (_, mm) = split_point(&q[m + 3 - k], &f[m + 3 - k], lambda);
                for c in 0..NVARS {
                    plus[c][k] = pp[c];
                    minus[c][k] = mm[c];
                }
            }
            for c in 0..NVARS {
                edge[c] = interpolate_window(&plus[c]) + interpolate_window(&minus[c]);
            }
        }
        for t in 0..n {
            for c in 0..NVARS {
                let e = [
                    edges[t][c],
                    edges[t + 1][c],
                    edges[t + 2][c],
                    edges[t + 3][c],
                    edges[t + 4][c],
                    edges[t + 5][c],
                ];
                out[c * vol + toff + t * ts] = edge_difference(&e, h);
            }
        }
    }
    Ok(out)
}

/// `dFv/dx_axis` of the viscous flux over `tile`.
pub fn viscous_derivative(inp: &SweepInput<'_>, axis: Axis, tile: &IndexBox) -> Result<Vec<f64>> {
    check_halo(inp.field, 4)?;
    let d = axis.index();
    let vol = tile.volume();
    let mut out = vec![0.0; NVARS * vol];
    let n = tile.extent(d) as usize;
    if vol == 0 {
        return Ok(out);
    }
    let gas = inp.gas;
    let mu = gas.viscosity();
    let kappa = gas.conductivity();
    let strides = inp.field.strides();
    let s = strides[d];
    let ts = tile_stride(tile, d);
    let pr = inp.prims;
    let vel = [&pr.u[..], &pr.v[..], &pr.w[..]];

    // viscous flux at nodes a-2 .. b+2
    let nodes = n + 4;
    let mut fv = vec![[0.0; NVARS]; nodes];
    for (first, toff) in lines(inp.field, tile, axis) {
        let start = first - 2 * s;
        for (m, fm) in fv.iter_mut().enumerate() {
            let idx = start + m * s;
            let mut grad = [[0.0; 3]; 3];
            let mut grad_t = 0.0;
            for e in 0..3 {
                if !inp.active[e] {
                    continue;
                }
                let se = strides[e];
                let he = inp.spacing[e];
                let at = |a: &[f64]| {
                    central4(&[a[idx - 2 * se], a[idx - se], a[idx], a[idx + se], a[idx + 2 * se]], he)
                };
                for i in 0..3 {
                    grad[i][e] = at(vel[i]);
                }
                if e == d {
                    grad_t = at(&pr.temp);
                }
            }
            let div = grad[0][0] + grad[1][1] + grad[2][2];
            let mut tau = [0.0; 3];
            for (i, t) in tau.iter_mut().enumerate() {
                *t = mu * (grad[i][d] + grad[d][i]);
            }
            tau[d] -= 2.0 / 3.0 * mu * div;
            let u = [vel[0][idx], vel[1][idx], vel[2][idx]];
            *fm = [
                0.0,
                tau[0],
                tau[1],
                tau[2],
                u[0] * tau[0] + u[1] * tau[1] + u[2] * tau[2] + kappa * grad_t,
            ];
        }
        let h = inp.spacing[d];
        for t in 0..n {
            for c in 1..NVARS {
                let w = [fv[t][c], fv[t + 1][c], fv[t + 2][c], fv[t + 3][c], fv[t + 4][c]];
                out[c * vol + toff + t * ts] = central4(&w, h);
            }
        }
    }
    Ok(out)
}

/// The directional term of one task over `tile`, as a positive derivative;
/// the caller applies the sign when combining.
pub fn block_residual_direction(
    inp: &SweepInput<'_>,
    task: DirectionalTask,
    tile: &IndexBox,
) -> Result<Vec<f64>> {
    match task.kind {
        FluxKind::Inviscid => inviscid_derivative(inp, task.axis, tile),
        FluxKind::Viscous => viscous_derivative(inp, task.axis, tile),
    }
    .map_err(|e| e.in_task(task.name()))
}
