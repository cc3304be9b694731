//! Per-stage cost model of a partition: what every device computes and
//! moves, turned into an operation graph for the overlapped or the
//! serialized schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchange::{HaloPlan, LinkModel, RegionSource};
use crate::gas::{GasModel, PrimitiveState, NVARS};
use crate::grid::IndexBox;
use crate::hetero::device::DeviceModels;
use crate::hetero::timeline::{OpGraph, Phase, Timeline, TimelineReport};
use crate::integrator::RK_STAGES;
use crate::partition::{
    regroup_blocks, Boundary, Decomposition, DeviceClass, DeviceRef, Faces, NodeTopology, PartitionPlan, ZoneSpec,
};

const VALUE_BYTES: usize = std::mem::size_of::<f64>();

/// Cells whose stencils read no halo filled from another block: `reach`
/// cells away from every exposed face. `exposed[d]` holds the low and high
/// face of axis `d`.
pub fn core_cells(dims: [usize; 3], exposed: [[bool; 2]; 3], reach: usize) -> usize {
    (0..3)
        .map(|d| dims[d].saturating_sub(reach * exposed[d].iter().filter(|e| **e).count()))
        .product()
}

/// Faces of `cells` whose halos come from another block. Physical
/// boundaries are filled locally, and so is a periodic axis the block spans.
pub fn exposed_faces(zone: &ZoneSpec, cells: &IndexBox) -> [[bool; 2]; 3] {
    let active = zone.active_axes();
    std::array::from_fn(|d| {
        let n = zone.cells[d] as i64;
        let spans = cells.lo[d] == 0 && cells.hi[d] == n;
        let periodic = zone.is_periodic(d);
        [
            active[d] && (cells.lo[d] > 0 || (periodic && !spans)),
            active[d] && (cells.hi[d] < n || (periodic && !spans)),
        ]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceWork {
    pub rank: usize,
    pub device: DeviceRef,
    pub cells: usize,
    pub core_cells: usize,
    /// Halo bytes moved to the device every stage.
    pub h2d_bytes: usize,
    /// Bytes other devices read, moved back every stage.
    pub d2h_bytes: usize,
    /// Halo bytes received from other ranks.
    pub received_bytes: usize,
    /// Halo bytes a CPU device copies from other blocks of its own rank.
    pub fill_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub src_rank: usize,
    pub dst_rank: usize,
    pub src_device: DeviceRef,
    pub dst_device: DeviceRef,
    pub bytes: usize,
}

/// Everything one RK stage computes and moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub ranks: usize,
    pub node_of_rank: Vec<usize>,
    pub devices: Vec<DeviceWork>,
    pub messages: Vec<Message>,
    pub total_cells: usize,
}

/// Per-block sets of cells other devices read, as unions of boxes.
pub fn export_boxes(plan: &PartitionPlan, hp: &HaloPlan) -> BTreeMap<u32, Vec<IndexBox>> {
    let owner = plan.block_owners();
    let mut out: BTreeMap<u32, Vec<IndexBox>> = BTreeMap::new();
    for r in &hp.regions {
        if let Some((src, sbox)) = r.source_box() {
            if owner[src as usize] != owner[r.dst_block as usize] {
                out.entry(src).or_default().push(sbox);
            }
        }
    }
    out
}

/// Number of distinct cells covered by `boxes`.
pub fn union_cells(boxes: &[IndexBox]) -> usize {
    let Some(first) = boxes.first() else { return 0 };
    let mut lo = first.lo;
    let mut hi = first.hi;
    for b in boxes {
        for d in 0..3 {
            lo[d] = lo[d].min(b.lo[d]);
            hi[d] = hi[d].max(b.hi[d]);
        }
    }
    let bound = IndexBox::new(lo, hi);
    let dims = bound.dims();
    let mut mask = vec![false; bound.volume()];
    for b in boxes {
        for p in b.iter() {
            let o = (p[0] - lo[0]) as usize + dims[0] * ((p[1] - lo[1]) as usize + dims[1] * (p[2] - lo[2]) as usize);
            mask[o] = true;
        }
    }
    mask.into_iter().filter(|m| *m).count()
}

pub fn workload(plan: &PartitionPlan, hp: &HaloPlan) -> Workload {
    let owner = plan.block_owners();
    let mut devices: BTreeMap<(usize, DeviceRef), DeviceWork> = BTreeMap::new();
    for g in &plan.groups {
        let w = devices.entry((g.rank, g.device)).or_insert(DeviceWork {
            rank: g.rank,
            device: g.device,
            cells: 0,
            core_cells: 0,
            h2d_bytes: 0,
            d2h_bytes: 0,
            received_bytes: 0,
            fill_bytes: 0,
        });
        for &b in &g.blocks {
            let cells = &plan.blocks[b as usize].cells;
            w.cells += cells.volume();
            w.core_cells += core_cells(cells.dims(), exposed_faces(&plan.zone, cells), plan.halo);
        }
    }
    let cell_bytes = NVARS * VALUE_BYTES;
    for r in &hp.regions {
        if let RegionSource::Copy { src_block, .. } = r.source {
            let dst = owner[r.dst_block as usize];
            if dst.1.class == DeviceClass::Coprocessor && owner[src_block as usize] != dst {
                devices.get_mut(&dst).expect("owner device").h2d_bytes += r.cells() * cell_bytes;
            }
        }
    }
    for (b, boxes) in export_boxes(plan, hp) {
        let o = owner[b as usize];
        if o.1.class == DeviceClass::Coprocessor {
            devices.get_mut(&o).expect("owner device").d2h_bytes += union_cells(&boxes) * cell_bytes;
        }
    }
    let mut messages = Vec::new();
    for p in &hp.pairs {
        let (s, d) = (owner[p.src_block as usize], owner[p.dst_block as usize]);
        let bytes = p.payload_len() * VALUE_BYTES;
        let dst = devices.get_mut(&d).expect("owner device");
        if !p.is_local() {
            dst.received_bytes += bytes;
            messages.push(Message {
                src_rank: s.0,
                dst_rank: d.0,
                src_device: s.1,
                dst_device: d.1,
                bytes,
            });
            continue;
        }
        if d.1.class == DeviceClass::Cpu && p.src_block != p.dst_block {
            dst.fill_bytes += bytes;
        }
    }
    Workload {
        ranks: plan.ranks,
        node_of_rank: plan.rank_nodes.clone(),
        devices: devices.into_values().collect(),
        messages,
        total_cells: plan.total_cells(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Coprocessor kernels, inter-rank exchange and CPU work run together.
    Overlapped,
    /// Exchange, then uploads, then compute, then downloads, then reconciliation.
    Serialized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub models: DeviceModels,
    pub network: LinkModel,
    /// Host pack, unpack and copy bandwidth, bytes per second.
    pub copy_bandwidth: f64,
    pub steps: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            models: DeviceModels::default(),
            network: LinkModel::default(),
            copy_bandwidth: 10.0e9,
            steps: 2,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.models.validate()?;
        if !(self.copy_bandwidth > 0.0) || self.steps == 0 {
            return Err(Error::Config("copy bandwidth must be positive and steps at least 1".into()));
        }
        Ok(())
    }

    fn copy_time(&self, bytes: usize) -> f64 {
        bytes as f64 / self.copy_bandwidth
    }

    fn pack_time(&self, bytes: usize) -> f64 {
        self.network.overhead + self.copy_time(bytes)
    }
}

/// Operation graph of `params.steps` full steps.
///
/// Per stage and rank: coprocessors upload halos, run their kernel and
/// download what others read; meanwhile the communication thread packs
/// inter-rank messages and CPU devices compute their core cells, unpack the
/// received halos and compute the rest. Once every device is done, each CPU
/// device copies the halos it takes from blocks of its own rank.
///
/// Resources per rank: one per device, a halo engine per CPU device, a host
/// link per coprocessor, the communication thread and the network interface.
/// Both schedules add the same operations in the same order; the serialized
/// one only adds dependencies, so it never finishes earlier.
pub fn build_graph(w: &Workload, params: &ModelParams, schedule: Schedule) -> OpGraph {
    let mut g = OpGraph::default();
    let n = w.devices.len();
    let mut compute = vec![0; n];
    let mut aux = vec![0; n];
    for (i, d) in w.devices.iter().enumerate() {
        compute[i] = g.resource(format!("r{}.{}", d.rank, d.device), d.rank);
        aux[i] = match d.device.class {
            DeviceClass::Cpu => g.resource(format!("r{}.{}.halo", d.rank, d.device), d.rank),
            DeviceClass::Coprocessor => g.resource(format!("r{}.{}.link", d.rank, d.device), d.rank),
        };
    }
    let index: BTreeMap<(usize, DeviceRef), usize> =
        w.devices.iter().enumerate().map(|(i, d)| ((d.rank, d.device), i)).collect();
    let comm: Vec<usize> = (0..w.ranks).map(|r| g.resource(format!("r{r}.comm"), r)).collect();
    let nic: Vec<usize> = (0..w.ranks).map(|r| g.resource(format!("r{r}.nic"), r)).collect();
    let serial = schedule == Schedule::Serialized;
    let cop_model = params.models.get(DeviceClass::Coprocessor);
    let cpu_model = params.models.get(DeviceClass::Cpu);
    let spec = cop_model.link.unwrap_or_default();
    let edges = |ops: &[usize]| ops.iter().map(|&o| (o, 0.0)).collect::<Vec<_>>();
    // per rank: the operations that close the previous stage
    let mut barrier: Vec<Vec<usize>> = vec![Vec::new(); w.ranks];

    for _ in 0..params.steps * RK_STAGES {
        let mut arrivals: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); w.ranks];
        for m in &w.messages {
            let dst = index[&(m.dst_rank, m.dst_device)];
            let pack = g.add(comm[m.src_rank], Phase::Send, params.pack_time(m.bytes), edges(&barrier[m.src_rank]));
            let (bw, lat) = if w.node_of_rank[m.src_rank] == w.node_of_rank[m.dst_rank] {
                (params.network.intra_bandwidth, params.network.intra_latency)
            } else {
                (params.network.inter_bandwidth, params.network.inter_latency)
            };
            let wire = g.add(nic[m.src_rank], Phase::Wire, m.bytes as f64 / bw, vec![(pack, 0.0)]);
            outgoing[m.src_rank].push(wire);
            arrivals[dst].push((wire, lat));
        }
        let mut next = Vec::with_capacity(w.ranks);
        for rank in 0..w.ranks {
            let mine: Vec<usize> = (0..n).filter(|&i| w.devices[i].rank == rank).collect();
            let is_cop = |i: &usize| w.devices[*i].device.class == DeviceClass::Coprocessor;
            let start = edges(&barrier[rank]);
            // everything that precedes computing in the serialized order
            let mut exchanged = start.clone();
            exchanged.extend(edges(&outgoing[rank]));
            for &i in &mine {
                exchanged.extend(arrivals[i].iter().copied());
            }
            let base = |extra: Vec<(usize, f64)>| -> Vec<(usize, f64)> {
                let mut d = if serial { exchanged.clone() } else { start.clone() };
                d.extend(extra);
                d
            };
            // received halos: coprocessor blocks on the communication
            // thread, CPU blocks on their device's halo engine
            let mut unpacked = BTreeMap::new();
            for &i in mine.iter().filter(|i| is_cop(i)) {
                if !arrivals[i].is_empty() {
                    let t = params.copy_time(w.devices[i].received_bytes);
                    unpacked.insert(i, g.add_waiting(comm[rank], Phase::Unpack, t, base(arrivals[i].clone())));
                }
            }
            for &i in mine.iter().filter(|i| !is_cop(i)) {
                let t = params.copy_time(w.devices[i].received_bytes);
                unpacked.insert(i, g.add(aux[i], Phase::Unpack, t, base(arrivals[i].clone())));
            }
            let mut uploads = Vec::new();
            for &i in mine.iter().filter(|i| is_cop(i)) {
                let extra = unpacked.get(&i).map(|&u| vec![(u, 0.0)]).unwrap_or_default();
                let mut deps = base(extra);
                if serial {
                    deps.extend(unpacked.values().map(|&u| (u, 0.0)));
                }
                uploads.push((i, g.add(aux[i], Phase::H2d, spec.transfer_time(w.devices[i].h2d_bytes), deps)));
            }
            let mut before_compute = Vec::new();
            if serial {
                before_compute = exchanged.clone();
                before_compute.extend(unpacked.values().map(|&u| (u, 0.0)));
                before_compute.extend(uploads.iter().map(|&(_, u)| (u, 0.0)));
            }
            let mut computed = Vec::new();
            let mut kernels = BTreeMap::new();
            for &(i, up) in &uploads {
                let mut deps = before_compute.clone();
                deps.push((up, 0.0));
                let k = g.add(compute[i], Phase::Kernel, cop_model.stage_time(w.devices[i].cells, RK_STAGES), deps);
                kernels.insert(i, k);
                computed.push(k);
            }
            for &i in mine.iter().filter(|i| !is_cop(i)) {
                let d = &w.devices[i];
                let mut deps = before_compute.clone();
                deps.extend(start.iter().copied());
                let core = g.add(compute[i], Phase::Compute, cpu_model.stage_time(d.core_cells, RK_STAGES), deps);
                let shell = g.add_waiting(
                    compute[i],
                    Phase::Compute,
                    cpu_model.stage_time(d.cells - d.core_cells, RK_STAGES),
                    vec![(core, 0.0), (unpacked[&i], 0.0)],
                );
                computed.push(shell);
            }
            let mut closing = computed.clone();
            for (&i, &k) in &kernels {
                let mut deps = vec![(k, 0.0)];
                if serial {
                    deps.extend(edges(&computed));
                }
                closing.push(g.add(aux[i], Phase::D2h, spec.transfer_time(w.devices[i].d2h_bytes), deps));
            }
            let mut done = edges(&closing);
            done.extend(edges(&outgoing[rank]));
            let mut stage_end = closing.clone();
            for &i in mine.iter().filter(|i| !is_cop(i)) {
                let t = params.copy_time(w.devices[i].fill_bytes);
                stage_end.push(g.add(aux[i], Phase::Reconcile, t, done.clone()));
            }
            stage_end.extend(outgoing[rank].iter().copied());
            next.push(stage_end);
        }
        barrier = next;
    }
    g
}

/// Scheduled timeline of `params.steps` steps.
pub fn model_timeline(w: &Workload, params: &ModelParams, schedule: Schedule) -> Timeline {
    build_graph(w, params, schedule).schedule()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    /// Seconds per full step.
    pub step_time: f64,
    pub serialized_step_time: f64,
    pub mcups: f64,
    pub report: TimelineReport,
}

pub fn evaluate(plan: &PartitionPlan, hp: &HaloPlan, params: &ModelParams) -> Result<(ModelResult, Timeline)> {
    params.validate()?;
    let w = workload(plan, hp);
    let over = model_timeline(&w, params, Schedule::Overlapped);
    let ser = model_timeline(&w, params, Schedule::Serialized);
    let steps = params.steps as f64;
    let step_time = over.makespan / steps;
    Ok((
        ModelResult {
            step_time,
            serialized_step_time: ser.makespan / steps,
            mcups: if step_time > 0.0 { w.total_cells as f64 / step_time / 1e6 } else { 0.0 },
            report: over.report(),
        },
        over,
    ))
}

/// Desk-scale analog of the CompCorner case: a chain of nodes along x, each
/// holding five blocks (CPU, three coprocessor, CPU) of a wedge-wall box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CornerAnalog {
    pub nodes: usize,
    /// Cells along y and z.
    pub cross: [usize; 2],
    pub cells_per_node: usize,
    /// Inflow Mach number; the default is synthetic.
    pub mach: f64,
    /// Inflow deflection towards the wall, degrees; also synthetic.
    pub wedge_deg: f64,
}

impl Default for CornerAnalog {
    fn default() -> Self {
        Self {
            nodes: 16,
            cross: [16, 16],
            cells_per_node: 40_000,
            mach: 3.0,
            wedge_deg: 10.0,
        }
    }
}

pub const CORNER_CPUS: usize = 2;
pub const CORNER_COPROCESSORS: usize = 3;

impl CornerAnalog {
    /// Cells along x per node.
    pub fn node_length(&self) -> usize {
        (self.cells_per_node / (self.cross[0] * self.cross[1])).max(5)
    }

    /// x lengths of the CPU and coprocessor blocks for load ratio `r`.
    pub fn block_lengths(&self, r: f64) -> (usize, usize) {
        let l = self.node_length() as f64;
        let lc = (l / (CORNER_CPUS as f64 + CORNER_COPROCESSORS as f64 * r)).round().max(1.0);
        let lp = (r * lc).round().max(1.0);
        (lc as usize, lp as usize)
    }

    pub fn inflow(&self, gas: &GasModel) -> PrimitiveState {
        let a = self.wedge_deg.to_radians();
        let p = 1.0 / gas.gamma;
        PrimitiveState::new(1.0, self.mach * a.cos(), -self.mach * a.sin(), 0.0, p)
    }

    /// Zone of `length` cells along x: inflow at x-low, outflow at x-high and
    /// y-high, slip walls at y-low and on both z faces.
    pub fn zone(&self, length: usize, gas: &GasModel) -> ZoneSpec {
        let mut faces = Faces::all(Boundary::Extrapolation);
        faces.xlo = Boundary::inflow(self.inflow(gas));
        faces.ylo = Boundary::SlipWall;
        faces.zlo = Boundary::SlipWall;
        faces.zhi = Boundary::SlipWall;
        let cells = [length, self.cross[0], self.cross[1]];
        let h = 1.0 / self.cross[0] as f64;
        ZoneSpec {
            cells,
            origin: [0.0; 3],
            length: cells.map(|n| n as f64 * h),
            faces,
        }
    }

    pub fn decomposition(&self, r: f64) -> Decomposition {
        let (lc, lp) = self.block_lengths(r);
        let mut xs = Vec::new();
        for _ in 0..self.nodes {
            xs.extend([lc, lp, lp, lp, lc]);
        }
        Decomposition::from_sizes([xs, vec![self.cross[0]], vec![self.cross[1]]])
    }

    pub fn topology(&self, coprocessors: bool) -> NodeTopology {
        NodeTopology {
            nodes: self.nodes,
            ranks_per_node: 1,
            cpu_devices: CORNER_CPUS,
            coprocessor_devices: if coprocessors { CORNER_COPROCESSORS } else { 0 },
            workers_per_device: 1,
        }
    }

    /// One rank per node. With coprocessors the chain ends go to the two CPU
    /// devices and the middle blocks to the coprocessors; without, blocks are
    /// packed onto the CPUs by size.
    pub fn plan(&self, r: f64, coprocessors: bool, gas: &GasModel) -> Result<PartitionPlan> {
        let dec = self.decomposition(r);
        let length = dec.cuts[0].last().copied().unwrap_or(0) as usize;
        let zone = self.zone(length, gas);
        let ratio = if coprocessors { r } else { 1.0 };
        let mut plan = regroup_blocks(&zone, &dec, self.nodes, &self.topology(coprocessors), ratio)?;
        if coprocessors {
            let per = CORNER_CPUS + CORNER_COPROCESSORS;
            for g in plan.groups.iter_mut() {
                let local = match g.device.class {
                    DeviceClass::Cpu => [0, per - 1][g.device.index],
                    DeviceClass::Coprocessor => 1 + g.device.index,
                };
                let b = (g.rank * per + local) as u32;
                g.blocks = vec![b];
                g.cells = plan.blocks[b as usize].cells.volume();
            }
            plan.validate()?;
        }
        Ok(plan)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub ratio: f64,
    pub mcups: f64,
    pub step_time: f64,
    pub serialized_step_time: f64,
    pub hidden_fraction: f64,
}

/// One modelled run per ratio; `plan_for` builds the partition at a ratio.
pub fn sweep_ratio(
    ratios: &[f64],
    params: &ModelParams,
    gas: &GasModel,
    plan_for: impl Fn(f64) -> Result<PartitionPlan>,
) -> Result<Vec<RatioPoint>> {
    ratios
        .iter()
        .map(|&ratio| {
            let plan = plan_for(ratio)?;
            let hp = crate::exchange::build_halo_plan(&plan, gas)?;
            let (m, _) = evaluate(&plan, &hp, params)?;
            Ok(RatioPoint {
                ratio,
                mcups: m.mcups,
                step_time: m.step_time,
                serialized_step_time: m.serialized_step_time,
                hidden_fraction: m.report.hidden_fraction,
            })
        })
        .collect()
}

/// Ratio with the highest MCUPS; the first one on ties.
pub fn argmax(points: &[RatioPoint]) -> Option<f64> {
    points
        .iter()
        .fold(None::<&RatioPoint>, |best, p| match best {
            Some(b) if b.mcups >= p.mcups => Some(b),
            _ => Some(p),
        })
        .map(|p| p.ratio)
}

/// Ratios `lo, lo + step, ..` up to `hi` inclusive.
pub fn ratio_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9).collect()
}

/// When each device has all halos from other ranks unpacked, measured from
/// the start of a stage: packs run back to back on the sender's
/// communication thread, wires back to back on its network interface.
pub fn halo_arrivals(w: &Workload, params: &ModelParams) -> Vec<f64> {
    let mut comm = vec![0.0f64; w.ranks];
    let mut nic = vec![0.0f64; w.ranks];
    let mut arrive = vec![0.0f64; w.devices.len()];
    for m in &w.messages {
        comm[m.src_rank] += params.pack_time(m.bytes);
        let (bw, lat) = if w.node_of_rank[m.src_rank] == w.node_of_rank[m.dst_rank] {
            (params.network.intra_bandwidth, params.network.intra_latency)
        } else {
            (params.network.inter_bandwidth, params.network.inter_latency)
        };
        nic[m.src_rank] = nic[m.src_rank].max(comm[m.src_rank]) + m.bytes as f64 / bw;
        let i = w
            .devices
            .iter()
            .position(|d| d.rank == m.dst_rank && d.device == m.dst_device)
            .expect("destination device");
        arrive[i] = arrive[i].max(nic[m.src_rank] + lat);
    }
    for (i, d) in w.devices.iter().enumerate() {
        if d.received_bytes > 0 {
            arrive[i] += params.copy_time(d.received_bytes);
        }
    }
    arrive
}

/// Ratio at which the CPU path and the coprocessor path of one stage take
/// equally long, with block lengths treated as continuous. A CPU block of
/// `C = N / (2 + 3r)` cells computes its core, waits for its remote halos,
/// then computes the rest; a coprocessor uploads, computes `r C` cells and
/// downloads. Transfer sizes do not depend on `r` and are taken from the
/// plan at `r = 1`.
pub fn balance_ratio(analog: &CornerAnalog, params: &ModelParams, gas: &GasModel) -> Result<f64> {
    let plan = analog.plan(1.0, true, gas)?;
    let hp = crate::exchange::build_halo_plan(&plan, gas)?;
    let w = workload(&plan, &hp);
    let cpu = params.models.get(DeviceClass::Cpu);
    let cop = params.models.get(DeviceClass::Coprocessor);
    let spec = cop.link.unwrap_or_default();
    let arrive = halo_arrivals(&w, params);
    let mut halo = 0.0f64;
    let mut transfers = 0.0f64;
    for (i, d) in w.devices.iter().enumerate() {
        match d.device.class {
            DeviceClass::Cpu => halo = halo.max(arrive[i]),
            DeviceClass::Coprocessor => {
                transfers = transfers.max(spec.transfer_time(d.h2d_bytes) + spec.transfer_time(d.d2h_bytes))
            }
        }
    }
    let [ny, nz] = analog.cross;
    let area = (ny * nz) as f64;
    let n = analog.node_length() as f64 * area;
    let reach = 2 * plan.halo;
    let stages = RK_STAGES as f64;
    let gap = |r: f64| {
        let c = n / (CORNER_CPUS as f64 + CORNER_COPROCESSORS as f64 * r);
        let core = (c / area - reach as f64).max(0.0) * area;
        let t = |cells: f64| cells / cpu.throughput / stages;
        let a = t(core).max(halo) + t(c - core);
        let b = transfers + r * c / cop.throughput / stages;
        a - b
    };
    let (mut lo, mut hi) = (1e-6, 1e3);
    if gap(lo) <= 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub ratio: f64,
    pub hetero_mcups: f64,
    pub cpu_only_mcups: f64,
    pub speedup: f64,
}

/// Heterogeneous against CPU-only MCUPS on the same grid and blocks.
pub fn corner_speedup(analog: &CornerAnalog, params: &ModelParams, gas: &GasModel, r: f64) -> Result<Speedup> {
    let run = |cops: bool| -> Result<f64> {
        let plan = analog.plan(r, cops, gas)?;
        let hp = crate::exchange::build_halo_plan(&plan, gas)?;
        Ok(evaluate(&plan, &hp, params)?.0.mcups)
    };
    let h = run(true)?;
    let c = run(false)?;
    Ok(Speedup {
        ratio: r,
        hetero_mcups: h,
        cpu_only_mcups: c,
        speedup: h / c,
    })
}
