//! Time stepping of one rank's blocks.

use std::collections::BTreeMap;

use crate::clock::{list_schedule, measure};
use crate::error::{Error, Result};
use crate::exchange::{EpochStats, HaloExchanger, HaloPlan, Transport};
use crate::exchange::transport::Collectives;
use crate::gas::{conserved_from_primitive, GasModel, PrimitiveState, NVARS};
use crate::grid::{BlockField, IndexBox};
use crate::hetero::{export_boxes, Interval, OpGraph, Phase, Resource, TransferStats};
use crate::integrator::{
    accumulate, active_tasks, apply_stage, core_box, max_signal_speed, plan_units, run_units, snapshot,
    BlockResidual, ResidualField, ResidualInputs, Stepper, TaskUnit, TimeControls, RK_STAGES,
};
use crate::partition::{DeviceClass, DeviceRef, PartitionPlan};
use crate::runtime::offload::Offload;
use crate::runtime::RunOptions;
use crate::scheme::Primitives;

/// Initial condition: primitive state at a physical point.
pub type InitFn<'i> = dyn Fn([f64; 3]) -> PrimitiveState + Sync + 'i;

/// Counters of one rank over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankMetrics {
    pub exchange: EpochStats,
    /// Virtual seconds of residual evaluation, primitive updates and stage
    /// updates, summed over devices.
    pub comp_time: f64,
    /// Virtual seconds of every step.
    pub step_times: Vec<f64>,
    /// Overlapped and serialized stage times of heterogeneous stages.
    pub overlapped_time: f64,
    pub serialized_time: f64,
    /// Host link traffic of the whole run, warm-up and collection included.
    pub transfers: TransferStats,
    /// Host link bytes of every heterogeneous stage.
    pub h2d_per_stage: Vec<usize>,
    pub d2h_per_stage: Vec<usize>,
}

/// Intervals of this rank's heterogeneous stages, on absolute virtual time.
#[derive(Debug, Clone, Default)]
pub struct RankTimeline {
    pub resources: Vec<Resource>,
    pub intervals: Vec<Interval>,
    pub serialized: Vec<Interval>,
}

/// Everything that ran on one device during a stage, in virtual seconds.
#[derive(Debug, Clone, Copy, Default)]
struct DeviceWork {
    core: f64,
    rest: f64,
}

pub struct RankSolver<'a> {
    plan: &'a PartitionPlan,
    gas: GasModel,
    opts: RunOptions,
    rank: usize,
    spacing: [f64; 3],
    active: [bool; 3],
    pub fields: BTreeMap<u32, BlockField>,
    prims: BTreeMap<u32, Primitives>,
    residuals: ResidualField,
    qn: BTreeMap<u32, Vec<f64>>,
    owner: BTreeMap<u32, DeviceRef>,
    /// Units that read no halo, and the rest, per device.
    core_units: BTreeMap<DeviceRef, Vec<TaskUnit>>,
    shell_units: BTreeMap<DeviceRef, Vec<TaskUnit>>,
    transport: Box<dyn Transport + 'a>,
    exchanger: HaloExchanger<'a>,
    collectives: Collectives,
    pool: Option<rayon::ThreadPool>,
    pub offload: Vec<Offload>,
    pub clock: f64,
    pub metrics: RankMetrics,
    pub timeline: RankTimeline,
}

fn device_key(d: &DeviceRef) -> (u8, usize) {
    (matches!(d.class, DeviceClass::Coprocessor) as u8, d.index)
}

impl<'a> RankSolver<'a> {
    pub fn new(
        plan: &'a PartitionPlan,
        hp: &'a HaloPlan,
        gas: &GasModel,
        init: &InitFn,
        rank: usize,
        transport: Box<dyn Transport + 'a>,
        opts: &RunOptions,
    ) -> Result<Self> {
        let spacing = plan.zone.spacing();
        let active = plan.zone.active_axes();
        let owners = plan.block_owners();
        let mut fields = BTreeMap::new();
        let mut owner = BTreeMap::new();
        for id in plan.blocks_of_rank(rank) {
            let cells = plan.blocks[id as usize].cells;
            let mut f = BlockField::new(id, cells.dims(), plan.halo);
            for p in f.interior_box().iter() {
                let x = std::array::from_fn(|d| {
                    plan.zone.origin[d] + ((cells.lo[d] + p[d]) as f64 + 0.5) * spacing[d]
                });
                let q = conserved_from_primitive(&init(x), gas).map_err(|e| e.at_cell(id, p))?;
                f.set_state(p, q.to_array());
            }
            owner.insert(id, owners[id as usize].1);
            fields.insert(id, f);
        }
        let tasks = active_tasks(gas, active);
        let mut core_units: BTreeMap<DeviceRef, Vec<TaskUnit>> = BTreeMap::new();
        let mut shell_units: BTreeMap<DeviceRef, Vec<TaskUnit>> = BTreeMap::new();
        for (id, f) in &fields {
            let core = core_box(f, active, plan.halo);
            let core_regions: Vec<IndexBox> = if core.is_empty() { vec![] } else { vec![core] };
            let shell = f.interior_box().shell_around(&core);
            let dev = owner[id];
            plan_units(*id, &core_regions, opts.tiling, &tasks, core_units.entry(dev).or_default());
            plan_units(*id, &shell, opts.tiling, &tasks, shell_units.entry(dev).or_default());
        }
        let threads = opts.models.cpu.workers.max(opts.models.coprocessor.workers).max(1);
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("r{rank}-w{i}"))
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        let mut offload = Vec::new();
        if plan.groups.iter().any(|g| g.device.class == DeviceClass::Coprocessor) {
            let exports = export_boxes(plan, hp);
            let mut devices: Vec<DeviceRef> = plan
                .groups
                .iter()
                .filter(|g| g.rank == rank && g.device.class == DeviceClass::Coprocessor)
                .map(|g| g.device)
                .collect();
            devices.sort_by_key(device_key);
            devices.dedup();
            for d in devices {
                offload.push(Offload::new(plan, hp, rank, d, opts.models.coprocessor, &exports)?);
            }
        }
        let prims = fields.iter().map(|(id, f)| (*id, Primitives::for_field(f))).collect();
        let residuals = fields.iter().map(|(id, f)| (*id, BlockResidual::zeros(f.dims()))).collect();
        Ok(Self {
            plan,
            gas: *gas,
            opts: opts.clone(),
            rank,
            spacing,
            active,
            fields,
            prims,
            residuals,
            qn: BTreeMap::new(),
            owner,
            core_units,
            shell_units,
            transport,
            exchanger: HaloExchanger::new(hp, rank),
            collectives: Collectives::new(),
            pool,
            offload,
            clock: 0.0,
            metrics: RankMetrics::default(),
            timeline: RankTimeline::default(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_heterogeneous(&self) -> bool {
        !self.offload.is_empty()
    }

    /// Device buffers are allocated in [`RankSolver::new`]; this moves the
    /// initial state onto them, outside the timed loop.
    pub fn warm_up(&mut self) -> Result<usize> {
        let mut moved = 0;
        for o in &mut self.offload {
            moved += o.warm_up()?;
        }
        Ok(moved)
    }

    /// Bring coprocessor results back to the host after the run.
    pub fn finish(&mut self) -> Result<usize> {
        let mut moved = 0;
        for o in &mut self.offload {
            moved += o.collect()?;
            let s = o.stats();
            let t = &mut self.metrics.transfers;
            t.hits += s.hits;
            t.to_device += s.to_device;
            t.to_host += s.to_host;
            t.bytes_to_device += s.bytes_to_device;
            t.bytes_to_host += s.bytes_to_host;
        }
        Ok(moved)
    }

    /// Relative speed of a device: its virtual time is the measured host
    /// time divided by this.
    fn speed(&self, d: DeviceRef) -> f64 {
        self.opts.models.get(d.class).throughput / self.opts.models.cpu.throughput
    }

    fn stage(&mut self, stage: usize, dt: f64) -> Result<f64> {
        let start = self.clock;
        let hetero = self.is_heterogeneous();
        let halo_slabs = |f: &BlockField| f.padded_box().shell_around(&f.interior_box());

        // interior primitives and core residuals, possibly while messages fly
        let mut core_out: BTreeMap<DeviceRef, Vec<(Vec<f64>, f64)>> = BTreeMap::new();
        let mut interior_prims: BTreeMap<DeviceRef, f64> = BTreeMap::new();
        let exch = {
            let Self {
                fields,
                prims,
                exchanger,
                transport,
                core_units,
                pool,
                clock,
                owner,
                gas,
                spacing,
                active,
                opts,
                ..
            } = self;
            let owner = &*owner;
            let core_units = &*core_units;
            let pool = pool.as_ref();
            let (gas, spacing, active) = (*gas, *spacing, *active);
            let workers = |d: DeviceRef| opts.models.get(d.class).workers;
            let speed = |d: DeviceRef| opts.models.get(d.class).throughput / opts.models.cpu.throughput;
            let core_out = &mut core_out;
            let interior_prims = &mut interior_prims;
            exchanger.exchange(fields, transport.as_mut(), opts.exchange, clock, move |fields| {
                for (id, f) in fields {
                    let p = prims.get_mut(id).expect("primitives for every block");
                    let (r, t) = measure(|| p.update(f, &gas, &f.interior_box()));
                    r?;
                    *interior_prims.entry(owner[id]).or_default() += t;
                }
                let inputs = ResidualInputs { fields, prims: &*prims, spacing, gas: &gas, active };
                let mut virt = 0.0f64;
                for (dev, units) in core_units {
                    if hetero && dev.class == DeviceClass::Coprocessor {
                        continue;
                    }
                    let out = run_units(inputs, units, pool)?;
                    let d: Vec<f64> = out.iter().map(|o| o.1).collect();
                    let t = (list_schedule(&d, workers(*dev)) + interior_prims.get(dev).copied().unwrap_or(0.0))
                        / speed(*dev);
                    virt = virt.max(t);
                    core_out.insert(*dev, out);
                }
                Ok(if hetero { 0.0 } else { virt })
            })
        }
        .map_err(|e| e.in_stage(stage))?;
        let exchange_time = self.clock - start;
        self.metrics.exchange.add(&exch);

        // halo primitives, then everything else
        let mut work: BTreeMap<DeviceRef, DeviceWork> = BTreeMap::new();
        for (dev, t) in &interior_prims {
            work.entry(*dev).or_default().core += t;
        }
        for (id, f) in &self.fields {
            let p = self.prims.get_mut(id).expect("primitives for every block");
            let (r, t) = measure(|| -> Result<()> {
                for slab in halo_slabs(f) {
                    p.update(f, &self.gas, &slab)?;
                }
                Ok(())
            });
            r.map_err(|e| e.in_stage(stage))?;
            work.entry(self.owner[id]).or_default().rest += t;
        }
        let inputs = ResidualInputs {
            fields: &self.fields,
            prims: &self.prims,
            spacing: self.spacing,
            gas: &self.gas,
            active: self.active,
        };
        let pool = self.pool.as_ref();
        let no_units = Vec::new();
        let mut batches: Vec<(DeviceRef, bool, &Vec<TaskUnit>, Vec<(Vec<f64>, f64)>)> = Vec::new();
        for (dev, units) in &self.shell_units {
            let core = self.core_units.get(dev).unwrap_or(&no_units);
            if hetero && dev.class == DeviceClass::Coprocessor {
                let out = run_units(inputs, core, pool).map_err(|e| e.in_stage(stage))?;
                batches.push((*dev, true, core, out));
            } else if let Some(out) = core_out.remove(dev) {
                batches.push((*dev, true, core, out));
            }
            let out = run_units(inputs, units, pool).map_err(|e| e.in_stage(stage))?;
            batches.push((*dev, false, units, out));
        }
        for (dev, is_core, units, out) in &batches {
            accumulate(&mut self.residuals, units, out);
            let workers = self.opts.models.get(dev.class).workers;
            let t = list_schedule(&out.iter().map(|o| o.1).collect::<Vec<_>>(), workers);
            let w = work.entry(*dev).or_default();
            // CPU core units already ran inside the exchange
            if *is_core && !(hetero && dev.class == DeviceClass::Coprocessor) {
                w.core += t;
            } else {
                w.rest += t;
            }
        }

        if stage == 0 {
            self.qn = self.fields.iter().map(|(id, f)| (*id, snapshot(f))).collect();
        }
        for (id, f) in self.fields.iter_mut() {
            let ((), t) = measure(|| apply_stage(f, &self.qn[id], &self.residuals[id], stage, dt));
            work.entry(self.owner[id]).or_default().rest += t;
        }
        for (dev, w) in work.iter_mut() {
            let s = self.speed(*dev);
            w.core /= s;
            w.rest /= s;
            self.metrics.comp_time += w.core + w.rest;
        }

        if hetero {
            self.hetero_stage(start, &exch, exchange_time, &work)?;
        } else {
            // core work is already on the clock through the exchange
            let rest = work.values().map(|w| w.rest).fold(0.0, f64::max);
            self.clock += rest;
        }
        Ok(self.clock - start)
    }

    /// Place a heterogeneous stage on the rank's resources and advance the
    /// clock by its makespan.
    fn hetero_stage(&mut self, start: f64, exch: &EpochStats, exchange_time: f64, work: &BTreeMap<DeviceRef, DeviceWork>) -> Result<()> {
        let mut h2d = Vec::new();
        let mut d2h = Vec::new();
        for o in &mut self.offload {
            h2d.push(o.upload()?);
            o.kernel()?;
            d2h.push(o.download()?);
        }
        self.metrics.h2d_per_stage.push(h2d.iter().sum());
        self.metrics.d2h_per_stage.push(d2h.iter().sum());

        let wait = exch.wait_time;
        let pack = exch.pack_time;
        let unpack = (exchange_time - wait - pack).max(0.0);
        let build = |serial: bool| -> OpGraph {
            let mut g = OpGraph::default();
            let rank = self.rank;
            let mut last: Option<usize> = None;
            let mut add = |g: &mut OpGraph, res: usize, phase: Phase, dur: f64, mut deps: Vec<(usize, f64)>| {
                if serial {
                    deps.extend(last.map(|l| (l, 0.0)));
                }
                let id = g.add(res, phase, dur, deps);
                last = Some(id);
                id
            };
            let comm = g.resource(format!("r{rank}.comm"), rank);
            let p = add(&mut g, comm, Phase::Send, pack, vec![]);
            let w = add(&mut g, comm, Phase::Wait, wait, vec![(p, 0.0)]);
            let exchanged = add(&mut g, comm, Phase::Unpack, unpack, vec![(w, 0.0)]);
            for (k, o) in self.offload.iter().enumerate() {
                let dev = g.resource(o.name.clone(), rank);
                let link = g.resource(format!("{}.link", o.name), rank);
                let spec = o.model.link.unwrap_or_default();
                let up = add(&mut g, link, Phase::H2d, spec.transfer_time(h2d[k]), vec![(exchanged, 0.0)]);
                let wk = work.get(&o.device).copied().unwrap_or_default();
                let kern = add(&mut g, dev, Phase::Kernel, wk.core + wk.rest, vec![(up, 0.0)]);
                add(&mut g, link, Phase::D2h, spec.transfer_time(d2h[k]), vec![(kern, 0.0)]);
            }
            for (dev, wk) in work.iter().filter(|(d, _)| d.class == DeviceClass::Cpu) {
                let r = g.resource(format!("r{rank}.{dev}"), rank);
                let c = add(&mut g, r, Phase::Compute, wk.core, vec![]);
                add(&mut g, r, Phase::Compute, wk.rest, vec![(c, 0.0), (exchanged, 0.0)]);
            }
            g
        };
        let over = build(false).schedule();
        let serial = build(true).schedule();
        let serial_start = self.metrics.serialized_time;
        self.metrics.overlapped_time += over.makespan;
        self.metrics.serialized_time += serial.makespan;
        if self.timeline.resources.is_empty() {
            self.timeline.resources = over.resources.clone();
        }
        let shift = |by: f64| move |i: &Interval| Interval { start: i.start + by, end: i.end + by, ..*i };
        self.timeline.intervals.extend(over.intervals.iter().map(shift(start)));
        // the serialized schedule runs on its own clock
        self.timeline.serialized.extend(serial.intervals.iter().map(shift(serial_start)));
        self.clock = start + over.makespan;
        Ok(())
    }

    fn residual_norm_squared(&self) -> f64 {
        self.residuals.values().map(|r| r.sum_squares()).sum()
    }
}

impl Stepper for RankSolver<'_> {
    fn step(&mut self, controls: &TimeControls, max_dt: f64) -> Result<(f64, f64)> {
        let t0 = self.clock;
        let dt = if controls.fixed_dt {
            controls.dt
        } else {
            let (s, t) = measure(|| max_signal_speed(self.fields.values(), &self.gas, self.spacing, self.active));
            self.clock += t;
            let (s, at) = self.collectives.max(self.transport.as_mut(), s?, self.clock)?;
            self.clock = self.clock.max(at);
            if !(s > 0.0) {
                return Err(Error::Config("no signal speed to set a stable step; use a fixed dt".into()));
            }
            controls.cfl / s
        };
        let dt = dt.min(max_dt);
        let mut norm2 = 0.0;
        for stage in 0..RK_STAGES {
            self.stage(stage, dt)?;
            if stage == 0 {
                norm2 = self.residual_norm_squared();
            }
        }
        let (sum, at) = self.collectives.sum(self.transport.as_mut(), vec![norm2], self.clock)?;
        self.clock = self.clock.max(at);
        let cells = self.plan.total_cells() * NVARS;
        self.metrics.step_times.push(self.clock - t0);
        Ok((dt, (sum[0] / cells as f64).sqrt()))
    }
}
