//! Running a partitioned case: one solver per rank, each on its own thread,
//! connected by a transport.
//!
//! Reported times are virtual (see [`crate::clock`]): measured thread CPU
//! time, scheduled on the modelled workers of each device, plus the modelled
//! cost of messages and host links. Wall time is reported alongside.

pub mod offload;
pub mod rank;

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::Turn;
use crate::error::{Error, Result};
use crate::exchange::{
    build_halo_plan, comm_stats, in_process_network, CommStats, EpochStats, ExchangeOptions, HaloPlan, LinkModel,
    TcpEndpoint, Transport,
};
use crate::gas::GasModel;
use crate::grid::BlockField;
use crate::hetero::{DeviceModels, Interval, Resource, Timeline, TransferStats};
use crate::integrator::{iterate, IterationSummary, TimeControls, Tiling};
use crate::partition::PartitionPlan;

pub use offload::Offload;
pub use rank::{InitFn, RankMetrics, RankSolver, RankTimeline};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub exchange: ExchangeOptions,
    /// Device models; `cpu.workers` is the worker count of every CPU device.
    pub models: DeviceModels,
    pub tiling: Tiling,
    pub link: LinkModel,
    /// How long a rank waits for a message before giving up.
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            exchange: ExchangeOptions::tuned(),
            models: DeviceModels::default(),
            tiling: Tiling::default(),
            link: LinkModel::default(),
            timeout: Duration::from_secs(120),
        }
    }
}

impl RunOptions {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.models.cpu.workers = workers;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    InProcess,
    Tcp,
}

/// Result of a run, merged over ranks.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Every block of the zone.
    pub fields: BTreeMap<u32, BlockField>,
    pub summary: IterationSummary,
    pub total_cells: usize,
    /// Wall seconds of the main loop, slowest rank.
    pub wall_time: f64,
    /// Virtual seconds of the main loop, slowest rank.
    pub virtual_time: f64,
    /// Virtual seconds of each step, slowest rank.
    pub step_times: Vec<f64>,
    /// Exchange counters summed over ranks.
    pub exchange: EpochStats,
    /// Virtual computation seconds summed over ranks.
    pub comp_time: f64,
    pub ranks: Vec<RankMetrics>,
    /// Heterogeneous runs: every stage of every rank placed on its devices.
    pub timeline: Option<Timeline>,
    pub serialized_timeline: Option<Timeline>,
}

impl RunOutput {
    /// Million cell updates per second of wall time.
    pub fn mcups(&self) -> f64 {
        mcups(self.total_cells, self.summary.iterations, self.wall_time)
    }

    pub fn virtual_mcups(&self) -> f64 {
        mcups(self.total_cells, self.summary.iterations, self.virtual_time)
    }

    pub fn comm(&self) -> CommStats {
        comm_stats(&self.exchange, self.comp_time)
    }

    pub fn transfers(&self) -> TransferStats {
        let mut t = TransferStats::default();
        for r in &self.ranks {
            t.hits += r.transfers.hits;
            t.to_device += r.transfers.to_device;
            t.to_host += r.transfers.to_host;
            t.bytes_to_device += r.transfers.bytes_to_device;
            t.bytes_to_host += r.transfers.bytes_to_host;
        }
        t
    }
}

/// `cells * iterations / seconds / 1e6`; zero for no time.
pub fn mcups(cells: usize, iterations: usize, seconds: f64) -> f64 {
    if seconds > 0.0 {
        cells as f64 * iterations as f64 / seconds / 1.0e6
    } else {
        0.0
    }
}

struct RankResult {
    fields: BTreeMap<u32, BlockField>,
    summary: IterationSummary,
    wall: f64,
    virtual_time: f64,
    metrics: RankMetrics,
    timeline: RankTimeline,
}

fn run_rank<'a>(
    plan: &'a PartitionPlan,
    hp: &'a HaloPlan,
    gas: &GasModel,
    init: &InitFn,
    controls: &TimeControls,
    opts: &RunOptions,
    rank: usize,
    transport: Box<dyn Transport + 'a>,
    take_turns: bool,
) -> Result<RankResult> {
    let _turn = Turn::take(take_turns);
    let mut solver = RankSolver::new(plan, hp, gas, init, rank, transport, opts)?;
    solver.warm_up()?;
    let t0 = Instant::now();
    let v0 = solver.clock;
    let summary = iterate(&mut solver, controls, |rec| {
        if rank == 0 {
            log::debug!("step {} dt {:.3e} residual {:.3e}", rec.iteration, rec.dt, rec.residual_norm);
        }
    })?;
    let wall = t0.elapsed().as_secs_f64();
    let virtual_time = solver.clock - v0;
    solver.finish()?;
    Ok(RankResult {
        summary,
        wall,
        virtual_time,
        metrics: solver.metrics.clone(),
        timeline: std::mem::take(&mut solver.timeline),
        fields: std::mem::take(&mut solver.fields),
    })
}

/// More rank threads than cores: ranks take turns instead of time sharing.
fn oversubscribed(plan: &PartitionPlan, opts: &RunOptions) -> bool {
    let threads = plan.ranks * opts.models.cpu.workers.max(opts.models.coprocessor.workers);
    threads > std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Listeners on loopback ports for a local TCP mesh.
fn loopback_mesh(ranks: usize) -> Result<(Vec<TcpListener>, Vec<SocketAddr>)> {
    let listeners = (0..ranks)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<Vec<_>>>()?;
    let addrs = listeners.iter().map(|l| l.local_addr()).collect::<std::io::Result<Vec<_>>>()?;
    Ok((listeners, addrs))
}

/// Run `plan` with one thread per rank.
pub fn run(
    plan: &PartitionPlan,
    gas: &GasModel,
    init: &InitFn,
    controls: &TimeControls,
    opts: &RunOptions,
    transport: TransportKind,
) -> Result<RunOutput> {
    plan.validate()?;
    controls.validate()?;
    opts.models.validate()?;
    let hp = build_halo_plan(plan, gas)?;
    let hp = &hp;
    let take_turns = oversubscribed(plan, opts);
    let results: Vec<Result<RankResult>> = match transport {
        TransportKind::InProcess => {
            let eps = in_process_network(plan.ranks, opts.link, plan.rank_nodes.clone(), opts.timeout);
            std::thread::scope(|s| {
                let handles: Vec<_> = eps
                    .into_iter()
                    .enumerate()
                    .map(|(rank, ep)| {
                        s.spawn(move || run_rank(plan, hp, gas, init, controls, opts, rank, Box::new(ep), take_turns))
                    })
                    .collect();
                handles.into_iter().map(join).collect()
            })
        }
        TransportKind::Tcp => {
            let (listeners, addrs) = loopback_mesh(plan.ranks)?;
            let addrs = &addrs;
            std::thread::scope(|s| {
                let handles: Vec<_> = listeners
                    .into_iter()
                    .enumerate()
                    .map(|(rank, l)| {
                        s.spawn(move || {
                            let ep = TcpEndpoint::connect_with(rank, l, addrs, opts.timeout)?;
                            run_rank(plan, hp, gas, init, controls, opts, rank, Box::new(ep), take_turns)
                        })
                    })
                    .collect();
                handles.into_iter().map(join).collect()
            })
        }
    };
    merge(plan, results)
}

/// Run in-process; the usual entry point.
pub fn run_in_process(
    plan: &PartitionPlan,
    gas: &GasModel,
    init: &InitFn,
    controls: &TimeControls,
    opts: &RunOptions,
) -> Result<RunOutput> {
    run(plan, gas, init, controls, opts, TransportKind::InProcess)
}

/// Run a single rank of `plan` in this process, connected over TCP to the
/// other ranks at `addrs`. Returns that rank's blocks and counters.
pub fn run_tcp_rank(
    plan: &PartitionPlan,
    gas: &GasModel,
    init: &InitFn,
    controls: &TimeControls,
    opts: &RunOptions,
    rank: usize,
    addrs: &[SocketAddr],
) -> Result<RunOutput> {
    if addrs.len() != plan.ranks || rank >= plan.ranks {
        return Err(Error::Config(format!(
            "rank {rank} with {} peer addresses for a {}-rank plan",
            addrs.len(),
            plan.ranks
        )));
    }
    let hp = build_halo_plan(plan, gas)?;
    let ep = TcpEndpoint::connect(rank, addrs, opts.timeout)?;
    let r = run_rank(plan, &hp, gas, init, controls, opts, rank, Box::new(ep), false)?;
    let mut out = merge(plan, vec![Ok(r)])?;
    out.total_cells = plan.total_cells();
    Ok(out)
}

fn join(h: std::thread::ScopedJoinHandle<'_, Result<RankResult>>) -> Result<RankResult> {
    h.join().unwrap_or_else(|_| Err(Error::Config("a rank thread panicked".into())))
}

fn merge(plan: &PartitionPlan, results: Vec<Result<RankResult>>) -> Result<RunOutput> {
    // a failing rank makes its peers time out; report the root cause
    if results.iter().any(|r| r.is_err()) {
        let mut errs: Vec<Error> = results.into_iter().filter_map(|r| r.err()).collect();
        let root = errs.iter().position(|e| !matches!(e, Error::Transport { .. })).unwrap_or(0);
        return Err(errs.swap_remove(root));
    }
    let results: Vec<RankResult> = results.into_iter().map(|r| r.expect("checked")).collect();
    let mut fields = BTreeMap::new();
    let mut exchange = EpochStats::default();
    let mut comp_time = 0.0;
    let mut wall = 0.0f64;
    let mut virt = 0.0f64;
    let mut steps: Vec<f64> = Vec::new();
    let mut ranks = Vec::new();
    let mut resources: Vec<Resource> = Vec::new();
    let mut over: Vec<Interval> = Vec::new();
    let mut serial: Vec<Interval> = Vec::new();
    let summary = results[0].summary.clone();
    for r in results {
        fields.extend(r.fields);
        exchange.add(&r.metrics.exchange);
        comp_time += r.metrics.comp_time;
        wall = wall.max(r.wall);
        virt = virt.max(r.virtual_time);
        for (i, t) in r.metrics.step_times.iter().enumerate() {
            if i < steps.len() {
                steps[i] = steps[i].max(*t);
            } else {
                steps.push(*t);
            }
        }
        let base = resources.len();
        resources.extend(r.timeline.resources.iter().cloned());
        let shift = |i: &Interval| Interval { resource: i.resource + base, ..*i };
        over.extend(r.timeline.intervals.iter().map(shift));
        serial.extend(r.timeline.serialized.iter().map(shift));
        ranks.push(r.metrics);
    }
    let to_timeline = |intervals: Vec<Interval>| {
        let makespan = intervals.iter().map(|i| i.end).fold(0.0, f64::max);
        Timeline {
            resources: resources.clone(),
            intervals,
            op_end: Vec::new(),
            makespan,
        }
    };
    let hetero = !resources.is_empty();
    Ok(RunOutput {
        fields,
        summary,
        total_cells: plan.total_cells(),
        wall_time: wall,
        virtual_time: virt,
        step_times: steps,
        exchange,
        comp_time,
        ranks,
        timeline: hetero.then(|| to_timeline(over)),
        serialized_timeline: hetero.then(|| to_timeline(serial)),
    })
}
