//! Device models and per-device worker pools.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{DeviceClass, DeviceRef, NodeTopology};

/// Host-device link of a coprocessor. The defaults are synthetic, not
/// measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds per transfer.
    pub latency: f64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            bandwidth: 6.0e9,
            latency: 10.0e-6,
        }
    }
}

impl LinkSpec {
    /// Time to move `bytes` in one transfer; zero bytes cost nothing.
    pub fn transfer_time(&self, bytes: usize) -> f64 {
        if bytes == 0 {
            0.0
        } else {
            self.latency + bytes as f64 / self.bandwidth
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    pub class: DeviceClass,
    pub workers: usize,
    /// Cell updates (full time steps) per second.
    pub throughput: f64,
    /// Required for coprocessors, absent for CPUs.
    pub link: Option<LinkSpec>,
    pub pin_workers: bool,
    /// Device memory in bytes; `None` for unlimited.
    pub memory: Option<usize>,
}

/// Default CPU socket throughput, cell updates per second.
pub const CPU_THROUGHPUT: f64 = 20.0e6;

/// Default coprocessor throughput relative to one CPU socket. With host link
/// transfers charged, the best load ratio of the modelled CompCorner case
/// lands near 0.7.
pub const COPROCESSOR_SPEED: f64 = 1.3;

impl DeviceModel {
    pub fn cpu(workers: usize) -> Self {
        Self {
            class: DeviceClass::Cpu,
            workers,
            throughput: CPU_THROUGHPUT,
            link: None,
            pin_workers: false,
            memory: None,
        }
    }

    pub fn coprocessor(workers: usize) -> Self {
        Self {
            class: DeviceClass::Coprocessor,
            workers,
            throughput: CPU_THROUGHPUT * COPROCESSOR_SPEED,
            link: Some(LinkSpec::default()),
            pin_workers: false,
            memory: Some(8 << 30),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("device needs at least one worker".into()));
        }
        if !(self.throughput > 0.0) {
            return Err(Error::Config(format!("device throughput must be positive, got {}", self.throughput)));
        }
        match (self.class, &self.link) {
            (DeviceClass::Cpu, Some(_)) => Err(Error::Config("a CPU device has no host link".into())),
            (DeviceClass::Coprocessor, None) => Err(Error::Config("a coprocessor needs a host link".into())),
            (_, Some(l)) if !(l.bandwidth > 0.0 && l.latency >= 0.0) => {
                Err(Error::Config("link bandwidth must be positive and latency non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Seconds to advance `cells` cells through one RK stage.
    pub fn stage_time(&self, cells: usize, stages: usize) -> f64 {
        cells as f64 / self.throughput / stages as f64
    }
}

/// Models for the two device classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceModels {
    pub cpu: DeviceModel,
    pub coprocessor: DeviceModel,
}

impl Default for DeviceModels {
    fn default() -> Self {
        Self {
            cpu: DeviceModel::cpu(1),
            coprocessor: DeviceModel::coprocessor(1),
        }
    }
}

impl DeviceModels {
    pub fn get(&self, class: DeviceClass) -> &DeviceModel {
        match class {
            DeviceClass::Cpu => &self.cpu,
            DeviceClass::Coprocessor => &self.coprocessor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cpu.validate()?;
        self.coprocessor.validate()
    }
}

/// A worker pool for one device.
pub struct DevicePool {
    pub device: DeviceRef,
    pub model: DeviceModel,
    pub pool: rayon::ThreadPool,
}

/// Pin the calling thread to `core` modulo the available cores. Best effort.
fn pin_to(core: usize) -> bool {
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    // SAFETY: the set is zero-initialised and only manipulated through the
    // libc helpers before being passed by reference.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        libc::CPU_SET(core % n, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

/// One pool per device of a rank: the rank's devices from `topology`.
/// Oversubscribing the machine logs a warning.
pub fn configure_devices(
    topology: &NodeTopology,
    ranks: usize,
    rank: usize,
    models: &DeviceModels,
) -> Result<Vec<DevicePool>> {
    topology.validate()?;
    models.validate()?;
    let devices = topology.rank_devices(ranks);
    let total: usize = devices.iter().map(|d| models.get(d.class).workers).sum::<usize>() * ranks;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if total > cores {
        log::warn!("{total} workers over {ranks} ranks oversubscribe {cores} cores");
    }
    let mut first_core = rank * devices.iter().map(|d| models.get(d.class).workers).sum::<usize>();
    devices
        .into_iter()
        .map(|device| {
            let model = *models.get(device.class);
            let base = first_core;
            first_core += model.workers;
            let pin = model.pin_workers;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(model.workers)
                .thread_name(move |i| format!("r{rank}-{device}-w{i}"))
                .start_handler(move |i| {
                    if pin && !pin_to(base + i) {
                        log::debug!("could not pin worker {i} of {device}");
                    }
                })
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            Ok(DevicePool { device, model, pool })
        })
        .collect()
}
