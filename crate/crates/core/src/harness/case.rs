//! Case files: everything needed to set up and run one configuration.

use std::f64::consts::PI;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchange::{ExchangeOptions, LinkModel};
use crate::gas::{GasModel, PrimitiveState};
use crate::hetero::{CornerAnalog, DeviceModels, CORNER_COPROCESSORS, CORNER_CPUS};
use crate::integrator::{TimeControls, Tiling};
use crate::partition::{
    regroup_blocks, round_robin_blocks, split_zone, Boundary, Faces, NodeTopology, PartitionPlan, SplitTarget,
    ZoneSpec,
};
use crate::runtime::RunOptions;

pub const CASE_VERSION: u32 = 1;

/// Initial state of the zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Uniform {
        rho: f64,
        u: f64,
        v: f64,
        w: f64,
        p: f64,
    },
    /// `rho = 1 + amplitude sin(2 pi k.(x - u t))` at uniform velocity and
    /// pressure; an exact solution of the Euler equations.
    DensityWave {
        amplitude: f64,
        wavevector: [f64; 3],
        velocity: [f64; 3],
        pressure: f64,
    },
    /// Two states `(rho, u, p)` split at `position` along `axis`.
    Riemann {
        axis: usize,
        position: f64,
        left: [f64; 3],
        right: [f64; 3],
    },
    /// The inflow state of the CompCorner analog everywhere.
    Corner,
}

impl InitialCondition {
    pub fn sod() -> Self {
        InitialCondition::Riemann {
            axis: 0,
            position: 0.5,
            left: [1.0, 0.0, 1.0],
            right: [0.125, 0.0, 0.1],
        }
    }

    /// State at point `x` and time `t` when the exact solution is known.
    pub fn exact(&self, x: [f64; 3], t: f64) -> Option<PrimitiveState> {
        match *self {
            InitialCondition::Uniform { rho, u, v, w, p } => Some(PrimitiveState::new(rho, u, v, w, p)),
            InitialCondition::DensityWave {
                amplitude,
                wavevector: k,
                velocity: u,
                pressure,
            } => {
                let phase: f64 = (0..3).map(|d| k[d] * (x[d] - u[d] * t)).sum();
                let rho = 1.0 + amplitude * (2.0 * PI * phase).sin();
                Some(PrimitiveState::new(rho, u[0], u[1], u[2], pressure))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Split into `blocks` and regroup them onto ranks and devices.
    Regroup,
    /// Split into `blocks` and deal them out to ranks in turn.
    RoundRobin,
    /// The fixed five-blocks-per-node chain of the CompCorner analog.
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub strategy: Strategy,
    pub blocks: usize,
    pub ranks: usize,
    /// Work per coprocessor over work per CPU device.
    pub load_ratio: f64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::Regroup,
            blocks: 1,
            ranks: 1,
            load_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputOptions {
    /// Write a field dump after the run.
    pub dump: bool,
    /// Timed repetitions; the fastest is reported.
    pub best_of: usize,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self { dump: true, best_of: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub version: u32,
    pub name: String,
    pub zone: ZoneSpec,
    #[serde(default)]
    pub gas: GasModel,
    pub initial: InitialCondition,
    /// Relative amplitude of seeded density noise added to the initial state.
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub time: TimeControls,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub topology: NodeTopology,
    #[serde(default)]
    pub devices: DeviceModels,
    #[serde(default = "ExchangeOptions::tuned")]
    pub exchange: ExchangeOptions,
    #[serde(default)]
    pub network: LinkModel,
    /// Residual tiles; whole regions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiling: Option<Tiling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corner: Option<CornerAnalog>,
    #[serde(default)]
    pub output: OutputOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    Uniform,
    DensityWave,
    Sod,
    Corner,
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CaseKind::Uniform),
            "density-wave" => Ok(CaseKind::DensityWave),
            "sod" => Ok(CaseKind::Sod),
            "corner" => Ok(CaseKind::Corner),
            _ => Err(Error::Config(format!(
                "unsupported case kind {s:?}; expected uniform, density-wave, sod or corner"
            ))),
        }
    }
}

/// Generate a case. `size` is the cells per axis of the periodic cubes, the
/// tube length of `sod` and the cells per node of `corner` (which uses
/// `blocks` as its node count).
pub fn gen_case(kind: CaseKind, size: usize, blocks: usize) -> Result<CaseFile> {
    if size == 0 || blocks == 0 {
        return Err(Error::Config("a case needs at least one cell and one block".into()));
    }
    let gas = GasModel::default();
    let mut case = CaseFile {
        version: CASE_VERSION,
        name: String::new(),
        zone: ZoneSpec::periodic_cube(size, 1.0),
        gas,
        initial: InitialCondition::Corner,
        perturbation: 0.0,
        seed: 0,
        time: TimeControls::default(),
        partition: PartitionSpec {
            blocks,
            ..PartitionSpec::default()
        },
        topology: NodeTopology::default(),
        devices: DeviceModels::default(),
        exchange: ExchangeOptions::tuned(),
        network: LinkModel::default(),
        tiling: None,
        corner: None,
        output: OutputOptions::default(),
    };
    match kind {
        CaseKind::Uniform => {
            case.name = format!("uniform-{size}");
            case.initial = InitialCondition::Uniform {
                rho: 1.0,
                u: 0.5,
                v: -0.3,
                w: 0.2,
                p: 1.0 / gas.gamma,
            };
        }
        CaseKind::DensityWave => {
            case.name = format!("density-wave-{size}");
            case.initial = InitialCondition::DensityWave {
                amplitude: 0.2,
                wavevector: [1.0, 1.0, 1.0],
                velocity: [1.0, 1.0, 1.0],
                pressure: 1.0,
            };
        }
        CaseKind::Sod => {
            // a tube along x; the one-cell periodic cross-section carries
            // no variation, so the case is the tube extruded in y and z
            case.name = format!("sod-{size}");
            let h = 1.0 / size as f64;
            let mut faces = Faces::all(Boundary::Periodic);
            faces.xlo = Boundary::Extrapolation;
            faces.xhi = Boundary::Extrapolation;
            case.zone = ZoneSpec {
                cells: [size, 1, 1],
                origin: [0.0; 3],
                length: [1.0, h, h],
                faces,
            };
            case.initial = InitialCondition::sod();
            case.time.end_time = Some(0.2);
            case.time.max_iters = 10_000;
            case.time.convergence_tol = 0.0;
        }
        CaseKind::Corner => {
            let analog = CornerAnalog {
                nodes: blocks,
                cells_per_node: size,
                ..CornerAnalog::default()
            };
            let plan = analog.plan(0.7, true, &gas)?;
            case.name = format!("corner-{blocks}x{size}");
            case.zone = plan.zone.clone();
            case.partition = PartitionSpec {
                strategy: Strategy::Corner,
                blocks: plan.blocks.len(),
                ranks: analog.nodes,
                load_ratio: 0.7,
            };
            case.topology = analog.topology(true);
            case.corner = Some(analog);
        }
    }
    case.validate()?;
    Ok(case)
}

impl CaseFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let case: CaseFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CASE_VERSION {
            return Err(Error::Config(format!(
                "case version {} is not supported; expected {CASE_VERSION}",
                self.version
            )));
        }
        self.zone.validate()?;
        self.time.validate()?;
        self.devices.validate()?;
        self.topology.validate()?;
        let p = &self.partition;
        if p.blocks == 0 || p.ranks == 0 {
            return Err(Error::Config("partition needs at least one block and one rank".into()));
        }
        if !(p.load_ratio > 0.0) {
            return Err(Error::Config(format!("load ratio must be positive, got {}", p.load_ratio)));
        }
        if !(self.perturbation >= 0.0 && self.perturbation < 1.0) {
            return Err(Error::Config(format!(
                "perturbation must lie in [0, 1), got {}",
                self.perturbation
            )));
        }
        if self.output.best_of == 0 {
            return Err(Error::Config("best-of count must be at least 1".into()));
        }
        match self.initial {
            InitialCondition::Uniform { rho, p, .. } if !(rho > 0.0 && p > 0.0) => {
                Err(Error::Config("uniform state needs positive rho and p".into()))
            }
            InitialCondition::DensityWave { amplitude, pressure, .. } if !(amplitude.abs() < 1.0 && pressure > 0.0) => {
                Err(Error::Config("density wave needs |amplitude| < 1 and positive pressure".into()))
            }
            InitialCondition::Riemann { axis, left, right, .. } if axis > 2 || !positive(left) || !positive(right) => {
                Err(Error::Config("Riemann setup needs an axis below 3 and positive rho and p".into()))
            }
            InitialCondition::Corner if self.corner.is_none() => {
                Err(Error::Config("corner initial state needs a [corner] section".into()))
            }
            _ if p.strategy == Strategy::Corner && self.corner.is_none() => {
                Err(Error::Config("corner partition needs a [corner] section".into()))
            }
            _ => Ok(()),
        }
    }

    /// Initial primitive state as a function of position.
    pub fn initializer(&self) -> impl Fn([f64; 3]) -> PrimitiveState + Sync + '_ {
        let noise = self.noise();
        let h = self.zone.spacing();
        let inflow = self.corner.map(|c| c.inflow(&self.gas));
        move |x: [f64; 3]| {
            let mut w = match self.initial {
                InitialCondition::Riemann {
                    axis,
                    position,
                    left,
                    right,
                } => {
                    let [rho, u, p] = if x[axis] < position { left } else { right };
                    let mut vel = [0.0; 3];
                    vel[axis] = u;
                    PrimitiveState::new(rho, vel[0], vel[1], vel[2], p)
                }
                InitialCondition::Corner => inflow.expect("validated"),
                _ => self.initial.exact(x, 0.0).expect("known state"),
            };
            if let Some(noise) = &noise {
                let c: [usize; 3] = std::array::from_fn(|d| ((x[d] - self.zone.origin[d]) / h[d]).floor() as usize);
                let n = self.zone.cells;
                w.rho *= 1.0 + noise[c[0] + n[0] * (c[1] + n[1] * c[2])];
            }
            w
        }
    }

    /// One seeded value per zone cell in `[-perturbation, perturbation]`,
    /// or nothing without perturbation.
    fn noise(&self) -> Option<Vec<f64>> {
        if self.perturbation == 0.0 {
            return None;
        }
        let mut rng = StdRng::seed_from_u64(self.seed);
        let a = self.perturbation;
        Some((0..self.zone.total_cells()).map(|_| rng.random_range(-a..=a)).collect())
    }

    /// The partition plan the case describes.
    pub fn plan(&self) -> Result<PartitionPlan> {
        let p = &self.partition;
        let plan = match p.strategy {
            Strategy::Corner => {
                let analog = self.corner.expect("validated");
                let cops = self.topology.coprocessor_devices > 0;
                let plan = analog.plan(p.load_ratio, cops, &self.gas)?;
                if plan.zone.cells != self.zone.cells {
                    return Err(Error::Config(format!(
                        "corner blocks at ratio {} span {:?} cells but the zone has {:?}",
                        p.load_ratio, plan.zone.cells, self.zone.cells
                    )));
                }
                PartitionPlan {
                    zone: self.zone.clone(),
                    ..plan
                }
            }
            Strategy::Regroup | Strategy::RoundRobin => {
                let dec = split_zone(&self.zone, SplitTarget::Blocks(p.blocks))?;
                if p.strategy == Strategy::Regroup {
                    regroup_blocks(&self.zone, &dec, p.ranks, &self.topology, p.load_ratio)?
                } else {
                    round_robin_blocks(&self.zone, &dec, p.ranks, &self.topology)?
                }
            }
        };
        Ok(plan)
    }

    /// Change the load ratio; corner cases resize their zone to match.
    pub fn set_load_ratio(&mut self, r: f64) -> Result<()> {
        self.partition.load_ratio = r;
        if let (Strategy::Corner, Some(analog)) = (self.partition.strategy, self.corner) {
            let cops = self.topology.coprocessor_devices > 0;
            self.zone = analog.plan(r, cops, &self.gas)?.zone;
        }
        self.validate()
    }

    /// Run on `ranks` ranks, adding nodes as needed. Corner cases get one
    /// node per rank and grow their zone with it.
    pub fn set_ranks(&mut self, ranks: usize) -> Result<()> {
        self.partition.ranks = ranks;
        self.topology.nodes = ranks.div_ceil(self.topology.ranks_per_node.max(1));
        if let (Strategy::Corner, Some(mut analog)) = (self.partition.strategy, self.corner) {
            analog.nodes = ranks;
            self.corner = Some(analog);
            let workers = self.topology.workers_per_device;
            self.topology = analog.topology(self.topology.coprocessor_devices > 0);
            self.topology.workers_per_device = workers;
            self.set_load_ratio(self.partition.load_ratio)?;
            self.partition.blocks = ranks * (CORNER_CPUS + CORNER_COPROCESSORS);
        }
        self.validate()
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            exchange: self.exchange,
            models: self.devices,
            tiling: self.tiling.unwrap_or_default(),
            link: self.network,
            ..RunOptions::default()
        }
    }

    /// Check that `plan` covers this case's zone.
    pub fn check_plan(&self, plan: &PartitionPlan) -> Result<()> {
        plan.validate()?;
        if plan.zone.cells != self.zone.cells || plan.zone.faces != self.zone.faces {
            return Err(Error::Config(format!(
                "plan zone {:?} does not match the case zone {:?}",
                plan.zone.cells, self.zone.cells
            )));
        }
        Ok(())
    }
}

fn positive(s: [f64; 3]) -> bool {
    s[0] > 0.0 && s[2] > 0.0
}
