//! Zone description and the boundary-condition ghost mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::PrimitiveState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    /// Zeroth-order extrapolation: ghosts copy the nearest interior cell.
    Extrapolation,
    /// Inviscid wall: ghosts mirror the interior with the normal velocity negated.
    SlipWall,
    /// Ghosts hold a fixed state.
    SupersonicInflow { rho: f64, u: f64, v: f64, w: f64, p: f64 },
}

impl Boundary {
    pub fn inflow(w: PrimitiveState) -> Self {
        Boundary::SupersonicInflow {
            rho: w.rho,
            u: w.u,
            v: w.v,
            w: w.w,
            p: w.p,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Boundary::Periodic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Faces {
    pub xlo: Boundary,
    pub xhi: Boundary,
    pub ylo: Boundary,
    pub yhi: Boundary,
    pub zlo: Boundary,
    pub zhi: Boundary,
}

impl Faces {
    pub fn all(b: Boundary) -> Self {
        Self {
            xlo: b,
            xhi: b,
            ylo: b,
            yhi: b,
            zlo: b,
            zhi: b,
        }
    }

    /// Face on axis `d`, low side when `high` is false.
    pub fn get(&self, d: usize, high: bool) -> &Boundary {
        match (d, high) {
            (0, false) => &self.xlo,
            (0, true) => &self.xhi,
            (1, false) => &self.ylo,
            (1, true) => &self.yhi,
            (2, false) => &self.zlo,
            _ => &self.zhi,
        }
    }

    pub fn set(&mut self, d: usize, high: bool, b: Boundary) {
        let slot = match (d, high) {
            (0, false) => &mut self.xlo,
            (0, true) => &mut self.xhi,
            (1, false) => &mut self.ylo,
            (1, true) => &mut self.yhi,
            (2, false) => &mut self.zlo,
            _ => &mut self.zhi,
        };
        *slot = b;
    }
}

/// A structured zone: a box of cells with one boundary tag per face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub cells: [usize; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub length: [f64; 3],
    pub faces: Faces,
}

/// Where a ghost coordinate along one axis takes its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisSource {
    Cell { src: i64, flip: bool },
    Inflow,
}

impl ZoneSpec {
    pub fn periodic_cube(n: usize, length: f64) -> Self {
        Self {
            cells: [n; 3],
            origin: [0.0; 3],
            length: [length; 3],
            faces: Faces::all(Boundary::Periodic),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..3 {
            if self.cells[d] == 0 {
                return Err(Error::Config(format!("zone extent along axis {d} must be at least 1")));
            }
            if !(self.length[d] > 0.0) {
                return Err(Error::Config(format!("zone length along axis {d} must be positive")));
            }
            let lo = self.faces.get(d, false).is_periodic();
            let hi = self.faces.get(d, true).is_periodic();
            if lo != hi {
                return Err(Error::Config(format!(
                    "periodic faces along axis {d} must come in pairs"
                )));
            }
            for high in [false, true] {
                if let Boundary::SupersonicInflow { rho, p, .. } = self.faces.get(d, high) {
                    if !(*rho > 0.0 && *p > 0.0) {
                        return Err(Error::Config("inflow state needs positive rho and p".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.length[d] / self.cells[d] as f64)
    }

    pub fn is_periodic(&self, d: usize) -> bool {
        self.faces.get(d, false).is_periodic()
    }

    /// Axes along which a residual term is evaluated. A periodic axis one
    /// cell thick carries no variation and is skipped.
    pub fn active_axes(&self) -> [bool; 3] {
        std::array::from_fn(|d| !(self.cells[d] == 1 && self.is_periodic(d)))
    }

    /// Source of global coordinate `x` along axis `d`. Pure function of the
    /// zone, which is what makes halos independent of the partition.
    pub fn axis_source(&self, d: usize, x: i64) -> AxisSource {
        let n = self.cells[d] as i64;
        if (0..n).contains(&x) {
            return AxisSource::Cell { src: x, flip: false };
        }
        let high = x >= n;
        match self.faces.get(d, high) {
            Boundary::Periodic => AxisSource::Cell {
                src: x.rem_euclid(n),
                flip: false,
            },
            Boundary::Extrapolation => AxisSource::Cell {
                src: if high { n - 1 } else { 0 },
                flip: false,
            },
            Boundary::SlipWall => {
                let m = if high { 2 * n - 1 - x } else { -1 - x };
                AxisSource::Cell {
                    src: m.clamp(0, n - 1),
                    flip: true,
                }
            }
            Boundary::SupersonicInflow { .. } => AxisSource::Inflow,
        }
    }

    /// Inflow state of the first inflow face met by a ghost at global `p`,
    /// scanning x, y, z.
    pub fn inflow_state(&self, p: [i64; 3]) -> Option<PrimitiveState> {
        for d in 0..3 {
            let n = self.cells[d] as i64;
            if p[d] < 0 || p[d] >= n {
                if let Boundary::SupersonicInflow { rho, u, v, w, p: pr } = self.faces.get(d, p[d] >= n) {
                    return Some(PrimitiveState::new(*rho, *u, *v, *w, *pr));
                }
            }
        }
        None
    }
}
