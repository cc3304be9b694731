//! Ideal-gas state vectors and the analytic inviscid/viscous flux vectors of
//! the compressible Navier-Stokes equations in nondimensional form, on a
//! uniform Cartesian mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Axis;

pub const NVARS: usize = 5;

/// Conserved variables `(rho, rho u, rho v, rho w, rho E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservedState {
    pub rho: f64,
    pub rho_u: f64,
    pub rho_v: f64,
    pub rho_w: f64,
    pub rho_e: f64,
}

impl ConservedState {
    pub fn new(rho: f64, rho_u: f64, rho_v: f64, rho_w: f64, rho_e: f64) -> Self {
        Self {
            rho,
            rho_u,
            rho_v,
            rho_w,
            rho_e,
        }
    }

    pub fn to_array(self) -> [f64; NVARS] {
        [self.rho, self.rho_u, self.rho_v, self.rho_w, self.rho_e]
    }

    pub fn from_array(q: [f64; NVARS]) -> Self {
        Self::new(q[0], q[1], q[2], q[3], q[4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveState {
    pub rho: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub p: f64,
}

impl PrimitiveState {
    pub fn new(rho: f64, u: f64, v: f64, w: f64, p: f64) -> Self {
        Self { rho, u, v, w, p }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    /// Nondimensional temperature `p / rho`.
    pub fn temperature(&self) -> f64 {
        self.p / self.rho
    }
}

/// Fluid constants. Viscosity is constant, `mu = 1 / Re`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasModel {
    pub gamma: f64,
    pub prandtl: f64,
    pub reynolds: f64,
    pub viscous: bool,
}

impl Default for GasModel {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            prandtl: 0.72,
            reynolds: 1.0e4,
            viscous: false,
        }
    }
}

impl GasModel {
    pub fn inviscid(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn viscous(gamma: f64, prandtl: f64, reynolds: f64) -> Self {
        Self {
            gamma,
            prandtl,
            reynolds,
            viscous: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::Config(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.prandtl > 0.0) {
            return Err(Error::Config(format!("prandtl must be positive, got {}", self.prandtl)));
        }
        if self.viscous && !(self.reynolds > 0.0) {
            return Err(Error::Config(format!(
                "reynolds must be positive for viscous flow, got {}",
                self.reynolds
            )));
        }
        Ok(())
    }

    pub fn viscosity(&self) -> f64 {
        1.0 / self.reynolds
    }

    /// Heat conductivity `mu gamma / ((gamma - 1) Pr)`.
    pub fn conductivity(&self) -> f64 {
        self.viscosity() * self.gamma / ((self.gamma - 1.0) * self.prandtl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FluxVector(pub [f64; NVARS]);

impl FluxVector {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl std::ops::Index<usize> for FluxVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Pressure from conserved variables; the hot-path form used by the kernels.
#[inline(always)]
pub fn pressure_of(q: &[f64; NVARS], gamma: f64) -> f64 {
    let rho = q[0];
    let ke = 0.5 * (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]) / rho;
    (gamma - 1.0) * (q[4] - ke)
}

#[inline(always)]
pub fn check_state(rho: f64, p: f64) -> Result<()> {
    // written so that NaN fails
    if rho > 0.0 && p > 0.0 && rho.is_finite() && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid_state(rho, p))
    }
}

pub fn primitive_from_conserved(q: &ConservedState, gas: &GasModel) -> Result<PrimitiveState> {
    let arr = q.to_array();
    if !(q.rho > 0.0) {
        return Err(Error::invalid_state(q.rho, f64::NAN));
    }
    let p = pressure_of(&arr, gas.gamma);
    check_state(q.rho, p)?;
    Ok(PrimitiveState {
        rho: q.rho,
        u: q.rho_u / q.rho,
        v: q.rho_v / q.rho,
        w: q.rho_w / q.rho,
        p,
    })
}

pub fn conserved_from_primitive(w: &PrimitiveState, gas: &GasModel) -> Result<ConservedState> {
    check_state(w.rho, w.p)?;
    let ke = 0.5 * w.rho * (w.u * w.u + w.v * w.v + w.w * w.w);
    Ok(ConservedState {
        rho: w.rho,
        rho_u: w.rho * w.u,
        rho_v: w.rho * w.v,
        rho_w: w.rho * w.w,
        rho_e: w.p / (gas.gamma - 1.0) + ke,
    })
}

/// Sound speed and the spectral radius `|u_axis| + a` of the flux Jacobian.
pub fn sound_speed_and_spectral_radius(
    w: &PrimitiveState,
    gas: &GasModel,
    axis: Axis,
) -> (f64, f64) {
    let a = (gas.gamma * w.p / w.rho).sqrt();
    let un = w.velocity()[axis.index()];
    (a, un.abs() + a)
}

/// Inviscid flux along `axis`. For x: `(rho u, rho u^2 + p, rho u v, rho u w, u (rho E + p))`.
pub fn inviscid_flux(q: &ConservedState, gas: &GasModel, axis: Axis) -> Result<FluxVector> {
    let w = primitive_from_conserved(q, gas)?;
    Ok(FluxVector(inviscid_flux_of(&q.to_array(), &w, axis)))
}

#[inline(always)]
pub(crate) fn inviscid_flux_of(q: &[f64; NVARS], w: &PrimitiveState, axis: Axis) -> [f64; NVARS] {
    let d = axis.index();
    let un = w.velocity()[d];
    let mut f = [
        q[0] * un,
        q[1] * un,
        q[2] * un,
        q[3] * un,
        (q[4] + w.p) * un,
    ];
    f[1 + d] += w.p;
    f
}

/// Pointwise inputs for a viscous flux: velocity, its gradient
/// `grad_velocity[i][j] = d u_i / d x_j`, and the temperature gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ViscousInput {
    pub velocity: [f64; 3],
    pub grad_velocity: [[f64; 3]; 3],
    pub grad_temperature: [f64; 3],
}

/// Newtonian stress with Stokes' hypothesis (zero bulk viscosity).
pub fn stress_tensor(grad: &[[f64; 3]; 3], mu: f64) -> [[f64; 3]; 3] {
    let div = grad[0][0] + grad[1][1] + grad[2][2];
    let mut tau = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            tau[i][j] = mu * (grad[i][j] + grad[j][i]);
        }
        tau[i][i] -= 2.0 / 3.0 * mu * div;
    }
    tau
}

/// Viscous flux along `axis`: `(0, tau_xd, tau_yd, tau_zd, u_i tau_id + k dT/dx_d)`.
pub fn viscous_flux(input: &ViscousInput, gas: &GasModel, axis: Axis) -> FluxVector {
    let mu = gas.viscosity();
    let tau = stress_tensor(&input.grad_velocity, mu);
    let d = axis.index();
    let u = input.velocity;
    let work = u[0] * tau[0][d] + u[1] * tau[1][d] + u[2] * tau[2][d];
    FluxVector([
        0.0,
        tau[0][d],
        tau[1][d],
        tau[2][d],
        work + gas.conductivity() * input.grad_temperature[d],
    ])
}
