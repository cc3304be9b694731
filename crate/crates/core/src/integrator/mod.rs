//! Residual assembly and explicit three-stage Runge-Kutta time stepping.

pub mod residual;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gas::GasModel;
use crate::grid::BlockField;
use crate::scheme::Primitives;

pub use residual::{
    accumulate, active_tasks, compute_residual, core_box, plan_units, run_units, update_primitives, BlockResidual,
    ResidualField, ResidualInputs, TaskUnit, Tiling,
};

pub const RK_STAGES: usize = 3;

/// Residual growth, relative to the first step, treated as divergence.
pub const DIVERGENCE_GROWTH: f64 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeControls {
    pub cfl: f64,
    /// Step size when `fixed_dt` is set.
    pub dt: f64,
    pub fixed_dt: bool,
    pub max_iters: usize,
    /// Stop once the L2 residual norm drops below this fraction of the
    /// first step's norm.
    pub convergence_tol: f64,
    /// Stop at this physical time, shortening the last step to land on it.
    pub end_time: Option<f64>,
}

impl Default for TimeControls {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            dt: 1.0e-3,
            fixed_dt: false,
            max_iters: 50,
            convergence_tol: 1.0e-8,
            end_time: None,
        }
    }
}

impl TimeControls {
    pub fn validate(&self) -> Result<()> {
        if self.fixed_dt {
            if !(self.dt > 0.0) {
                return Err(Error::Config(format!("fixed dt must be positive, got {}", self.dt)));
            }
        } else if !(self.cfl > 0.0) {
            return Err(Error::Config(format!("cfl must be positive, got {}", self.cfl)));
        }
        if let Some(t) = self.end_time {
            if !(t > 0.0) {
                return Err(Error::Config(format!("end time must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// One stage of the scheme for a single value:
/// stage 0: `q + dt r`;
/// stage 1: `3/4 qn + 1/4 (q + dt r)`;
/// stage 2: `1/3 qn + 2/3 (q + dt r)`.
/// The blends are evaluated as `qn + w (q + dt r - qn)`, which keeps a zero
/// residual an exact fixed point.
#[inline(always)]
pub fn rk3_stage(stage: usize, qn: f64, q: f64, r: f64, dt: f64) -> f64 {
    match stage {
        0 => q + dt * r,
        1 => qn + 0.25 * ((q + dt * r) - qn),
        _ => qn + (2.0 / 3.0) * ((q + dt * r) - qn),
    }
}

/// Full step of `dq/dt = f(q)` for a scalar, for checking coefficients.
pub fn rk3_scalar(q0: f64, dt: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut q = q0;
    for s in 0..RK_STAGES {
        q = rk3_stage(s, q0, q, f(q), dt);
    }
    q
}

/// Apply stage `stage` to the interior of `field`. `qn` is the interior at
/// the start of the step, component-major like the residual.
pub fn apply_stage(field: &mut BlockField, qn: &[f64], res: &BlockResidual, stage: usize, dt: f64) {
    let cells = res.cells();
    let dims = field.dims();
    let strides = field.strides();
    let h = field.halo();
    for (c, comp) in field.components_mut().iter_mut().enumerate() {
        let base = c * cells;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                let n0 = base + dims[0] * (j + dims[1] * k);
                let idx0 = h + (j + h) * strides[1] + (k + h) * strides[2];
                for i in 0..dims[0] {
                    let n = n0 + i;
                    comp[idx0 + i] = rk3_stage(stage, qn[n], comp[idx0 + i], res.values[n], dt);
                }
            }
        }
    }
}

/// Largest stable step for the cells of `fields`:
/// `cfl / max(sum over active axes of (|u_d| + a) / h_d + 2 mu gamma / (Pr rho h_min^2))`,
/// the viscous term only for viscous gas. Returns infinity for no cells.
pub fn stable_dt<'a>(
    fields: impl IntoIterator<Item = &'a BlockField>,
    gas: &GasModel,
    cfl: f64,
    spacing: [f64; 3],
    active: [bool; 3],
) -> Result<f64> {
    let worst = max_signal_speed(fields, gas, spacing, active)?;
    Ok(if worst > 0.0 { cfl / worst } else { f64::INFINITY })
}

/// The denominator of [`stable_dt`]: the largest inverse time scale over
/// the interiors of `fields`. Zero for no cells. A maximum does not depend
/// on the order cells are visited, so ranks can combine their values.
pub fn max_signal_speed<'a>(
    fields: impl IntoIterator<Item = &'a BlockField>,
    gas: &GasModel,
    spacing: [f64; 3],
    active: [bool; 3],
) -> Result<f64> {
    let hmin = (0..3).filter(|&d| active[d]).map(|d| spacing[d]).fold(f64::INFINITY, f64::min);
    let mut worst = 0.0f64;
    for f in fields {
        let mut prims = Primitives::for_field(f);
        prims.update(f, gas, &f.interior_box())?;
        for p in f.interior_box().iter() {
            let i = f.index_of(p);
            let a = (gas.gamma * prims.p[i] / prims.rho[i]).sqrt();
            let vel = [prims.u[i], prims.v[i], prims.w[i]];
            let mut s = 0.0;
            for d in 0..3 {
                if active[d] {
                    s += (vel[d].abs() + a) / spacing[d];
                }
            }
            if gas.viscous && hmin.is_finite() {
                s += 2.0 * gas.viscosity() * gas.gamma / (gas.prandtl * prims.rho[i] * hmin * hmin);
            }
            worst = worst.max(s);
        }
    }
    Ok(worst)
}

/// Interior of every block, component-major, for the start of a step.
pub fn snapshot(field: &BlockField) -> Vec<f64> {
    field.interior_values().concat()
}

/// What a time-marching driver provides to [`iterate`].
pub trait Stepper {
    /// Advance one full step of at most `max_dt`; returns the step size used
    /// and the L2 norm of the first-stage residual.
    fn step(&mut self, controls: &TimeControls, max_dt: f64) -> Result<(f64, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub dt: f64,
    pub time: f64,
    pub residual_norm: f64,
    /// Norm relative to the first step's.
    pub relative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIters,
    Converged,
    EndTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iterations: usize,
    pub time: f64,
    pub stop: StopReason,
    pub history: Vec<StepRecord>,
}

/// March until `max_iters` steps, until `end_time` or until the residual
/// norm drops below `convergence_tol` of the first step's. A zero first norm
/// never counts as converged. `hook` sees every step.
pub fn iterate<S: Stepper + ?Sized>(
    stepper: &mut S,
    controls: &TimeControls,
    mut hook: impl FnMut(&StepRecord),
) -> Result<IterationSummary> {
    controls.validate()?;
    let mut history = Vec::new();
    let mut time = 0.0;
    let mut first = None;
    let mut stop = StopReason::MaxIters;
    for iteration in 0..controls.max_iters {
        let max_dt = match controls.end_time {
            Some(end) if end - time <= 1e-12 * end => {
                stop = StopReason::EndTime;
                break;
            }
            Some(end) => end - time,
            None => f64::INFINITY,
        };
        let (dt, norm) = stepper.step(controls, max_dt)?;
        time += dt;
        let n0 = *first.get_or_insert(norm);
        let relative = if n0 > 0.0 { norm / n0 } else { 0.0 };
        if !norm.is_finite() || relative > DIVERGENCE_GROWTH {
            return Err(Error::Divergence {
                iteration,
                growth: relative,
            });
        }
        let rec = StepRecord {
            iteration,
            dt,
            time,
            residual_norm: norm,
            relative,
        };
        hook(&rec);
        history.push(rec);
        if n0 > 0.0 && relative < controls.convergence_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(IterationSummary {
        iterations: history.len(),
        time,
        stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::{conserved_from_primitive, PrimitiveState};

    #[test]
    fn scalar_decay() {
        let q1 = rk3_scalar(1.0, 0.1, |q| -q);
        assert!((q1 - 0.904_833_333_333_333_3).abs() < 1e-12, "{q1}");
    }

    #[test]
    fn zero_residual_is_a_fixed_point() {
        for q in [0.7, 1.0 / 3.0, 2.5e-7, 123456.789, std::f64::consts::PI] {
            assert_eq!(rk3_scalar(q, 0.3, |_| 0.0), q);
        }
    }

    #[test]
    fn stages_are_convex_combinations_of_euler_steps() {
        // with r(q) = 0 every stage returns a convex combination of qn and q
        let (qn, q) = (2.0, 5.0);
        assert!((rk3_stage(1, qn, q, 0.0, 1.0) - (0.75 * qn + 0.25 * q)).abs() < 1e-15);
        assert!((rk3_stage(2, qn, q, 0.0, 1.0) - (qn / 3.0 + 2.0 * q / 3.0)).abs() < 1e-15);
    }

    fn uniform(w: PrimitiveState, gas: &GasModel) -> BlockField {
        let mut f = BlockField::new(0, [4, 4, 4], 5);
        f.fill(conserved_from_primitive(&w, gas).unwrap().to_array());
        f
    }

    #[test]
    fn rest_state_step() {
        let gas = GasModel::default();
        let f = uniform(PrimitiveState::new(1.0, 0.0, 0.0, 0.0, 1.0), &gas);
        let dt = stable_dt([&f], &gas, 1.0, [0.1; 3], [true; 3]).unwrap();
        assert!((dt - 0.1 / (3.0 * 1.4f64.sqrt())).abs() < 1e-15);
        assert!((dt - 0.02817).abs() < 1e-5);
        let dt2 = stable_dt([&f], &gas, 2.0, [0.1; 3], [true; 3]).unwrap();
        assert!((dt2 - 2.0 * dt).abs() < 1e-15);
    }

    #[test]
    fn faster_flow_never_allows_a_larger_step() {
        let gas = GasModel::viscous(1.4, 0.72, 50.0);
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let u = 0.25 * k as f64;
            let f = uniform(PrimitiveState::new(1.0, u, -0.5 * u, 0.1 * u, 1.0), &gas);
            let dt = stable_dt([&f], &gas, 0.8, [0.1, 0.2, 0.05], [true; 3]).unwrap();
            assert!(dt <= last);
            last = dt;
        }
    }

    struct Fake {
        norms: Vec<f64>,
        k: usize,
    }

    impl Stepper for Fake {
        fn step(&mut self, _c: &TimeControls, max_dt: f64) -> Result<(f64, f64)> {
            self.k += 1;
            Ok((max_dt.min(0.1), self.norms[(self.k - 1).min(self.norms.len() - 1)]))
        }
    }

    #[test]
    fn iteration_cap_and_convergence() {
        let c = TimeControls {
            max_iters: 50,
            ..TimeControls::default()
        };
        let s = iterate(&mut Fake { norms: vec![1.0], k: 0 }, &c, |_| {}).unwrap();
        assert_eq!(s.iterations, 50);
        assert_eq!(s.stop, StopReason::MaxIters);
        let s = iterate(&mut Fake { norms: vec![1.0, 0.5, 1e-9], k: 0 }, &c, |_| {}).unwrap();
        assert_eq!(s.iterations, 3);
        assert_eq!(s.stop, StopReason::Converged);
        let none = TimeControls { max_iters: 0, ..c };
        assert_eq!(iterate(&mut Fake { norms: vec![1.0], k: 0 }, &none, |_| {}).unwrap().iterations, 0);
        // zero initial norm runs to the cap
        assert_eq!(iterate(&mut Fake { norms: vec![0.0], k: 0 }, &c, |_| {}).unwrap().iterations, 50);
    }

    #[test]
    fn last_step_lands_on_the_end_time() {
        let c = TimeControls {
            end_time: Some(0.25),
            ..TimeControls::default()
        };
        let s = iterate(&mut Fake { norms: vec![1.0], k: 0 }, &c, |_| {}).unwrap();
        assert_eq!(s.iterations, 3);
        assert_eq!(s.stop, StopReason::EndTime);
        assert!((s.time - 0.25).abs() < 1e-15);
        assert!((s.history[2].dt - 0.05).abs() < 1e-15);
    }

    #[test]
    fn divergence_aborts() {
        let c = TimeControls::default();
        let err = iterate(&mut Fake { norms: vec![1.0, 10.0, 1e7], k: 0 }, &c, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 2, .. }));
    }
}
