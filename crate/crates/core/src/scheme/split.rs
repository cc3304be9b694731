//! Lax-Friedrichs flux splitting, `F± = (F ± lambda Q) / 2`.

use crate::error::Result;
use crate::gas::{
    inviscid_flux_of, primitive_from_conserved, sound_speed_and_spectral_radius, ConservedState,
    GasModel, NVARS,
};
use crate::grid::Axis;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitFlux {
    pub plus: Vec<[f64; NVARS]>,
    pub minus: Vec<[f64; NVARS]>,
    /// Largest spectral radius over the line; the splitting constant.
    pub lambda: f64,
}

#[inline(always)]
pub fn split_point(q: &[f64; NVARS], f: &[f64; NVARS], lambda: f64) -> ([f64; NVARS], [f64; NVARS]) {
    let plus = std::array::from_fn(|c| 0.5 * (f[c] + lambda * q[c]));
    let minus = std::array::from_fn(|c| 0.5 * (f[c] - lambda * q[c]));
    (plus, minus)
}

/// Split every state on `q_line` with the line-wise maximum spectral radius.
pub fn split_flux(q_line: &[ConservedState], gas: &GasModel, axis: Axis) -> Result<SplitFlux> {
    let mut fluxes = Vec::with_capacity(q_line.len());
    let mut lambda = 0.0f64;
    for q in q_line {
        let w = primitive_from_conserved(q, gas)?;
        let (_, lam) = sound_speed_and_spectral_radius(&w, gas, axis);
        lambda = lambda.max(lam);
        fluxes.push(inviscid_flux_of(&q.to_array(), &w, axis));
    }
    let (plus, minus) = q_line
        .iter()
        .zip(&fluxes)
        .map(|(q, f)| split_point(&q.to_array(), f, lambda))
        .unzip();
    Ok(SplitFlux { plus, minus, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::{conserved_from_primitive, PrimitiveState};

    #[test]
    fn rest_state_splits_consistently() {
        let gas = GasModel::inviscid(1.4);
        let q = ConservedState::new(1.0, 0.0, 0.0, 0.0, 2.5);
        let s = split_flux(&[q; 4], &gas, Axis::X).unwrap();
        assert!(s.lambda > 0.0);
        for (p, m) in s.plus.iter().zip(&s.minus) {
            let sum: Vec<f64> = (0..NVARS).map(|c| p[c] + m[c]).collect();
            assert_eq!(sum[0], 0.0);
            assert!((sum[1] - 1.0).abs() < 1e-15);
            assert_eq!(&sum[2..], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn lambda_is_the_line_maximum() {
        let gas = GasModel::inviscid(1.4);
        let a = conserved_from_primitive(&PrimitiveState::new(1.4, 2.0, 0.0, 0.0, 1.0), &gas).unwrap();
        let b = ConservedState::new(1.0, 0.0, 0.0, 0.0, 2.5);
        let s = split_flux(&[b, a, b], &gas, Axis::X).unwrap();
        assert!((s.lambda - 3.0).abs() < 1e-14);
        // across y only the sound speeds count
        let s = split_flux(&[b, a, b], &gas, Axis::Y).unwrap();
        assert!((s.lambda - 1.4f64.sqrt()).abs() < 1e-14);
    }
}
