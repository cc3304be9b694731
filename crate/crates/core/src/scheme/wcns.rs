//! Fifth-order weighted nonlinear interpolation of node values to cell edges.
//!
//! Three 3-point substencils each interpolate to the edge `i+1/2`; they are
//! blended with nonlinear weights built from Jiang-Shu smoothness indicators
//! and ideal weights `(1, 10, 5) / 16`. With the ideal weights the blend is
//! the fifth-order interpolant
//! `(3 f[i-2] - 20 f[i-1] + 90 f[i] + 60 f[i+1] - 5 f[i+2]) / 128`.
//!
//! Every formula is written as a correction to the centre value `f[i]` so a
//! constant window reproduces the constant exactly.

use crate::error::{Error, Result};

pub const IDEAL_WEIGHTS: [f64; 3] = [1.0 / 16.0, 10.0 / 16.0, 5.0 / 16.0];
pub const EPSILON: f64 = 1.0e-6;

/// Nodes needed on each side of an edge by the left- and right-biased windows.
pub const WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Upwind from the left: nodes `i-2..=i+2` for edge `i+1/2`.
    Left,
    /// Upwind from the right: nodes `i-1..=i+3` for edge `i+1/2`.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WcnsWeights {
    pub omega: [f64; 3],
    pub beta: [f64; 3],
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeValues {
    pub left: f64,
    pub right: f64,
}

/// Jiang-Shu indicators on the substencils `(i-2,i-1,i)`, `(i-1,i,i+1)`, `(i,i+1,i+2)`.
#[inline(always)]
pub fn smoothness_indicators(f: &[f64; 5]) -> [f64; 3] {
    let c13 = 13.0 / 12.0;
    let d2_0 = (f[0] - f[1]) - (f[1] - f[2]);
    let d1_0 = (f[0] - f[1]) - 3.0 * (f[1] - f[2]);
    let d2_1 = (f[1] - f[2]) - (f[2] - f[3]);
    let d1_1 = f[1] - f[3];
    let d2_2 = (f[2] - f[3]) - (f[3] - f[4]);
    let d1_2 = 3.0 * (f[2] - f[3]) - (f[3] - f[4]);
    [
        c13 * d2_0 * d2_0 + 0.25 * d1_0 * d1_0,
        c13 * d2_1 * d2_1 + 0.25 * d1_1 * d1_1,
        c13 * d2_2 * d2_2 + 0.25 * d1_2 * d1_2,
    ]
}

#[inline(always)]
pub fn nonlinear_weights(beta: [f64; 3], ideal: [f64; 3], eps: f64) -> WcnsWeights {
    let a0 = ideal[0] / ((eps + beta[0]) * (eps + beta[0]));
    let a1 = ideal[1] / ((eps + beta[1]) * (eps + beta[1]));
    let a2 = ideal[2] / ((eps + beta[2]) * (eps + beta[2]));
    let s = a0 + a1 + a2;
    WcnsWeights {
        omega: [a0 / s, a1 / s, a2 / s],
        beta,
        eps,
    }
}

/// Substencil corrections `q_k - f[i]` at the edge `i+1/2`.
#[inline(always)]
fn corrections(f: &[f64; 5]) -> [f64; 3] {
    let c = f[2];
    [
        (3.0 * (f[0] - c) - 10.0 * (f[1] - c)) * 0.125,
        (3.0 * (f[3] - c) - (f[1] - c)) * 0.125,
        (6.0 * (f[3] - c) - (f[4] - c)) * 0.125,
    ]
}

/// Substencil edge values `q_0, q_1, q_2`.
pub fn substencil_values(f: &[f64; 5]) -> [f64; 3] {
    let d = corrections(f);
    [f[2] + d[0], f[2] + d[1], f[2] + d[2]]
}

/// Nonlinear left-biased value at the edge between `f[2]` and `f[3]`.
#[inline(always)]
pub fn interpolate_window(f: &[f64; 5]) -> f64 {
    let w = nonlinear_weights(smoothness_indicators(f), IDEAL_WEIGHTS, EPSILON);
    let d = corrections(f);
    f[2] + (w.omega[0] * d[0] + w.omega[1] * d[1] + w.omega[2] * d[2])
}

/// Same blend with frozen ideal weights (the linear fifth-order interpolant).
pub fn interpolate_window_linear(f: &[f64; 5]) -> f64 {
    let d = corrections(f);
    f[2] + (IDEAL_WEIGHTS[0] * d[0] + IDEAL_WEIGHTS[1] * d[1] + IDEAL_WEIGHTS[2] * d[2])
}

/// A contiguous run of node values along one axis. `first` is the index of
/// `values[0]`, so lines may start inside a halo.
#[derive(Debug, Clone, Copy)]
pub struct StencilLine<'a> {
    pub values: &'a [f64],
    pub first: i64,
    pub spacing: f64,
}

impl<'a> StencilLine<'a> {
    pub fn new(values: &'a [f64], first: i64, spacing: f64) -> Self {
        Self {
            values,
            first,
            spacing,
        }
    }

    fn window(&self, nodes: [i64; 5]) -> Result<[f64; 5]> {
        let lo = nodes.iter().min().copied().unwrap_or(0);
        let hi = nodes.iter().max().copied().unwrap_or(0);
        let last = self.first + self.values.len() as i64 - 1;
        if lo < self.first || hi > last {
            let available = (self.first - lo).min(last - hi).max(0);
            return Err(Error::InsufficientHalo {
                needed: WINDOW,
                available: available as usize,
            });
        }
        Ok(nodes.map(|n| self.values[(n - self.first) as usize]))
    }
}

/// Interpolate to the edge `edge + 1/2` from the requested side.
pub fn interpolate_edge(line: &StencilLine<'_>, edge: i64, side: Side) -> Result<f64> {
    let i = edge;
    let nodes = match side {
        Side::Left => [i - 2, i - 1, i, i + 1, i + 2],
        Side::Right => [i + 3, i + 2, i + 1, i, i - 1],
    };
    Ok(interpolate_window(&line.window(nodes)?))
}

pub fn edge_values(line: &StencilLine<'_>, edge: i64) -> Result<EdgeValues> {
    Ok(EdgeValues {
        left: interpolate_edge(line, edge, Side::Left)?,
        right: interpolate_edge(line, edge, Side::Right)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_window_has_zero_indicators_and_ideal_weights() {
        let f = [2.5; 5];
        assert_eq!(smoothness_indicators(&f), [0.0; 3]);
        let w = nonlinear_weights([0.0; 3], IDEAL_WEIGHTS, EPSILON);
        for k in 0..3 {
            assert!((w.omega[k] - IDEAL_WEIGHTS[k]).abs() < 1e-15);
        }
        assert_eq!(interpolate_window(&f), 2.5);
    }

    #[test]
    fn linear_window_has_equal_indicators() {
        let b = smoothness_indicators(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn step_window_flags_the_jump() {
        // (0,0,0,1,1): beta = (0, 4/3, 10/3)
        let b = smoothness_indicators(&[0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(b[0], 0.0);
        assert!((b[1] - 4.0 / 3.0).abs() < 1e-15);
        assert!((b[2] - 10.0 / 3.0).abs() < 1e-15);
        assert!(b[2] > b[1] && b[1] > b[0]);
    }

    #[test]
    fn equal_betas_give_ideal_weights() {
        for beta in [0.0, 1e-3, 7.0] {
            let w = nonlinear_weights([beta; 3], IDEAL_WEIGHTS, EPSILON);
            for k in 0..3 {
                assert!((w.omega[k] - IDEAL_WEIGHTS[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn large_beta_suppresses_its_stencil() {
        let w = nonlinear_weights([0.0, 0.0, 1.0e3], IDEAL_WEIGHTS, EPSILON);
        // alpha_2 / alpha_0 = 5 * eps^2 / (eps + 1e3)^2 ~ 5e-18
        assert!(w.omega[2] < 1e-16);
        assert!((w.omega[0] + w.omega[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn substencils_and_linear_blend() {
        let f = [1.0, -2.0, 0.5, 3.0, 4.0];
        let q = substencil_values(&f);
        let direct = [
            (3.0 * f[0] - 10.0 * f[1] + 15.0 * f[2]) / 8.0,
            (-f[1] + 6.0 * f[2] + 3.0 * f[3]) / 8.0,
            (3.0 * f[2] + 6.0 * f[3] - f[4]) / 8.0,
        ];
        for k in 0..3 {
            assert!((q[k] - direct[k]).abs() < 1e-14);
        }
        let lin = (3.0 * f[0] - 20.0 * f[1] + 90.0 * f[2] + 60.0 * f[3] - 5.0 * f[4]) / 128.0;
        assert!((interpolate_window_linear(&f) - lin).abs() < 1e-14);
    }

    #[test]
    fn frozen_weights_reproduce_quartics() {
        // nodes at x = i, edge at x = i + 1/2 = 2.5 in window coordinates
        let polys: [fn(f64) -> f64; 5] = [
            |_| 1.0,
            |x| 2.0 * x - 1.0,
            |x| x * x - 3.0 * x,
            |x| 0.5 * x * x * x - x,
            |x| x.powi(4) - 2.0 * x * x * x + 0.25,
        ];
        for p in polys {
            let f = [p(0.0), p(1.0), p(2.0), p(3.0), p(4.0)];
            let exact = p(2.5);
            assert!((interpolate_window_linear(&f) - exact).abs() < 1e-12, "{exact}");
        }
        // degree 5 is not reproduced
        let p = |x: f64| x.powi(5);
        let f = [p(0.0), p(1.0), p(2.0), p(3.0), p(4.0)];
        assert!((interpolate_window_linear(&f) - p(2.5)).abs() > 1e-3);
    }

    #[test]
    fn left_and_right_sides_use_mirrored_windows() {
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).sin()).collect();
        let line = StencilLine::new(&vals, -5, 0.1);
        // edge between nodes 0 and 1
        let ev = edge_values(&line, 0).unwrap();
        let left = interpolate_window(&[vals[3], vals[4], vals[5], vals[6], vals[7]]);
        let right = interpolate_window(&[vals[8], vals[7], vals[6], vals[5], vals[4]]);
        assert_eq!(ev.left, left);
        assert_eq!(ev.right, right);
        // both upwind values agree closely on smooth data
        assert!((ev.left - ev.right).abs() < 1e-3);
    }

    #[test]
    fn missing_halo_is_an_error() {
        let vals = [1.0; 6];
        let line = StencilLine::new(&vals, 0, 1.0);
        assert!(matches!(
            interpolate_edge(&line, 1, Side::Left),
            Err(Error::InsufficientHalo { .. })
        ));
        assert!(interpolate_edge(&line, 2, Side::Left).is_ok());
        assert!(interpolate_edge(&line, 2, Side::Right).is_ok());
        assert!(interpolate_edge(&line, 3, Side::Right).is_err());
    }

    /// Edge error for sin(x) sampled with spacing h, maximised over edges.
    fn sine_edge_error(n: usize) -> f64 {
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let vals: Vec<f64> = (-5..(n as i64 + 5)).map(|i| (i as f64 * h).sin()).collect();
        let line = StencilLine::new(&vals, -5, h);
        (0..n as i64)
            .map(|e| {
                let exact = ((e as f64 + 0.5) * h).sin();
                (interpolate_edge(&line, e, Side::Left).unwrap() - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn smooth_data_converges_at_fifth_order() {
        // weights approach the ideal ones once beta >> eps, so use grids fine
        // enough for that regime but coarse enough to stay above round-off
        let e1 = sine_edge_error(80);
        let e2 = sine_edge_error(160);
        let ratio = e1 / e2;
        assert!((ratio - 32.0).abs() <= 0.2 * 32.0, "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn weights_form_a_partition_of_unity(b0 in 0.0f64..1e3, b1 in 0.0f64..1e3, b2 in 0.0f64..1e3) {
            let w = nonlinear_weights([b0, b1, b2], IDEAL_WEIGHTS, EPSILON);
            prop_assert!((w.omega.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
            for o in w.omega {
                prop_assert!((0.0..=1.0).contains(&o));
            }
        }

        #[test]
        fn indicators_are_nonnegative(f in proptest::array::uniform5(-1e3f64..1e3)) {
            for b in smoothness_indicators(&f) {
                prop_assert!(b >= 0.0);
            }
        }
    }
}
