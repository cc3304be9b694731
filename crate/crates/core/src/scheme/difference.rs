//! Edge-based sixth-order difference and the fourth-order central derivative.

use crate::error::{Error, Result};
use crate::scheme::wcns::StencilLine;

pub const EDGE_COEFFS: [f64; 3] = [75.0 / 64.0, -25.0 / 384.0, 3.0 / 640.0];

/// Derivative at node `i` from edge values at
/// `i-5/2, i-3/2, i-1/2, i+1/2, i+3/2, i+5/2`.
#[inline(always)]
pub fn edge_difference(e: &[f64; 6], h: f64) -> f64 {
    (EDGE_COEFFS[0] * (e[3] - e[2]) + EDGE_COEFFS[1] * (e[4] - e[1]) + EDGE_COEFFS[2] * (e[5] - e[0])) / h
}

/// `(-f[i+2] + 8 f[i+1] - 8 f[i-1] + f[i-2]) / 12h`, grouped so constant data
/// gives exactly zero.
#[inline(always)]
pub fn central4(f: &[f64; 5], h: f64) -> f64 {
    (8.0 * (f[3] - f[1]) - (f[4] - f[0])) / (12.0 * h)
}

/// Central derivative at `node` of a stencil line.
pub fn central4_at(line: &StencilLine<'_>, node: i64) -> Result<f64> {
    let last = line.first + line.values.len() as i64 - 1;
    if node - 2 < line.first || node + 2 > last {
        return Err(Error::InsufficientHalo {
            needed: 2,
            available: (node - line.first).min(last - node).max(0) as usize,
        });
    }
    let o = (node - 2 - line.first) as usize;
    let w = [line.values[o], line.values[o + 1], line.values[o + 2], line.values[o + 3], line.values[o + 4]];
    Ok(central4(&w, line.spacing))
}
