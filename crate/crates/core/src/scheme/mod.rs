//! Spatial discretization.

pub mod difference;
pub mod split;
pub mod sweep;
pub mod wcns;

pub use difference::{central4, central4_at, edge_difference};
pub use split::{split_flux, SplitFlux};
pub use sweep::{block_residual_direction, DirectionalTask, FluxKind, Primitives, SweepInput};
pub use wcns::{
    edge_values, interpolate_edge, nonlinear_weights, smoothness_indicators, EdgeValues, Side,
    StencilLine, WcnsWeights, IDEAL_WEIGHTS,
};
