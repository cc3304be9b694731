//! Heterogeneous CPU + coprocessor runtime model.

pub mod device;
pub mod model;
pub mod residency;
pub mod timeline;

pub use device::{configure_devices, DeviceModel, DeviceModels, DevicePool, LinkSpec, COPROCESSOR_SPEED, CPU_THROUGHPUT};
pub use model::{
    argmax, balance_ratio, build_graph, core_cells, corner_speedup, evaluate, export_boxes, exposed_faces,
    halo_arrivals, model_timeline, ratio_grid, sweep_ratio, union_cells, workload, CornerAnalog, CORNER_COPROCESSORS,
    CORNER_CPUS, DeviceWork, Message, ModelParams, ModelResult, RatioPoint, Schedule, Speedup, Workload,
};
pub use residency::{prefer_recompute, DeviceMemory, ResidencyCache, SliceId, SliceKind, TransferStats};
pub use timeline::{Interval, Op, OpGraph, Phase, Resource, ResourceBreakdown, Timeline, TimelineReport};
