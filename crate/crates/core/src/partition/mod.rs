//! Zones, blocks, groups and their placement on ranks and devices.

pub mod plan;
pub mod split;
pub mod zone;

pub use plan::{
    block_neighbors, device_shares, imbalance_report, map_rank_graph, map_ranks_to_nodes,
    regroup_blocks, round_robin_blocks, DeviceClass, DeviceLoad, DeviceRef, Group, ImbalanceReport, NodeTopology,
    PartitionPlan, RankPlacement,
};
pub use split::{balanced_sizes, split_zone, BlockSpec, Decomposition, SplitTarget};
pub use zone::{AxisSource, Boundary, Faces, ZoneSpec};
