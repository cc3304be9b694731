//! Halo exchange between blocks, ranks and processes.

pub mod halo;
pub mod plan;
pub mod singular;
pub mod transport;

pub use halo::{comm_stats, CommStats, EpochStats, ExchangeMode, ExchangeOptions, HaloExchanger, Packing};
pub use plan::{build_halo_plan, message_tag, HaloPlan, PairExchange, Region, RegionSource, MAX_MESSAGE_ID};
pub use singular::{find_singular_points, one_sided_value, SingularPoint, SingularValues};
pub use transport::{
    in_process_network, Collectives, Envelope, FrameHeader, InProcEndpoint, LinkModel, TcpEndpoint, Transport,
};
