//! Kademlia-style identifier space and routing state.
//!
//! ScoutSubs uses the overlay for two things: placing the rendezvous node of
//! an attribute (the live node XOR-closest to the attribute's key) and
//! greedy hop-by-hop routing toward it, which makes subscription paths
//! converge.

mod id;
mod routing;

pub use id::{canonical_name, xor_distance, Bits, Distance, IdSpace, Key, Located, NodeId, MAX_WIDTH};
pub use routing::{closest_peers, route_next_hop, RoutingTable, DEFAULT_BUCKET_SIZE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("identifier width {0} is outside 1..=256")]
    InvalidWidth(u16),
    #[error("value {0} does not fit in {1} bits")]
    OutOfRange(u64, u16),
    #[error("invalid attribute name {0:?}")]
    InvalidAttribute(String),
}

/// Simulator endpoint of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u32);

/// Index into the network's region list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region(pub u16);

/// What a node knows about another node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeerInfo {
    pub id: NodeId,
    pub endpoint: Address,
    pub region: Region,
}

impl PeerInfo {
    pub fn new(id: NodeId, endpoint: Address, region: Region) -> Self {
        PeerInfo { id, endpoint, region }
    }
}
