//! Anonymous dead-drop messaging over a mix network, simulated on a mobile
//! opportunistic network.
//!
//! Writers seal messages into cells of a public bulletin board carried by node
//! zero; readers fetch them with the cell's tag preimage. Every request and
//! reply travels through up to three mixer nodes using store-carry-forward.

pub mod batch;
pub mod board;
pub mod config;
pub mod crypto;
pub mod metrics;
pub mod mix;
pub mod protocol;
pub mod sim;
mod wire;

pub use wire::WireError;

/// Simulation-wide node identifier. Node 0 hosts the bulletin board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const BOARD: NodeId = NodeId(0);
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}
