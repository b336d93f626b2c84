//! Reflexive-address discovery, NAT classification and the rendezvous
//! server that swaps candidates and schedules a synchronized punch.

mod rendezvous;
mod stun;

use std::fmt;

use serde::Serialize;

use crate::netsim::{Datagram, EndpointAddress, Network, NodeId, SimTime, StepOutcome};

pub use rendezvous::{
    register, rendezvous_exchange, ExchangeOutcome, Participant, RendezvousRecord, RendezvousServer,
};
pub use stun::{classify_nat, stun_bind, StunServer, StunServerPair, STUN_ALT_PORT, STUN_PORT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PeerId(pub u64);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peer-{:016x}", self.0)
    }
}

/// The endpoint a server observed a request arriving from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MappedAddress {
    pub reflexive: EndpointAddress,
    pub observed_at: SimTime,
    pub server: EndpointAddress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub local: EndpointAddress,
    pub reflexive: Option<MappedAddress>,
}

impl CandidateSet {
    pub fn local_only(local: EndpointAddress) -> Self {
        CandidateSet { local, reflexive: None }
    }

    /// Reflexive endpoint if known, else the local one.
    pub fn best(&self) -> EndpointAddress {
        self.reflexive.map(|m| m.reflexive).unwrap_or(self.local)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("no response before timeout")]
    Timeout,
    #[error("classification inconclusive: {0}")]
    Inconclusive(&'static str),
    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),
    #[error("network error: {0}")]
    Network(#[from] crate::netsim::NetworkError),
}

/// Runs the event loop until a datagram addressed to `local` on `node`
/// satisfying `accept` is delivered, or `deadline` passes.
pub(crate) fn await_datagram(
    net: &mut Network,
    node: NodeId,
    local: EndpointAddress,
    deadline: SimTime,
    mut accept: impl FnMut(&Datagram) -> bool,
) -> Option<Datagram> {
    while let Some(ev) = net.step_until(deadline) {
        if let StepOutcome::Delivered { node: n, datagram, .. } = ev {
            if n == node && datagram.dst == local && accept(&datagram) {
                return Some(datagram);
            }
        }
    }
    None
}
