use serde::Serialize;

use crate::discovery::await_datagram;
use crate::netsim::{Datagram, EndpointAddress, Message, MessageKind, Network, SimTime, PORT_MAPPING_PORT};

use super::engine::{self, Exchange, MappingCost, Periodic, ReplyTo, Side};
use super::punch::{conclude, new_nonce, PunchTiming};
use super::{FailReason, Peer, PunchStats, PunchStrategy, TraversalSession};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MappingGrant {
    pub external: EndpointAddress,
    pub lifetime: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("peer has no gateway NAT")]
    NoGateway,
    #[error("gateway does not support port mapping")]
    Unsupported,
    #[error("gateway refused the mapping")]
    Refused,
    #[error("no response from gateway")]
    Timeout,
}

const REQUEST_WAIT: SimTime = SimTime::from_secs(2);

/// Asks the peer's first-hop NAT for a static mapping of `internal_port`.
pub fn request_mapping(
    net: &mut Network,
    peer: &Peer,
    internal_port: u16,
    requested_port: u16,
    lifetime_s: u32,
) -> Result<MappingGrant, MappingError> {
    let gw = net.parent(peer.node).and_then(|p| net.nat(p)).ok_or(MappingError::NoGateway)?;
    let gateway = EndpointAddress::new(gw.config().gateway_host, PORT_MAPPING_PORT).map_err(|_| MappingError::NoGateway)?;
    let external_host = gw.external_host();
    let local = peer.local;
    let req = Message::PmpReq { internal_port, requested_port, lifetime_s };
    net.send(peer.node, Datagram::new(local, gateway, &req)).map_err(|_| MappingError::NoGateway)?;
    let deadline = net.now() + REQUEST_WAIT;
    let resp = await_datagram(net, peer.node, local, deadline, |d| {
        d.src == gateway && d.kind() == MessageKind::PmpResp
    })
    .ok_or(MappingError::Timeout)?;
    match resp.message() {
        Ok(Message::PmpResp { status: 0, granted_port, lifetime_s }) => Ok(MappingGrant {
            external: EndpointAddress::new(external_host, granted_port).map_err(|_| MappingError::Refused)?,
            lifetime: SimTime::from_secs(lifetime_s as u64),
        }),
        Ok(Message::PmpResp { status: 1, .. }) => Err(MappingError::Unsupported),
        _ => Err(MappingError::Refused),
    }
}

const MAPPING_LIFETIME_S: u32 = 3600;

/// Port-mapping rung: one side opens a static mapping and the other probes
/// it. Tried with A as the mapped side first, then B.
pub(crate) fn port_mapping_connect(net: &mut Network, a: &Peer, b: &Peer, timeout: SimTime) -> TraversalSession {
    let mut stats = PunchStats::default();
    let mut last = FailReason::Unsupported;
    for (mapped, other, flip) in [(a, b, false), (b, a, true)] {
        let grant = match request_mapping(net, mapped, mapped.local.port(), mapped.local.port(), MAPPING_LIFETIME_S) {
            Ok(g) => g,
            Err(MappingError::Unsupported | MappingError::NoGateway) => continue,
            Err(_) => {
                last = FailReason::Timeout;
                continue;
            }
        };
        let timing = PunchTiming::at(net.now()).with_timeout(timeout);
        let until = timing.start + timing.timeout;
        let nonce = new_nonce(net, mapped.node);
        let other_target = other.candidates.best();
        let mut sides = [
            Side {
                node: mapped.node,
                anchor: mapped.local,
                peer_anchor: other_target,
                reply: ReplyTo::Observed,
                plan: Box::new(Periodic { next: timing.start, every: timing.retransmit, until, local: mapped.local, dst: other_target }),
                cost: MappingCost::of(mapped),
            },
            Side {
                node: other.node,
                anchor: other.local,
                peer_anchor: grant.external,
                reply: ReplyTo::Observed,
                plan: Box::new(Periodic { next: timing.start, every: timing.retransmit, until, local: other.local, dst: grant.external }),
                cost: MappingCost::of(other),
            },
        ];
        if flip {
            sides.swap(0, 1);
        }
        let res = engine::run(net, Exchange { sides, relay: None, nonce, start: timing.start, deadline: until });
        let s = conclude(net, PunchStrategy::PortMapping, nonce, res, None, FailReason::Timeout);
        if s.is_established() {
            let mut s = s;
            let own = s.stats;
            s.stats = stats;
            s.stats.accumulate(&own);
            return s;
        }
        stats.accumulate(&s.stats);
        last = FailReason::Timeout;
    }
    TraversalSession::fail(PunchStrategy::PortMapping, last, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::natbox::NatClassName::*;
    use crate::scenario::World;

    #[test]
    fn grant_requested_port() {
        let mut w = World::two_peers_with(PortRestrictedCone, Symmetric, 1, |c| c.with_port_mapping(true));
        let (a, _, _) = w.introduce(0, 1).unwrap();
        let g = request_mapping(&mut w.net, &a, a.local.port(), 6881, 600).unwrap();
        assert_eq!(g.external.port(), 6881);
        assert_eq!(g.lifetime, SimTime::from_secs(600));
        let gw = w.net.parent(a.node).unwrap();
        let snap = w.net.nat(gw).unwrap().snapshot();
        assert!(snap.0.iter().any(|e| e.external_port == 6881 && e.internal == a.local));
    }

    #[test]
    fn taken_port_gets_alternative() {
        let mut w = World::two_peers_with(FullCone, FullCone, 2, |c| c.with_port_mapping(true));
        let (a, _, _) = w.introduce(0, 1).unwrap();
        let first = request_mapping(&mut w.net, &a, 7000, 6881, 600).unwrap();
        let second = request_mapping(&mut w.net, &a, 7001, 6881, 600).unwrap();
        assert_eq!(first.external.port(), 6881);
        assert_ne!(second.external.port(), 6881);
    }

    #[test]
    fn disabled_gateway() {
        let mut w = World::two_peers(FullCone, FullCone, 3);
        let (a, _, _) = w.introduce(0, 1).unwrap();
        assert_eq!(request_mapping(&mut w.net, &a, 7000, 6881, 600), Err(MappingError::Unsupported));
    }

    #[test]
    fn mapped_side_is_reachable_even_from_symmetric() {
        let mut w = World::two_peers_with(Symmetric, Symmetric, 4, |c| c.with_port_mapping(true));
        let (a, b, _) = w.introduce(0, 1).unwrap();
        let s = port_mapping_connect(&mut w.net, &a, &b, SimTime::from_secs(2));
        assert!(s.is_established(), "{:?}", s.state());
    }
}
