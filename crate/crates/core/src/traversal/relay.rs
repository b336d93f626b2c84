use std::any::Any;
use std::collections::HashMap;

use crate::netsim::{Datagram, EndpointAddress, Message, Network, Responder, SimTime};

use super::engine::{self, Exchange, MappingCost, Periodic, ReplyTo, Side};
use super::punch::{conclude, new_nonce, PunchTiming};
use super::{FailReason, Peer, PunchStrategy, TraversalSession};

pub const RELAY_PORT: u16 = 3480;

/// Forwarding server. Peers are known by the endpoint they name as the
/// inner source; the relay remembers where each was last seen from and
/// forwards to that observed address.
#[derive(Clone, Debug, Default)]
pub struct RelayServer {
    seen: HashMap<EndpointAddress, EndpointAddress>,
    forwarded: u64,
}

impl RelayServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }
}

impl Responder for RelayServer {
    fn on_datagram(&mut self, _now: SimTime, d: &Datagram) -> Vec<Datagram> {
        let Ok(Message::RelayFwd { src, dst, inner }) = d.message() else {
            return Vec::new();
        };
        self.seen.insert(src, d.src);
        match self.seen.get(&dst) {
            Some(&to) if dst != d.dst => {
                self.forwarded += 1;
                vec![Datagram::new(d.dst, to, &Message::RelayFwd { src, dst, inner })]
            }
            _ => Vec::new(),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Connects through a relay; every datagram in both directions transits it.
pub fn relay_connect(net: &mut Network, a: &Peer, b: &Peer, relay: EndpointAddress, timing: PunchTiming) -> TraversalSession {
    let until = timing.start.saturating_add(timing.timeout);
    let nonce = new_nonce(net, a.node);
    let side = |me: &Peer, peer: &Peer| Side {
        node: me.node,
        anchor: me.local,
        peer_anchor: peer.local,
        reply: ReplyTo::Observed,
        plan: Box::new(Periodic { next: timing.start, every: timing.retransmit, until, local: me.local, dst: relay }),
        cost: MappingCost::of(me),
    };
    let sides = [side(a, b), side(b, a)];
    let res = engine::run(net, Exchange { sides, relay: Some(relay), nonce, start: timing.start, deadline: until });
    conclude(net, PunchStrategy::Relay, nonce, res, Some(relay), FailReason::RelayDown)
}
