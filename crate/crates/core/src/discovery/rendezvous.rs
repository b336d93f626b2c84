use std::any::Any;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::netsim::{Datagram, EndpointAddress, Message, MessageKind, Network, NodeId, Responder, SimTime};

use super::{CandidateSet, DiscoveryError, PeerId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RendezvousRecord {
    pub peer: PeerId,
    pub candidates: CandidateSet,
    pub registered_at: SimTime,
    /// Where the server saw the registration come from; exchange replies go here.
    pub observed: EndpointAddress,
    pub punch_start: Option<SimTime>,
}

/// Synchronizer server: stores candidate sets and, on request, hands each
/// peer the other's candidates together with a common punch start time.
#[derive(Clone, Debug, Default)]
pub struct RendezvousServer {
    records: BTreeMap<PeerId, RendezvousRecord>,
    worst_rtt: SimTime,
}

impl RendezvousServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, peer: PeerId) -> Option<&RendezvousRecord> {
        self.records.get(&peer)
    }

    pub fn records(&self) -> impl Iterator<Item = &RendezvousRecord> {
        self.records.values()
    }
}

impl Responder for RendezvousServer {
    fn on_datagram(&mut self, now: SimTime, d: &Datagram) -> Vec<Datagram> {
        match d.message() {
            Ok(Message::Register { peer, candidates }) => {
                self.records.insert(
                    peer,
                    RendezvousRecord { peer, candidates, registered_at: now, observed: d.src, punch_start: None },
                );
                Vec::new()
            }
            Ok(Message::ExchangeReq { from, target, rtt_us }) => {
                for id in [from, target] {
                    if !self.records.contains_key(&id) {
                        return vec![Datagram::new(d.dst, d.src, &Message::ExchangeUnknown { peer: id })];
                    }
                }
                self.worst_rtt = self.worst_rtt.max(SimTime(rtt_us as u64));
                let (a, b) = (&self.records[&from], &self.records[&target]);
                let base = a.registered_at.max(b.registered_at).max(now);
                let start = base + SimTime(2 * self.worst_rtt.as_micros().max(1));
                let replies = vec![
                    Datagram::new(
                        d.dst,
                        d.src,
                        &Message::ExchangeResp { peer: target, candidates: b.candidates, start },
                    ),
                    Datagram::new(
                        d.dst,
                        b.observed,
                        &Message::ExchangeResp { peer: from, candidates: a.candidates, start },
                    ),
                ];
                for id in [from, target] {
                    self.records.get_mut(&id).unwrap().punch_start = Some(start);
                }
                replies
            }
            _ => Vec::new(),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Sends a REGISTER for `peer` from `local`.
pub fn register(
    net: &mut Network,
    node: NodeId,
    local: EndpointAddress,
    server: EndpointAddress,
    peer: PeerId,
    candidates: CandidateSet,
) -> Result<(), DiscoveryError> {
    net.send(node, Datagram::new(local, server, &Message::Register { peer, candidates }))?;
    Ok(())
}

/// What each side learned from an exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExchangeOutcome {
    /// B's candidates as delivered to A.
    pub for_a: CandidateSet,
    /// A's candidates as delivered to B.
    pub for_b: CandidateSet,
    pub start: SimTime,
}

/// One rendezvous participant: its node, the local endpoint it talks from,
/// and its peer id.
#[derive(Clone, Copy, Debug)]
pub struct Participant {
    pub node: NodeId,
    pub local: EndpointAddress,
    pub id: PeerId,
}

/// Asks the server to introduce A to B and waits for both halves of the
/// answer. Both peers must already be registered.
pub fn rendezvous_exchange(
    net: &mut Network,
    server: EndpointAddress,
    a: Participant,
    b: Participant,
    rtt: SimTime,
    wait: SimTime,
) -> Result<ExchangeOutcome, DiscoveryError> {
    let rtt_us = rtt.as_micros().min(u32::MAX as u64) as u32;
    net.send(a.node, Datagram::new(a.local, server, &Message::ExchangeReq { from: a.id, target: b.id, rtt_us }))?;
    let deadline = net.now() + wait;
    let (mut for_a, mut for_b, mut start) = (None, None, None);
    while for_a.is_none() || for_b.is_none() {
        let Some(ev) = net.step_until(deadline) else {
            return Err(DiscoveryError::Timeout);
        };
        let crate::netsim::StepOutcome::Delivered { node, datagram, .. } = ev else { continue };
        if datagram.kind() != MessageKind::Exchange {
            continue;
        }
        match datagram.message() {
            Ok(Message::ExchangeUnknown { peer }) if node == a.node => return Err(DiscoveryError::UnknownPeer(peer)),
            Ok(Message::ExchangeResp { peer, candidates, start: s }) => {
                if node == a.node && datagram.dst == a.local && peer == b.id {
                    for_a = Some(candidates);
                } else if node == b.node && datagram.dst == b.local && peer == a.id {
                    for_b = Some(candidates);
                } else {
                    continue;
                }
                start = Some(s);
            }
            _ => {}
        }
    }
    Ok(ExchangeOutcome { for_a: for_a.unwrap(), for_b: for_b.unwrap(), start: start.unwrap() })
}
