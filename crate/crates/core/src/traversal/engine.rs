//! Probe / ack / ack-ack exchange shared by every strategy. Each side
//! follows a probe plan; the exchange succeeds once both sides have seen
//! their own probe answered.

use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;

use crate::netsim::{Datagram, DropReason, EndpointAddress, Message, Network, NodeId, SimTime, StepOutcome};

use super::{PathEnd, PunchStats};

pub(crate) struct Planned {
    pub at: SimTime,
    pub local: EndpointAddress,
    pub dst: EndpointAddress,
}

/// Lazily produced probe schedule; times never decrease.
pub(crate) trait ProbePlan {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Option<Planned>;
}

pub(crate) struct NoProbes;

impl ProbePlan for NoProbes {
    fn next(&mut self, _: &mut ChaCha8Rng) -> Option<Planned> {
        None
    }
}

/// Same probe resent every `every` until `until`.
pub(crate) struct Periodic {
    pub next: SimTime,
    pub every: SimTime,
    pub until: SimTime,
    pub local: EndpointAddress,
    pub dst: EndpointAddress,
}

impl ProbePlan for Periodic {
    fn next(&mut self, _: &mut ChaCha8Rng) -> Option<Planned> {
        if self.next > self.until {
            return None;
        }
        let at = self.next;
        self.next = self.next + self.every.max(SimTime(1));
        Some(Planned { at, local: self.local, dst: self.dst })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ReplyTo {
    /// Answer wherever the datagram came from.
    Observed,
    /// Answer only the peer's advertised candidate.
    Candidate,
}

/// How probes translate into NAT mappings on this side's path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum MappingCost {
    None,
    PerLocal,
    PerFlow,
}

impl MappingCost {
    pub fn of(peer: &super::Peer) -> Self {
        if !peer.is_natted() {
            MappingCost::None
        } else if peer.is_edm() {
            MappingCost::PerFlow
        } else {
            MappingCost::PerLocal
        }
    }
}

pub(crate) struct Side {
    pub node: NodeId,
    /// Reply source in candidate mode and the identity used at a relay.
    pub anchor: EndpointAddress,
    /// The peer's candidate (or relay identity).
    pub peer_anchor: EndpointAddress,
    pub reply: ReplyTo,
    pub plan: Box<dyn ProbePlan>,
    pub cost: MappingCost,
}

pub(crate) struct Exchange {
    pub sides: [Side; 2],
    pub relay: Option<EndpointAddress>,
    pub nonce: u64,
    pub start: SimTime,
    pub deadline: SimTime,
}

pub(crate) struct ExchangeResult {
    pub established: Option<[PathEnd; 2]>,
    pub stats: PunchStats,
    /// Some NAT refused a mapping for lack of table space during the run.
    pub table_full: bool,
}

struct Tally {
    probes: u64,
    locals: HashSet<EndpointAddress>,
    flows: HashSet<(EndpointAddress, EndpointAddress)>,
}

impl Tally {
    fn mappings(&self, cost: MappingCost) -> u64 {
        match cost {
            MappingCost::None => 0,
            MappingCost::PerLocal => self.locals.len() as u64,
            MappingCost::PerFlow => self.flows.len() as u64,
        }
    }
}

fn transmit(net: &mut Network, side: &Side, relay: Option<EndpointAddress>, local: EndpointAddress, to: EndpointAddress, msg: &Message) {
    let d = match relay {
        Some(r) => Datagram::new(
            side.anchor,
            r,
            &Message::RelayFwd { src: side.anchor, dst: side.peer_anchor, inner: msg.encode() },
        ),
        None => Datagram::new(local, to, msg),
    };
    // The source always belongs to the sending node, so this cannot fail.
    let _ = net.send(side.node, d);
}

/// Unwraps a delivered datagram into (message, local endpoint, sender).
fn receive(side: &Side, relay: Option<EndpointAddress>, d: &Datagram) -> Option<(Message, EndpointAddress, EndpointAddress)> {
    match relay {
        Some(r) => {
            if d.src != r || d.dst != side.anchor {
                return None;
            }
            match d.message().ok()? {
                Message::RelayFwd { src, dst, inner } if dst == side.anchor && src == side.peer_anchor => {
                    Some((Message::decode(&inner).ok()?, side.anchor, side.peer_anchor))
                }
                _ => None,
            }
        }
        None => Some((d.message().ok()?, d.dst, d.src)),
    }
}

pub(crate) fn run(net: &mut Network, mut x: Exchange) -> ExchangeResult {
    let full_before = net.drops(DropReason::TableFull);
    let tokens = [net.fresh_token(), net.fresh_token()];
    let mut pending: [Option<Planned>; 2] = [None, None];
    let mut tally: [Tally; 2] = std::array::from_fn(|_| Tally { probes: 0, locals: HashSet::new(), flows: HashSet::new() });
    let mut done: [Option<PathEnd>; 2] = [None, None];
    let mut finished_at = None;

    for i in 0..2 {
        let node = x.sides[i].node;
        pending[i] = x.sides[i].plan.next(net.rng(node));
        if let Some(p) = &pending[i] {
            net.schedule_timer(p.at.max(net.now()), tokens[i]);
        }
    }

    while let Some(ev) = net.step_until(x.deadline) {
        match ev {
            StepOutcome::Timer { token } => {
                let Some(i) = tokens.iter().position(|t| *t == token) else { continue };
                let Some(p) = pending[i].take() else { continue };
                let side = &x.sides[i];
                transmit(net, side, x.relay, p.local, p.dst, &Message::Probe { nonce: x.nonce });
                let t = &mut tally[i];
                t.probes += 1;
                match (side.cost, x.relay) {
                    (MappingCost::None, _) => {}
                    (_, Some(r)) => {
                        t.locals.insert(side.anchor);
                        t.flows.insert((side.anchor, r));
                    }
                    (MappingCost::PerLocal, None) => {
                        t.locals.insert(p.local);
                    }
                    (MappingCost::PerFlow, None) => {
                        t.flows.insert((p.local, p.dst));
                    }
                }
                let node = side.node;
                pending[i] = x.sides[i].plan.next(net.rng(node));
                if let Some(p) = &pending[i] {
                    net.schedule_timer(p.at.max(net.now()), tokens[i]);
                }
            }
            StepOutcome::Delivered { node, datagram, .. } => {
                let Some(i) = x.sides.iter().position(|s| s.node == node) else { continue };
                let side = &x.sides[i];
                let Some((msg, local, from)) = receive(side, x.relay, &datagram) else { continue };
                let reply_to = match side.reply {
                    ReplyTo::Observed => from,
                    ReplyTo::Candidate => side.peer_anchor,
                };
                match msg {
                    Message::Probe { nonce } if nonce == x.nonce => {
                        transmit(net, side, x.relay, local, reply_to, &Message::ProbeAck { nonce });
                    }
                    Message::ProbeAck { nonce } if nonce == x.nonce => {
                        transmit(net, side, x.relay, local, reply_to, &Message::AckAck { nonce });
                        done[i].get_or_insert(PathEnd { node, local, remote: from });
                    }
                    Message::AckAck { nonce } if nonce == x.nonce => {
                        done[i].get_or_insert(PathEnd { node, local, remote: from });
                    }
                    _ => continue,
                }
                if done.iter().all(Option::is_some) {
                    finished_at = Some(net.now());
                    break;
                }
            }
            _ => {}
        }
    }

    let end = finished_at.unwrap_or_else(|| net.now());
    let stats = PunchStats {
        probes_sent: [tally[0].probes, tally[1].probes],
        mappings_consumed: [tally[0].mappings(x.sides[0].cost), tally[1].mappings(x.sides[1].cost)],
        elapsed: end.saturating_sub(x.start),
    };
    ExchangeResult {
        established: finished_at.map(|_| [done[0].unwrap(), done[1].unwrap()]),
        stats,
        table_full: net.drops(DropReason::TableFull) > full_before,
    }
}
