use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::natbox::{ConfigError, NatBox, NatConfig, NatError, Outbound};

use super::trace::{DropReason, EventTrace, TraceEntry, TraceKind};
use super::{Datagram, EndpointAddress, HostId, LinkProfile, Message, MessageKind, SimTime};

/// Name reserved for the public core every top-level node hangs off.
pub const INTERNET: &str = "internet";

/// Port a NAT answers port-mapping requests on.
pub const PORT_MAPPING_PORT: u16 = 5351;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("duplicate node name {0:?}")]
    DuplicateNode(String),
    #[error("link references unknown node {0:?}")]
    DanglingLink(String),
    #[error("node {0:?} has more than one uplink")]
    DuplicateUplink(String),
    #[error("node {0:?} cannot be attached below host {1:?}")]
    ParentNotNat(String, String),
    #[error("nesting cycle through {0:?}")]
    Cycle(String),
    #[error("address {0} assigned twice")]
    DuplicateAddress(HostId),
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("invalid NAT {0:?}: {1}")]
    InvalidNat(String, ConfigError),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0} is not a host")]
    NotAHost(usize),
    #[error("datagram source {0} does not belong to the sending node")]
    ForeignSource(EndpointAddress),
}

/// Declarative node description.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeSpec {
    Host { name: String, address: HostId },
    Nat { name: String, config: NatConfig },
}

impl NodeSpec {
    pub fn host(name: impl Into<String>, address: HostId) -> Self {
        NodeSpec::Host { name: name.into(), address }
    }

    pub fn nat(name: impl Into<String>, config: NatConfig) -> Self {
        NodeSpec::Nat { name: name.into(), config }
    }

    pub fn name(&self) -> &str {
        match self {
            NodeSpec::Host { name, .. } | NodeSpec::Nat { name, .. } => name,
        }
    }
}

/// Access link from `child` up to `parent` (a NAT or [`INTERNET`]).
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub child: String,
    pub parent: String,
    pub profile: LinkProfile,
}

impl LinkSpec {
    pub fn new(child: impl Into<String>, parent: impl Into<String>, profile: LinkProfile) -> Self {
        LinkSpec { child: child.into(), parent: parent.into(), profile }
    }
}

/// Nodes plus access links. A node without a link hangs off the internet
/// with the default link profile.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TopologySpec {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub seed: u64,
}

impl TopologySpec {
    pub fn new(seed: u64) -> Self {
        TopologySpec { seed, ..Default::default() }
    }

    pub fn node(mut self, n: NodeSpec) -> Self {
        self.nodes.push(n);
        self
    }

    pub fn link(mut self, child: &str, parent: &str, profile: LinkProfile) -> Self {
        self.links.push(LinkSpec::new(child, parent, profile));
        self
    }
}

/// Application-level behavior attached to a host, such as a STUN server.
pub trait Responder: Any {
    /// Handles a datagram delivered to the host; returned datagrams are sent
    /// immediately from the same host.
    fn on_datagram(&mut self, now: SimTime, d: &Datagram) -> Vec<Datagram>;
    fn as_any(&self) -> &dyn Any;
}

pub enum NodeKind {
    Host { address: HostId, responder: Option<Box<dyn Responder>>, up: bool },
    Nat(NatBox),
}

impl fmt::Debug for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Host { address, up, responder } => f
                .debug_struct("Host")
                .field("address", address)
                .field("up", up)
                .field("responder", &responder.is_some())
                .finish(),
            NodeKind::Nat(n) => f.debug_tuple("Nat").field(n.config()).finish(),
        }
    }
}

#[derive(Debug)]
struct Node {
    name: String,
    kind: NodeKind,
    parent: Option<NodeId>,
    link: LinkProfile,
    // pacing state in units of microseconds * rate_cap_pps
    next_free_up: u128,
    next_free_down: u128,
    rng: ChaCha8Rng,
    link_rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Hop {
    Internet,
    Node(NodeId),
}

#[derive(Debug)]
enum Event {
    Transmit { origin: NodeId, d: Datagram },
    Arrive { at: Hop, from_inside: bool, d: Datagram, seq: u64 },
    Timer { token: u64 },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    order: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.order) == (other.time, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.order).cmp(&(self.time, self.order))
    }
}

/// Result of processing one event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// A datagram reached the host it was addressed to.
    Delivered { node: NodeId, datagram: Datagram, seq: u64 },
    Dropped { seq: u64, reason: DropReason },
    Sent { seq: u64 },
    /// An intermediate hop was processed.
    Forwarded,
    Timer { token: u64 },
}

/// Counters kept regardless of trace recording.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NetCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// The simulated network.
pub struct Network {
    nodes: Vec<Node>,
    by_name: HashMap<String, NodeId>,
    owners: HashMap<HostId, NodeId>,
    gateways: HashMap<HostId, NodeId>,
    queue: BinaryHeap<Scheduled>,
    now: SimTime,
    order: u64,
    next_seq: u64,
    next_token: u64,
    drops_by_reason: HashMap<DropReason, u64>,
    trace: EventTrace,
    record_trace: bool,
    counters: NetCounters,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("nodes", &self.nodes.len())
            .field("now", &self.now)
            .field("pending", &self.queue.len())
            .finish()
    }
}

fn derive_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Network {
    /// Builds a network from a topology description.
    pub fn build(spec: &TopologySpec) -> Result<Network, NetworkError> {
        let mut by_name = HashMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if n.name() == INTERNET || by_name.insert(n.name().to_string(), NodeId(i)).is_some() {
                return Err(NetworkError::DuplicateNode(n.name().to_string()));
            }
        }
        let mut parent: Vec<Option<NodeId>> = vec![None; spec.nodes.len()];
        let mut link: Vec<LinkProfile> = vec![LinkProfile::default(); spec.nodes.len()];
        let mut seen = HashSet::new();
        for l in &spec.links {
            let child = *by_name
                .get(&l.child)
                .ok_or_else(|| NetworkError::DanglingLink(l.child.clone()))?;
            if !seen.insert(child) {
                return Err(NetworkError::DuplicateUplink(l.child.clone()));
            }
            LinkProfile::new(l.profile.latency, l.profile.loss_rate, l.profile.rate_cap_pps)?;
            link[child.0] = l.profile;
            if l.parent != INTERNET {
                let p = *by_name
                    .get(&l.parent)
                    .ok_or_else(|| NetworkError::DanglingLink(l.parent.clone()))?;
                if !matches!(spec.nodes[p.0], NodeSpec::Nat { .. }) {
                    return Err(NetworkError::ParentNotNat(l.child.clone(), l.parent.clone()));
                }
                parent[child.0] = Some(p);
            }
        }
        for start in 0..spec.nodes.len() {
            let mut cur = parent[start];
            let mut hops = 0;
            while let Some(p) = cur {
                hops += 1;
                if p.0 == start || hops > spec.nodes.len() {
                    return Err(NetworkError::Cycle(spec.nodes[start].name().to_string()));
                }
                cur = parent[p.0];
            }
        }

        let mut owners = HashMap::new();
        let mut gateways = HashMap::new();
        let mut nodes = Vec::with_capacity(spec.nodes.len());
        for (i, n) in spec.nodes.iter().enumerate() {
            let kind = match n {
                NodeSpec::Host { address, .. } => {
                    if owners.insert(*address, NodeId(i)).is_some() || !address.is_assigned() {
                        return Err(NetworkError::DuplicateAddress(*address));
                    }
                    NodeKind::Host { address: *address, responder: None, up: true }
                }
                NodeSpec::Nat { name, config } => {
                    let mut config = config.clone();
                    if !config.gateway_host.is_assigned() {
                        config.gateway_host = HostId(0x0A00_0001 | ((i as u32 + 1) << 8));
                    }
                    if owners.insert(config.external_host, NodeId(i)).is_some() {
                        return Err(NetworkError::DuplicateAddress(config.external_host));
                    }
                    gateways.insert(config.gateway_host, NodeId(i));
                    NodeKind::Nat(NatBox::new(config).map_err(|e| NetworkError::InvalidNat(name.clone(), e))?)
                }
            };
            nodes.push(Node {
                name: n.name().to_string(),
                kind,
                parent: parent[i],
                link: link[i],
                next_free_up: 0,
                next_free_down: 0,
                rng: derive_stream(spec.seed, 2 * i as u64),
                link_rng: derive_stream(spec.seed, 2 * i as u64 + 1),
            });
        }
        if let Some(g) = gateways.keys().find(|g| owners.contains_key(g)) {
            return Err(NetworkError::DuplicateAddress(*g));
        }
        Ok(Network {
            nodes,
            by_name,
            owners,
            gateways,
            queue: BinaryHeap::new(),
            now: SimTime::ZERO,
            order: 0,
            next_seq: 0,
            next_token: 1 << 32,
            drops_by_reason: HashMap::new(),
            trace: EventTrace::default(),
            record_trace: true,
            counters: NetCounters::default(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, NetworkError> {
        self.by_name.get(name).copied().ok_or_else(|| NetworkError::UnknownNode(name.to_string()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.0].kind
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    /// NATs between `id` and the internet, innermost first.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.parent(id);
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent(p);
        }
        out
    }

    pub fn host_address(&self, id: NodeId) -> Result<HostId, NetworkError> {
        match &self.nodes[id.0].kind {
            NodeKind::Host { address, .. } => Ok(*address),
            NodeKind::Nat(_) => Err(NetworkError::NotAHost(id.0)),
        }
    }

    pub fn endpoint(&self, id: NodeId, port: u16) -> Result<EndpointAddress, NetworkError> {
        let host = self.host_address(id)?;
        EndpointAddress::new(host, port).map_err(|_| NetworkError::ForeignSource(EndpointAddress::from_parts(host.0, 1)))
    }

    pub fn nat(&self, id: NodeId) -> Option<&NatBox> {
        match &self.nodes[id.0].kind {
            NodeKind::Nat(n) => Some(n),
            NodeKind::Host { .. } => None,
        }
    }

    pub fn nat_mut(&mut self, id: NodeId) -> Option<&mut NatBox> {
        match &mut self.nodes[id.0].kind {
            NodeKind::Nat(n) => Some(n),
            NodeKind::Host { .. } => None,
        }
    }

    pub fn set_responder(&mut self, id: NodeId, r: Box<dyn Responder>) -> Result<(), NetworkError> {
        match &mut self.nodes[id.0].kind {
            NodeKind::Host { responder, .. } => {
                *responder = Some(r);
                Ok(())
            }
            NodeKind::Nat(_) => Err(NetworkError::NotAHost(id.0)),
        }
    }

    pub fn responder<T: Responder>(&self, id: NodeId) -> Option<&T> {
        match &self.nodes[id.0].kind {
            NodeKind::Host { responder: Some(r), .. } => r.as_any().downcast_ref(),
            _ => None,
        }
    }

    /// Takes a host offline; datagrams reaching it are dropped.
    pub fn set_up(&mut self, id: NodeId, on: bool) {
        if let NodeKind::Host { up, .. } = &mut self.nodes[id.0].kind {
            *up = on;
        }
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn counters(&self) -> NetCounters {
        self.counters
    }

    /// A timer token no other caller has been handed.
    pub fn fresh_token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    pub fn drops(&self, reason: DropReason) -> u64 {
        self.drops_by_reason.get(&reason).copied().unwrap_or(0)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|s| s.time)
    }

    /// Random stream owned by a node, for application-level choices.
    pub fn rng(&mut self, id: NodeId) -> &mut ChaCha8Rng {
        &mut self.nodes[id.0].rng
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        self.order += 1;
        self.queue.push(Scheduled { time, order: self.order, event });
    }

    /// Sends a datagram from a host now.
    pub fn send(&mut self, origin: NodeId, d: Datagram) -> Result<u64, NetworkError> {
        self.check_origin(origin, &d)?;
        Ok(self.transmit(origin, d))
    }

    /// Schedules a send at a later instant (clamped to now).
    pub fn send_at(&mut self, at: SimTime, origin: NodeId, d: Datagram) -> Result<(), NetworkError> {
        self.check_origin(origin, &d)?;
        let at = at.max(self.now);
        self.schedule(at, Event::Transmit { origin, d });
        Ok(())
    }

    pub fn schedule_timer(&mut self, at: SimTime, token: u64) {
        let at = at.max(self.now);
        self.schedule(at, Event::Timer { token });
    }

    fn check_origin(&self, origin: NodeId, d: &Datagram) -> Result<(), NetworkError> {
        if self.host_address(origin)? != d.src.host() {
            return Err(NetworkError::ForeignSource(d.src));
        }
        Ok(())
    }

    fn record(&mut self, kind: TraceKind, d: &Datagram, seq: u64, reason: Option<DropReason>) {
        match kind {
            TraceKind::Send => self.counters.sent += 1,
            TraceKind::Deliver => self.counters.delivered += 1,
            TraceKind::Drop => {
                self.counters.dropped += 1;
                if let Some(r) = reason {
                    *self.drops_by_reason.entry(r).or_insert(0) += 1;
                }
            }
        }
        if self.record_trace {
            self.trace.push(TraceEntry {
                time_us: self.now.as_micros(),
                kind,
                src: d.src,
                dst: d.dst,
                message: d.kind(),
                seq,
                reason,
            });
        }
    }

    fn drop_datagram(&mut self, d: &Datagram, seq: u64, reason: DropReason) -> StepOutcome {
        self.record(TraceKind::Drop, d, seq, Some(reason));
        StepOutcome::Dropped { seq, reason }
    }

    fn transmit(&mut self, origin: NodeId, d: Datagram) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.record(TraceKind::Send, &d, seq, None);
        let to = match self.nodes[origin.0].parent {
            Some(p) => Hop::Node(p),
            None => Hop::Internet,
        };
        self.traverse(origin, true, to, true, d, seq);
        seq
    }

    /// Moves a datagram across `via`'s access link.
    fn traverse(&mut self, via: NodeId, upward: bool, to: Hop, from_inside: bool, d: Datagram, seq: u64) {
        let node = &mut self.nodes[via.0];
        let link = node.link;
        let lost = link.loss_rate >= 1.0
            || (link.loss_rate > 0.0 && node.link_rng.gen_bool(link.loss_rate));
        if lost {
            self.drop_datagram(&d, seq, DropReason::Loss);
            return;
        }
        let mut depart = self.now;
        if let Some(pps) = link.rate_cap_pps {
            let pps = pps as u128;
            let slot = if upward { &mut node.next_free_up } else { &mut node.next_free_down };
            let start = (*slot).max(self.now.as_micros() as u128 * pps);
            *slot = start + 1_000_000;
            depart = SimTime(start.div_ceil(pps) as u64);
        }
        self.schedule(depart + link.latency, Event::Arrive { at: to, from_inside, d, seq });
    }

    fn route_down(&mut self, from: Hop, d: Datagram, seq: u64) -> StepOutcome {
        let target = self.owners.get(&d.dst.host()).copied();
        let parent = match from {
            Hop::Internet => None,
            Hop::Node(n) => Some(n),
        };
        match target {
            Some(t) if self.nodes[t.0].parent == parent => {
                self.traverse(t, false, Hop::Node(t), false, d, seq);
                StepOutcome::Forwarded
            }
            _ => self.drop_datagram(&d, seq, DropReason::Unroutable),
        }
    }

    /// Pops and processes the earliest event.
    pub fn step(&mut self) -> Option<StepOutcome> {
        let Scheduled { time, event, .. } = self.queue.pop()?;
        debug_assert!(time >= self.now);
        self.now = time;
        Some(match event {
            Event::Timer { token } => StepOutcome::Timer { token },
            Event::Transmit { origin, d } => StepOutcome::Sent { seq: self.transmit(origin, d) },
            Event::Arrive { at: Hop::Internet, d, seq, .. } => self.route_down(Hop::Internet, d, seq),
            Event::Arrive { at: Hop::Node(id), from_inside, d, seq } => self.arrive(id, from_inside, d, seq),
        })
    }

    /// Pops the next event if it is due at or before `limit`; otherwise
    /// advances the clock to `limit` and returns `None`.
    pub fn step_until(&mut self, limit: SimTime) -> Option<StepOutcome> {
        match self.next_event_time() {
            Some(t) if t <= limit => self.step(),
            _ => {
                self.now = self.now.max(limit);
                None
            }
        }
    }

    /// Steps until `limit` (or until the queue drains when `None`), returning
    /// the trace entries recorded meanwhile.
    pub fn run_until(&mut self, limit: Option<SimTime>) -> EventTrace {
        let start = self.trace.len();
        match limit {
            Some(limit) => while self.step_until(limit).is_some() {},
            None => while self.step().is_some() {},
        }
        EventTrace { entries: self.trace.entries[start..].to_vec() }
    }

    fn arrive(&mut self, id: NodeId, from_inside: bool, d: Datagram, seq: u64) -> StepOutcome {
        let now = self.now;
        if let NodeKind::Host { address, up, .. } = self.nodes[id.0].kind {
            if !up {
                return self.drop_datagram(&d, seq, DropReason::NodeDown);
            }
            if d.dst.host() != address {
                return self.drop_datagram(&d, seq, DropReason::Unroutable);
            }
            let replies = match &mut self.nodes[id.0].kind {
                NodeKind::Host { responder: Some(r), .. } => r.on_datagram(now, &d),
                _ => Vec::new(),
            };
            self.record(TraceKind::Deliver, &d, seq, None);
            for r in replies {
                if self.check_origin(id, &r).is_ok() {
                    self.transmit(id, r);
                }
            }
            return StepOutcome::Delivered { node: id, datagram: d, seq };
        }
        if !from_inside {
            let NodeKind::Nat(nat) = &mut self.nodes[id.0].kind else { unreachable!() };
            return match nat.translate_inbound(&d, now) {
                Some(inner) => self.route_down(Hop::Node(id), inner, seq),
                None => self.drop_datagram(&d, seq, DropReason::Filtered),
            };
        }
        if self.gateways.get(&d.dst.host()) == Some(&id) {
            return self.port_mapping_request(id, d, seq);
        }
        if let Some(&t) = self.owners.get(&d.dst.host()) {
            if self.nodes[t.0].parent == Some(id) {
                return self.route_down(Hop::Node(id), d, seq);
            }
        }
        let node = &mut self.nodes[id.0];
        let NodeKind::Nat(nat) = &mut node.kind else { unreachable!() };
        match nat.translate_outbound(&d, now, &mut node.rng) {
            Ok(Outbound::Forward(out)) => {
                let to = match node.parent {
                    Some(p) => Hop::Node(p),
                    None => Hop::Internet,
                };
                self.traverse(id, true, to, true, out, seq);
                StepOutcome::Forwarded
            }
            Ok(Outbound::Hairpin(Some(looped))) => self.route_down(Hop::Node(id), looped, seq),
            Ok(Outbound::Hairpin(None)) => self.drop_datagram(&d, seq, DropReason::Filtered),
            Err(NatError::TableFull) => self.drop_datagram(&d, seq, DropReason::TableFull),
            Err(NatError::PortExhausted) => self.drop_datagram(&d, seq, DropReason::PortExhausted),
            Err(NatError::HairpinDisabled | NatError::Unsupported) => {
                self.drop_datagram(&d, seq, DropReason::HairpinDisabled)
            }
        }
    }

    fn port_mapping_request(&mut self, id: NodeId, d: Datagram, seq: u64) -> StepOutcome {
        let now = self.now;
        let Ok(Message::PmpReq { internal_port, requested_port, lifetime_s }) = d.message() else {
            return self.drop_datagram(&d, seq, DropReason::Unroutable);
        };
        self.record(TraceKind::Deliver, &d, seq, None);
        let node = &mut self.nodes[id.0];
        let NodeKind::Nat(nat) = &mut node.kind else { unreachable!() };
        let gateway = EndpointAddress::new(nat.config().gateway_host, PORT_MAPPING_PORT).expect("non-zero port");
        let reply = match EndpointAddress::new(d.src.host(), internal_port.max(1)) {
            Ok(internal) => {
                let lifetime = SimTime::from_secs(lifetime_s as u64);
                match nat.install_static(internal, requested_port, lifetime, now, &mut node.rng) {
                    Ok(port) => Message::PmpResp { status: 0, granted_port: port, lifetime_s },
                    Err(NatError::Unsupported) => Message::PmpResp { status: 1, granted_port: 0, lifetime_s: 0 },
                    Err(_) => Message::PmpResp { status: 2, granted_port: 0, lifetime_s: 0 },
                }
            }
            Err(_) => Message::PmpResp { status: 2, granted_port: 0, lifetime_s: 0 },
        };
        let resp = Datagram::new(gateway, d.src, &reply);
        let rseq = self.next_seq;
        self.next_seq += 1;
        self.record(TraceKind::Send, &resp, rseq, None);
        self.route_down(Hop::Node(id), resp, rseq);
        StepOutcome::Delivered { node: id, datagram: d, seq }
    }

    /// Host node whose address is `host`, if any.
    pub fn owner_of(&self, host: HostId) -> Option<NodeId> {
        self.owners.get(&host).copied()
    }

    /// Ids of every datagram kind sent so far, for diagnostics.
    pub fn kinds_sent(&self) -> HashMap<MessageKind, usize> {
        let mut m = HashMap::new();
        for e in self.trace.iter().filter(|e| e.kind == TraceKind::Send) {
            *m.entry(e.message).or_insert(0) += 1;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::natbox::{NatClassName, NatConfig};

    fn two_hosts(seed: u64, profile: LinkProfile) -> Network {
        let spec = TopologySpec::new(seed)
            .node(NodeSpec::host("a", HostId(1)))
            .node(NodeSpec::host("b", HostId(2)))
            .link("a", INTERNET, profile)
            .link("b", INTERNET, LinkProfile::lossless(SimTime::ZERO));
        Network::build(&spec).unwrap()
    }

    fn probe(src: u32, dst: u32, n: u64) -> Datagram {
        Datagram::new(
            EndpointAddress::from_parts(src, 1000),
            EndpointAddress::from_parts(dst, 2000),
            &Message::Probe { nonce: n },
        )
    }

    #[test]
    fn empty_network_has_no_events() {
        let mut net = Network::build(&TopologySpec::new(0)).unwrap();
        assert!(net.is_empty());
        assert!(net.step().is_none());
        assert_eq!(net.now(), SimTime::ZERO);
        assert!(net.run_until(None).is_empty());
    }

    #[test]
    fn build_errors() {
        let dup = TopologySpec::new(0)
            .node(NodeSpec::host("a", HostId(1)))
            .node(NodeSpec::host("a", HostId(2)));
        assert_eq!(Network::build(&dup).unwrap_err(), NetworkError::DuplicateNode("a".into()));
        let dangling = TopologySpec::new(0)
            .node(NodeSpec::host("a", HostId(1)))
            .link("a", "nowhere", LinkProfile::default());
        assert_eq!(Network::build(&dangling).unwrap_err(), NetworkError::DanglingLink("nowhere".into()));
        let cfg = |h| NatConfig::for_class(NatClassName::FullCone, HostId(h));
        let cyc = TopologySpec::new(0)
            .node(NodeSpec::nat("n1", cfg(10)))
            .node(NodeSpec::nat("n2", cfg(11)))
            .link("n1", "n2", LinkProfile::default())
            .link("n2", "n1", LinkProfile::default());
        assert!(matches!(Network::build(&cyc).unwrap_err(), NetworkError::Cycle(_)));
    }

    #[test]
    fn latency_is_added() {
        let mut net = two_hosts(1, LinkProfile::lossless(SimTime(10_000)));
        let a = net.node_id("a").unwrap();
        net.send(a, probe(1, 2, 0)).unwrap();
        let trace = net.run_until(None);
        let deliver = trace.iter().find(|e| e.kind == TraceKind::Deliver).unwrap();
        assert_eq!(deliver.time_us, 10_000);
        assert_eq!(net.len(), 2);
    }

    #[test]
    fn certain_loss_delivers_nothing() {
        let mut net = two_hosts(1, LinkProfile::new(SimTime(5), 1.0, None).unwrap());
        let a = net.node_id("a").unwrap();
        for i in 0..50 {
            net.send(a, probe(1, 2, i)).unwrap();
        }
        net.run_until(None);
        let t = net.trace();
        assert_eq!(t.count(TraceKind::Deliver), 0);
        assert_eq!(t.count(TraceKind::Drop), 50);
    }

    #[test]
    fn rate_cap_paces_deliveries() {
        let mut net = two_hosts(1, LinkProfile::new(SimTime(100), 0.0, Some(1000)).unwrap());
        let a = net.node_id("a").unwrap();
        for i in 0..10 {
            net.send(a, probe(1, 2, i)).unwrap();
        }
        let times: Vec<u64> = net
            .run_until(None)
            .iter()
            .filter(|e| e.kind == TraceKind::Deliver)
            .map(|e| e.time_us)
            .collect();
        assert_eq!(times.len(), 10);
        assert!(times.windows(2).all(|w| w[1] - w[0] >= 1000), "{times:?}");
        assert_eq!(times[0], 100);
    }

    #[test]
    fn equal_time_events_pop_in_insertion_order() {
        let mut net = two_hosts(1, LinkProfile::lossless(SimTime::ZERO));
        net.schedule_timer(SimTime(5), 1);
        net.schedule_timer(SimTime(5), 2);
        assert_eq!(net.step(), Some(StepOutcome::Timer { token: 1 }));
        assert_eq!(net.step(), Some(StepOutcome::Timer { token: 2 }));
        assert_eq!(net.now(), SimTime(5));
    }

    #[test]
    fn run_until_boundary_keeps_event_queued() {
        let mut net = two_hosts(1, LinkProfile::lossless(SimTime(10_000)));
        let a = net.node_id("a").unwrap();
        assert!(net.run_until(Some(SimTime(5))).is_empty());
        net.send(a, probe(1, 2, 0)).unwrap();
        let t = net.run_until(Some(SimTime(9_999)));
        assert_eq!(t.count(TraceKind::Deliver), 0);
        assert_eq!(net.pending(), 1);
        let t = net.run_until(Some(SimTime(20_000)));
        assert_eq!(t.count(TraceKind::Deliver), 1);
    }

    #[test]
    fn foreign_source_rejected() {
        let mut net = two_hosts(1, LinkProfile::default());
        let a = net.node_id("a").unwrap();
        assert!(matches!(net.send(a, probe(2, 1, 0)), Err(NetworkError::ForeignSource(_))));
    }

    #[test]
    fn unroutable_is_traced_drop() {
        let mut net = two_hosts(1, LinkProfile::default());
        let a = net.node_id("a").unwrap();
        net.send(a, probe(1, 99, 0)).unwrap();
        let t = net.run_until(None);
        assert_eq!(t.entries.last().unwrap().reason, Some(DropReason::Unroutable));
    }

    #[test]
    fn nested_nat_rewrites_twice() {
        let home = NatConfig::for_class(NatClassName::FullCone, HostId::from([100, 64, 0, 2]));
        let cg = NatConfig::for_class(NatClassName::FullCone, HostId::from([203, 0, 113, 1])).carrier_grade(true);
        let spec = TopologySpec::new(4)
            .node(NodeSpec::host("pc", HostId::from([192, 168, 1, 2])))
            .node(NodeSpec::nat("home", home))
            .node(NodeSpec::nat("cgnat", cg))
            .node(NodeSpec::host("srv", HostId::from([8, 8, 8, 8])))
            .link("pc", "home", LinkProfile::lossless(SimTime(1)))
            .link("home", "cgnat", LinkProfile::lossless(SimTime(1)))
            .link("cgnat", INTERNET, LinkProfile::lossless(SimTime(1)))
            .link("srv", INTERNET, LinkProfile::lossless(SimTime(1)));
        let mut net = Network::build(&spec).unwrap();
        let pc = net.node_id("pc").unwrap();
        let d = Datagram::new(
            EndpointAddress::new(HostId::from([192, 168, 1, 2]), 4000).unwrap(),
            EndpointAddress::new(HostId::from([8, 8, 8, 8]), 3478).unwrap(),
            &Message::StunReq,
        );
        net.send(pc, d).unwrap();
        let t = net.run_until(None);
        let del = t.iter().find(|e| e.kind == TraceKind::Deliver).unwrap();
        assert_eq!(del.src.host(), HostId::from([203, 0, 113, 1]));
        assert_eq!(net.nat(net.node_id("home").unwrap()).unwrap().len(), 1);
        assert_eq!(net.nat(net.node_id("cgnat").unwrap()).unwrap().len(), 1);
        let home_entry = net.nat(net.node_id("home").unwrap()).unwrap().entries().next().unwrap().external_port;
        let cg_entry = net.nat(net.node_id("cgnat").unwrap()).unwrap().entries().next().unwrap();
        assert_eq!(cg_entry.internal.port(), home_entry);
        assert_eq!(cg_entry.internal.host(), HostId::from([100, 64, 0, 2]));
    }
}
