use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::discovery::{CandidateSet, MappedAddress, PeerId};
use crate::natbox::{NatClassName, NatConfig};
use crate::netsim::{
    EndpointAddress, HostId, LinkProfile, Network, NodeId, NodeSpec, SimTime, TopologySpec, INTERNET,
};

use super::engine::{self, Exchange, ExchangeResult, MappingCost, NoProbes, Periodic, Planned, ProbePlan, ReplyTo, Side};
use super::{
    nat_hosts_above, shared_nats, FailReason, PathEnd, PathKind, Peer, PunchStats, PunchStrategy, SessionPath,
    SessionState, TraversalSession,
};

/// When an attempt starts, how long it may run, and how often a
/// periodic probe is resent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PunchTiming {
    pub start: SimTime,
    pub timeout: SimTime,
    pub retransmit: SimTime,
}

impl PunchTiming {
    pub const DEFAULT_TIMEOUT: SimTime = SimTime::from_secs(5);
    pub const DEFAULT_RETRANSMIT: SimTime = SimTime::from_millis(100);

    pub fn at(start: SimTime) -> Self {
        PunchTiming { start, timeout: Self::DEFAULT_TIMEOUT, retransmit: Self::DEFAULT_RETRANSMIT }
    }

    pub fn with_timeout(mut self, timeout: SimTime) -> Self {
        self.timeout = timeout;
        self
    }

    fn deadline(&self) -> SimTime {
        self.start.saturating_add(self.timeout)
    }
}

pub(crate) fn new_nonce(net: &mut Network, node: NodeId) -> u64 {
    net.rng(node).gen()
}

fn is_hairpin(net: &Network, end: &PathEnd) -> bool {
    nat_hosts_above(net, end.node).contains(&end.remote.host())
}

/// Turns an exchange result into a finished session.
pub(crate) fn conclude(
    net: &Network,
    strategy: PunchStrategy,
    nonce: u64,
    res: ExchangeResult,
    relay: Option<EndpointAddress>,
    failure: FailReason,
) -> TraversalSession {
    let Some([a, b]) = res.established else {
        let reason = if res.table_full { FailReason::TableFull } else { failure };
        let mut s = TraversalSession::fail(strategy, reason, res.stats);
        s.nonce = nonce;
        return s;
    };
    let kind = if relay.is_some() {
        PathKind::Relayed
    } else if is_hairpin(net, &a) || is_hairpin(net, &b) {
        PathKind::Hairpin
    } else {
        PathKind::Direct
    };
    let mut s = TraversalSession { strategy: Some(strategy), stats: res.stats, nonce, ..TraversalSession::new() };
    s.path = Some(SessionPath { kind, a, b, relay });
    for st in [SessionState::Gathering, SessionState::Punching, SessionState::Established(kind)] {
        s.advance(st).expect("legal path");
    }
    s
}

fn periodic(local: EndpointAddress, dst: EndpointAddress, timing: &PunchTiming) -> Box<dyn ProbePlan> {
    Box::new(Periodic { next: timing.start, every: timing.retransmit, until: timing.deadline(), local, dst })
}

/// Both sides probe a fixed target from their registered endpoint and only
/// ever answer that target.
fn fixed_target_exchange(
    net: &mut Network,
    a: &Peer,
    b: &Peer,
    to_b: EndpointAddress,
    to_a: EndpointAddress,
    timing: &PunchTiming,
    strategy: PunchStrategy,
) -> TraversalSession {
    let nonce = new_nonce(net, a.node);
    let sides = [
        Side {
            node: a.node,
            anchor: a.local,
            peer_anchor: to_b,
            reply: ReplyTo::Candidate,
            plan: periodic(a.local, to_b, timing),
            cost: MappingCost::of(a),
        },
        Side {
            node: b.node,
            anchor: b.local,
            peer_anchor: to_a,
            reply: ReplyTo::Candidate,
            plan: periodic(b.local, to_a, timing),
            cost: MappingCost::of(b),
        },
    ];
    let res = engine::run(net, Exchange { sides, relay: None, nonce, start: timing.start, deadline: timing.deadline() });
    conclude(net, strategy, nonce, res, None, FailReason::Timeout)
}

/// Probes each other's local (host) candidates: works between public hosts
/// and between hosts on one LAN.
pub fn direct_connect(net: &mut Network, a: &Peer, b: &Peer, timing: PunchTiming) -> TraversalSession {
    fixed_target_exchange(net, a, b, b.candidates.local, a.candidates.local, &timing, PunchStrategy::Direct)
}

/// Simultaneous hole punch towards each other's reflexive endpoint.
pub fn simple_punch(net: &mut Network, a: &Peer, b: &Peer, timing: PunchTiming) -> TraversalSession {
    let (Some(ra), Some(rb)) = (a.reflexive(), b.reflexive()) else {
        return TraversalSession::fail(PunchStrategy::SimplePunch, FailReason::NoCandidates, PunchStats::default());
    };
    fixed_target_exchange(net, a, b, rb, ra, &timing, PunchStrategy::SimplePunch)
}

/// Simple punch between peers behind a common NAT, looping through it.
pub fn hairpin_connect(net: &mut Network, a: &Peer, b: &Peer, timing: PunchTiming) -> TraversalSession {
    let shared = shared_nats(net, a.node, b.node);
    if shared.is_empty() {
        return TraversalSession::fail(
            PunchStrategy::Hairpin,
            FailReason::Precondition("peers share no NAT".into()),
            PunchStats::default(),
        );
    }
    let (Some(ra), Some(rb)) = (a.reflexive(), b.reflexive()) else {
        return TraversalSession::fail(PunchStrategy::Hairpin, FailReason::NoCandidates, PunchStats::default());
    };
    let mut s = fixed_target_exchange(net, a, b, rb, ra, &timing, PunchStrategy::Hairpin);
    if !s.is_established() {
        let turning_refuses = shared.iter().filter_map(|n| net.nat(*n)).any(|nat| {
            let h = nat.external_host();
            (h == ra.host() || h == rb.host()) && !nat.config().hairpinning
        });
        if turning_refuses {
            s.state = SessionState::Failed(FailReason::HairpinUnsupported);
        }
    }
    s
}

/// Sequential-or-shuffled port sweep paced at a fixed rate.
struct Scan {
    start: SimTime,
    pps: u64,
    i: u64,
    ports: Vec<u16>,
    local: EndpointAddress,
    host: HostId,
}

impl ProbePlan for Scan {
    fn next(&mut self, _: &mut ChaCha8Rng) -> Option<Planned> {
        let port = *self.ports.get(self.i as usize)?;
        let offset = (self.i as u128 * 1_000_000 / self.pps as u128) as u64;
        self.i += 1;
        Some(Planned {
            at: self.start + SimTime(offset),
            local: self.local,
            dst: EndpointAddress::new(self.host, port).ok()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BruteForceParams {
    pub pps: u32,
    /// Inclusive port range scanned on the hard side's external host.
    pub range: (u16, u16),
    /// Whether the hard side sends its initial (and refresh) probes.
    pub hard_probes: bool,
    pub randomized: bool,
    pub start: SimTime,
    /// Defaults to the scan duration plus two seconds.
    pub timeout: Option<SimTime>,
}

impl BruteForceParams {
    pub fn new(pps: u32, range: (u16, u16), start: SimTime) -> Self {
        BruteForceParams { pps, range, hard_probes: true, randomized: false, start, timeout: None }
    }

    fn width(&self) -> u64 {
        (self.range.1 as u64).saturating_sub(self.range.0 as u64) + 1
    }
}

fn path_ttl(net: &Network, node: NodeId, pick: fn(SimTime, SimTime) -> SimTime) -> Option<SimTime> {
    net.ancestors(node).into_iter().filter_map(|n| net.nat(n).map(|b| b.config().mapping_ttl)).reduce(pick)
}

/// The easy (endpoint-independent) side sweeps the hard side's external
/// ports from its single mapping; the hard side opens one mapping towards
/// the easy side and keeps it alive.
pub fn brute_force_punch(net: &mut Network, easy: &Peer, hard: &Peer, p: BruteForceParams) -> TraversalSession {
    let fail = |r| TraversalSession::fail(PunchStrategy::BruteForce, r, PunchStats::default());
    if easy.is_edm() || !hard.is_edm() {
        return fail(FailReason::Precondition("brute force needs one EIM and one EDM side".into()));
    }
    if p.pps == 0 || p.range.0 == 0 || p.range.0 > p.range.1 {
        return fail(FailReason::Precondition("empty scan range or zero rate".into()));
    }
    let (Some(easy_refl), Some(hard_ext)) = (easy.reflexive(), hard.reflexive().map(|r| r.host())) else {
        return fail(FailReason::NoCandidates);
    };
    let scan_time = SimTime((p.width() as u128 * 1_000_000 / p.pps as u128) as u64);
    let deadline = p.start.saturating_add(p.timeout.unwrap_or(scan_time + SimTime::from_secs(2)));

    let mut ports: Vec<u16> = (p.range.0..=p.range.1).collect();
    if p.randomized {
        ports.shuffle(net.rng(easy.node));
    }
    let easy_plan = Box::new(Scan { start: p.start, pps: p.pps as u64, i: 0, ports, local: easy.local, host: hard_ext });
    let hard_plan: Box<dyn ProbePlan> = if p.hard_probes {
        let ttl = path_ttl(net, hard.node, SimTime::min).unwrap_or(NatConfig::DEFAULT_TTL);
        let every = if ttl.is_infinite() { deadline } else { SimTime(ttl.as_micros() / 2) };
        Box::new(Periodic { next: p.start, every, until: deadline, local: hard.local, dst: easy_refl })
    } else {
        Box::new(NoProbes)
    };

    let nonce = new_nonce(net, easy.node);
    let sides = [
        Side {
            node: easy.node,
            anchor: easy.local,
            peer_anchor: EndpointAddress::new(hard_ext, p.range.0).expect("non-zero"),
            reply: ReplyTo::Observed,
            plan: easy_plan,
            cost: MappingCost::of(easy),
        },
        Side {
            node: hard.node,
            anchor: hard.local,
            peer_anchor: easy_refl,
            reply: ReplyTo::Observed,
            plan: hard_plan,
            cost: MappingCost::of(hard),
        },
    ];
    let res = engine::run(net, Exchange { sides, relay: None, nonce, start: p.start, deadline });
    conclude(net, PunchStrategy::BruteForce, nonce, res, None, FailReason::Timeout)
}

/// Bound on concurrently live birthday mappings per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Chunking {
    /// min(k, capacity / 2), capacity being the smaller of max_mappings and
    /// the port pool of the side's tightest NAT.
    Default,
    Size(usize),
    /// Send at full rate with no bound.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BirthdayParams {
    /// Probes per side.
    pub k: u64,
    /// Inclusive destination port range on the peer's external host.
    pub port_space: (u16, u16),
    pub pps: u32,
    pub chunk: Chunking,
    pub start: SimTime,
    pub timeout: Option<SimTime>,
}

impl BirthdayParams {
    pub fn new(k: u64, start: SimTime) -> Self {
        BirthdayParams { k, port_space: (1, u16::MAX), pps: 57_000, chunk: Chunking::Default, start, timeout: None }
    }
}

enum Source {
    Fixed(EndpointAddress),
    Fresh(HostId),
}

enum Target {
    Fixed(EndpointAddress),
    Random { host: HostId, lo: u16, hi: u16 },
}

struct BirthdayPlan {
    start: SimTime,
    interval: SimTime,
    i: u64,
    k: u64,
    src: Source,
    dst: Target,
}

/// Fresh source ports cycle through this many values above 1024.
const FRESH_PORTS: u64 = 64_000;

impl ProbePlan for BirthdayPlan {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> Option<Planned> {
        if self.i >= self.k {
            return None;
        }
        let at = self.start + SimTime(self.i * self.interval.as_micros());
        let local = match self.src {
            Source::Fixed(e) => e,
            Source::Fresh(h) => EndpointAddress::new(h, 1024 + (self.i % FRESH_PORTS) as u16).expect("non-zero"),
        };
        let dst = match self.dst {
            Target::Fixed(e) => e,
            Target::Random { host, lo, hi } => EndpointAddress::new(host, rng.gen_range(lo..=hi)).expect("non-zero"),
        };
        self.i += 1;
        Some(Planned { at, local, dst })
    }
}

/// Pacing and probe budget for one side: an endpoint-dependent side spaces
/// probes so that at most `chunk` of its mappings are alive at once.
fn birthday_pacing(net: &Network, me: &Peer, p: &BirthdayParams) -> (SimTime, u64) {
    let rate = SimTime(1_000_000u64.div_ceil(p.pps.max(1) as u64));
    if !me.is_edm() {
        return (rate, p.k);
    }
    let nats: Vec<_> = net.ancestors(me.node).into_iter().filter_map(|n| net.nat(n)).collect();
    let chunk = match p.chunk {
        Chunking::Disabled => return (rate, p.k),
        Chunking::Size(c) => c.max(1) as u64,
        Chunking::Default => {
            let cap = nats.iter().map(|n| n.config().max_mappings.min(n.config().port_space())).min().unwrap_or(usize::MAX) as u64;
            p.k.min(cap / 2).max(1)
        }
    };
    let ttl = nats.iter().map(|n| n.config().mapping_ttl).max().unwrap_or(NatConfig::DEFAULT_TTL);
    if ttl.is_infinite() {
        return (rate, p.k.min(chunk));
    }
    let window = SimTime((ttl.as_micros() + 1).div_ceil(chunk));
    (rate.max(window), p.k)
}

/// Birthday-paradox punch: endpoint-dependent sides open fresh mappings
/// towards random ports on the peer's external host until some pair of
/// mappings points at each other.
pub fn birthday_punch(net: &mut Network, a: &Peer, b: &Peer, p: BirthdayParams) -> TraversalSession {
    let strategy = PunchStrategy::Birthday(p.k);
    let fail = |r| TraversalSession::fail(strategy, r, PunchStats::default());
    if p.k == 0 || p.port_space.0 == 0 || p.port_space.0 > p.port_space.1 {
        return fail(FailReason::Precondition("k and port space must be non-empty".into()));
    }
    if !a.is_edm() && !b.is_edm() {
        return fail(FailReason::Precondition("birthday needs an endpoint-dependent side".into()));
    }
    let (Some(ra), Some(rb)) = (a.reflexive(), b.reflexive()) else {
        return fail(FailReason::NoCandidates);
    };

    let mut sides = Vec::with_capacity(2);
    let mut last = p.start;
    for (me, peer, peer_refl) in [(a, b, rb), (b, a, ra)] {
        let (interval, k) = birthday_pacing(net, me, &p);
        last = last.max(p.start + SimTime(k.saturating_sub(1) * interval.as_micros()));
        let src = if me.is_edm() { Source::Fresh(me.local.host()) } else { Source::Fixed(me.local) };
        let dst = if peer.is_edm() {
            Target::Random { host: peer_refl.host(), lo: p.port_space.0, hi: p.port_space.1 }
        } else {
            Target::Fixed(peer_refl)
        };
        sides.push(Side {
            node: me.node,
            anchor: me.local,
            peer_anchor: peer_refl,
            reply: ReplyTo::Observed,
            plan: Box::new(BirthdayPlan { start: p.start, interval, i: 0, k, src, dst }),
            cost: MappingCost::of(me),
        });
    }
    let deadline = match p.timeout {
        Some(t) => p.start.saturating_add(t),
        None => last + SimTime::from_secs(2),
    };
    let nonce = new_nonce(net, a.node);
    let sides: [Side; 2] = sides.try_into().ok().expect("two sides");
    let res = engine::run(net, Exchange { sides, relay: None, nonce, start: p.start, deadline });
    conclude(net, strategy, nonce, res, None, FailReason::Timeout)
}

/// One self-contained birthday run between two symmetric NATs whose
/// external ports span `[1, port_space]`. Concurrent mappings per side are
/// capped at the port space, which is all a NAT of that size can hold.
pub fn birthday_trial(port_space: u16, k: u64, seed: u64) -> (bool, PunchStats) {
    let mut spec = TopologySpec::new(seed);
    let latency = LinkProfile::lossless(SimTime::from_millis(10));
    for (side, ext, host) in [("a", 0xC633_6401u32, 0x0A01_0002u32), ("b", 0xCB00_7101, 0x0A02_0002)] {
        let nat = NatConfig::for_class(NatClassName::Symmetric, HostId(ext))
            .with_port_range(1, port_space)
            .with_max_mappings(port_space as usize);
        let nat_name = format!("nat-{side}");
        spec = spec
            .node(NodeSpec::nat(nat_name.clone(), nat))
            .node(NodeSpec::host(format!("peer-{side}"), HostId(host)))
            .link(&nat_name, INTERNET, latency)
            .link(&format!("peer-{side}"), &nat_name, latency);
    }
    let mut net = Network::build(&spec).expect("fixed topology is valid");
    net.set_record_trace(false);
    let peer = |net: &Network, name: &str, id: u64, ext: u32| {
        let node = net.node_id(name).expect("exists");
        let local = net.endpoint(node, 5000).expect("host");
        let seen = EndpointAddress::from_parts(ext, 1);
        Peer {
            id: PeerId(id),
            node,
            local,
            candidates: CandidateSet {
                local,
                reflexive: Some(MappedAddress { reflexive: seen, observed_at: SimTime::ZERO, server: seen }),
            },
            class: NatClassName::Symmetric,
        }
    };
    let a = peer(&net, "peer-a", 1, 0xC633_6401);
    let b = peer(&net, "peer-b", 2, 0xCB00_7101);
    let mut params = BirthdayParams::new(k, SimTime::from_millis(1));
    params.port_space = (1, port_space);
    params.chunk = Chunking::Size(port_space as usize);
    let s = birthday_punch(&mut net, &a, &b, params);
    (s.is_established(), s.stats)
}
