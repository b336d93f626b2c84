use serde::Serialize;

use crate::netsim::{Datagram, EndpointAddress, Message, MessageKind, Network, SimTime, StepOutcome};

use super::mapping::port_mapping_connect;
use super::punch::{
    birthday_punch, brute_force_punch, direct_connect, hairpin_connect, simple_punch, BirthdayParams, BruteForceParams,
    Chunking, PunchTiming,
};
use super::relay::relay_connect;
use super::{shared_nats, FailReason, PathEnd, Peer, PunchStats, PunchStrategy, SessionPath, SessionState, TraversalSession};

/// Which rungs of the ladder may run, and the knobs they use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Policy {
    /// Enabled strategies; always attempted in ladder order.
    pub ladder: Vec<PunchStrategy>,
    pub pps: u32,
    pub scan_range: (u16, u16),
    pub port_space: (u16, u16),
    pub chunk: Chunking,
    /// Per-rung timeout for the fixed-target rungs.
    pub timeout: SimTime,
    /// Pause between one rung giving up and the next starting.
    pub resync: SimTime,
}

impl Policy {
    pub const DEFAULT_BIRTHDAY_K: u64 = 170_000;

    pub fn only(strategies: &[PunchStrategy]) -> Self {
        let mut ladder = strategies.to_vec();
        ladder.sort_by_key(|s| s.rank());
        ladder.dedup_by_key(|s| s.rank());
        Policy {
            ladder,
            pps: 57_000,
            scan_range: (1, u16::MAX),
            port_space: (1, u16::MAX),
            chunk: Chunking::Default,
            timeout: PunchTiming::DEFAULT_TIMEOUT,
            resync: SimTime::from_millis(100),
        }
    }

    pub fn full(k: u64) -> Self {
        Self::only(&[
            PunchStrategy::Direct,
            PunchStrategy::PortMapping,
            PunchStrategy::SimplePunch,
            PunchStrategy::BruteForce,
            PunchStrategy::Birthday(k),
            PunchStrategy::Hairpin,
            PunchStrategy::Relay,
        ])
    }

    /// Replaces the birthday budget, if birthday is enabled.
    pub fn with_birthday_k(mut self, k: u64) -> Self {
        for s in &mut self.ladder {
            if let PunchStrategy::Birthday(_) = s {
                *s = PunchStrategy::Birthday(k);
            }
        }
        self
    }

    pub fn allows(&self, s: PunchStrategy) -> bool {
        self.ladder.iter().any(|x| x.rank() == s.rank())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IceOutcome {
    pub session: TraversalSession,
    /// Strategy that succeeded.
    pub strategy: Option<PunchStrategy>,
    /// Summed over every attempted rung.
    pub stats: PunchStats,
    pub attempts: Vec<(PunchStrategy, SessionState)>,
}

/// Whether a rung can apply to this pair at all.
pub(crate) fn applicable(net: &Network, a: &Peer, b: &Peer, s: PunchStrategy, relay: Option<EndpointAddress>) -> bool {
    match s {
        PunchStrategy::Direct | PunchStrategy::PortMapping => true,
        PunchStrategy::SimplePunch => a.reflexive().is_some() && b.reflexive().is_some(),
        PunchStrategy::BruteForce => a.is_edm() != b.is_edm(),
        PunchStrategy::Birthday(_) => a.is_edm() || b.is_edm(),
        PunchStrategy::Hairpin => !shared_nats(net, a.node, b.node).is_empty(),
        PunchStrategy::Relay => relay.is_some(),
    }
}

pub(crate) fn attempt(
    net: &mut Network,
    a: &Peer,
    b: &Peer,
    s: PunchStrategy,
    policy: &Policy,
    start: SimTime,
    relay: Option<EndpointAddress>,
) -> TraversalSession {
    let timing = PunchTiming::at(start).with_timeout(policy.timeout);
    match s {
        PunchStrategy::Direct => direct_connect(net, a, b, timing),
        PunchStrategy::PortMapping => port_mapping_connect(net, a, b, policy.timeout),
        PunchStrategy::SimplePunch => simple_punch(net, a, b, timing),
        PunchStrategy::BruteForce => {
            let (easy, hard) = if a.is_edm() { (b, a) } else { (a, b) };
            let mut p = BruteForceParams::new(policy.pps, policy.scan_range, start);
            p.timeout = None;
            let mut s = brute_force_punch(net, easy, hard, p);
            if a.is_edm() {
                if let Some(path) = &mut s.path {
                    std::mem::swap(&mut path.a, &mut path.b);
                }
                s.stats.probes_sent.swap(0, 1);
                s.stats.mappings_consumed.swap(0, 1);
            }
            s
        }
        PunchStrategy::Birthday(k) => {
            let mut p = BirthdayParams::new(k, start);
            p.pps = policy.pps;
            p.port_space = policy.port_space;
            p.chunk = policy.chunk;
            birthday_punch(net, a, b, p)
        }
        PunchStrategy::Hairpin => hairpin_connect(net, a, b, timing),
        PunchStrategy::Relay => relay_connect(net, a, b, relay.expect("checked applicable"), timing),
    }
}

/// Walks the ladder Direct → PortMapping → SimplePunch → BruteForce →
/// Birthday → Hairpin → Relay, skipping rungs the policy excludes or that
/// cannot apply, and stops at the first success.
pub fn ice_connect(
    net: &mut Network,
    a: &Peer,
    b: &Peer,
    policy: &Policy,
    start: SimTime,
    relay: Option<EndpointAddress>,
) -> IceOutcome {
    let mut stats = PunchStats::default();
    let mut attempts = Vec::new();
    let mut last_failure = None;
    let first = start.max(net.now());
    for &s in &policy.ladder {
        if !applicable(net, a, b, s, relay) {
            continue;
        }
        let at = if attempts.is_empty() { first } else { net.now() + policy.resync };
        let mut session = attempt(net, a, b, s, policy, at, relay);
        stats.accumulate(&session.stats);
        attempts.push((s, session.state().clone()));
        if session.is_established() {
            stats.elapsed = net.now().saturating_sub(first);
            session.stats = stats;
            return IceOutcome { session, strategy: Some(s), stats, attempts };
        }
        last_failure = Some(session);
    }
    stats.elapsed = net.now().saturating_sub(first);
    let session = match last_failure {
        Some(mut s) if policy.allows(PunchStrategy::Relay) && relay.is_some() => {
            s.stats = stats;
            s
        }
        _ => TraversalSession::fail(
            policy.ladder.last().copied().unwrap_or(PunchStrategy::Relay),
            FailReason::AllStrategiesExhausted,
            stats,
        ),
    };
    IceOutcome { session, strategy: None, stats, attempts }
}

fn path_datagram(end: &PathEnd, relay: Option<EndpointAddress>, peer_local: EndpointAddress, msg: &Message) -> Datagram {
    match relay {
        Some(r) => Datagram::new(end.local, r, &Message::RelayFwd { src: end.local, dst: peer_local, inner: msg.encode() }),
        None => Datagram::new(end.local, end.remote, msg),
    }
}

fn ends(path: &SessionPath) -> [(PathEnd, EndpointAddress); 2] {
    [(path.a, path.b.local), (path.b, path.a.local)]
}

/// Sends a session probe from both ends every `interval` until `until`,
/// refreshing every mapping on the path.
pub fn keepalive(net: &mut Network, session: &TraversalSession, interval: SimTime, until: SimTime) {
    let Some(path) = session.path else { return };
    if !session.is_established() || interval == SimTime::ZERO {
        while net.step_until(until).is_some() {}
        return;
    }
    let token = net.fresh_token();
    let mut next = net.now() + interval;
    if next <= until {
        net.schedule_timer(next, token);
    }
    while let Some(ev) = net.step_until(until) {
        if ev != (StepOutcome::Timer { token }) {
            continue;
        }
        for (end, peer_local) in ends(&path) {
            let d = path_datagram(&end, path.relay, peer_local, &Message::Probe { nonce: session.nonce });
            let _ = net.send(end.node, d);
        }
        next = next + interval;
        if next <= until {
            net.schedule_timer(next, token);
        }
    }
}

const APP_WAIT: SimTime = SimTime::from_secs(2);

/// Sends one application datagram along the path (from A if `from_a`) and
/// waits for it to arrive. A loss on an established path means a mapping
/// on it has expired; the session degrades accordingly.
pub fn send_app(net: &mut Network, session: &mut TraversalSession, from_a: bool, data: &[u8]) -> bool {
    let Some(path) = session.path else { return false };
    if !session.is_established() {
        return false;
    }
    let [(ea, _), (eb, _)] = ends(&path);
    let (from, to) = if from_a { (ea, eb) } else { (eb, ea) };
    let msg = Message::App { data: data.to_vec() };
    let _ = net.send(from.node, path_datagram(&from, path.relay, to.local, &msg));
    let deadline = net.now() + APP_WAIT;
    while let Some(ev) = net.step_until(deadline) {
        let StepOutcome::Delivered { node, datagram, .. } = ev else { continue };
        if node != to.node || datagram.dst != to.local {
            continue;
        }
        let got = match (path.relay, datagram.kind()) {
            (None, MessageKind::App) => datagram.message().ok(),
            (Some(_), MessageKind::RelayFwd) => match datagram.message() {
                Ok(Message::RelayFwd { inner, .. }) => Message::decode(&inner).ok(),
                _ => None,
            },
            _ => None,
        };
        if got.as_ref() == Some(&msg) {
            return true;
        }
    }
    let _ = session.advance(SessionState::Failed(FailReason::MappingExpired));
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::natbox::NatClassName::{self, *};
    use crate::scenario::World;
    use crate::traversal::PathKind;

    fn ice(ca: NatClassName, cb: NatClassName, policy: &Policy, seed: u64) -> (World, IceOutcome) {
        let mut w = World::two_peers(ca, cb, seed);
        let (a, b, start) = w.introduce(0, 1).unwrap();
        let relay = w.relay;
        let out = ice_connect(&mut w.net, &a, &b, policy, start, relay);
        (w, out)
    }

    #[test]
    fn open_hosts_connect_directly() {
        let (_, out) = ice(OpenInternet, OpenInternet, &Policy::full(1000), 1);
        assert_eq!(out.strategy, Some(PunchStrategy::Direct));
    }

    #[test]
    fn cones_use_simple_punch() {
        let (_, out) = ice(PortRestrictedCone, RestrictedCone, &Policy::full(1000), 2);
        assert_eq!(out.strategy, Some(PunchStrategy::SimplePunch));
        assert_eq!(out.attempts.len(), 3);
    }

    #[test]
    fn cone_and_symmetric_use_brute_force() {
        let (_, out) = ice(FullCone, Symmetric, &Policy::full(1000), 3);
        assert_eq!(out.strategy, Some(PunchStrategy::BruteForce));
        let path = out.session.path.unwrap();
        assert_eq!(path.kind, PathKind::Direct);
    }

    #[test]
    fn relay_excluded_exhausts() {
        let policy = Policy::only(&[PunchStrategy::SimplePunch]);
        let (_, out) = ice(Symmetric, Symmetric, &policy, 4);
        assert_eq!(out.session.failure(), Some(&FailReason::AllStrategiesExhausted));
    }

    #[test]
    fn same_cgnat_without_hairpin_relays() {
        let mut w = World::shared_cgnat(false, 5);
        let (a, b, start) = w.introduce(0, 1).unwrap();
        let relay = w.relay;
        let out = ice_connect(&mut w.net, &a, &b, &Policy::full(1000), start, relay);
        assert_eq!(out.strategy, Some(PunchStrategy::Relay));
    }

    #[test]
    fn keepalive_holds_path_open() {
        let (mut w, out) = ice(PortRestrictedCone, PortRestrictedCone, &Policy::only(&[PunchStrategy::SimplePunch]), 6);
        let mut s = out.session;
        let ttl = crate::natbox::NatConfig::DEFAULT_TTL;
        let until = w.net.now() + SimTime(ttl.as_micros() * 10);
        keepalive(&mut w.net, &s, SimTime(ttl.as_micros() / 2), until);
        assert!(send_app(&mut w.net, &mut s, true, b"hello"));
        assert!(send_app(&mut w.net, &mut s, false, b"world"));
    }

    #[test]
    fn idle_path_expires() {
        let (mut w, out) = ice(PortRestrictedCone, PortRestrictedCone, &Policy::only(&[PunchStrategy::SimplePunch]), 7);
        let mut s = out.session;
        let ttl = crate::natbox::NatConfig::DEFAULT_TTL;
        let until = w.net.now() + ttl + SimTime::from_millis(1);
        keepalive(&mut w.net, &s, SimTime::ZERO, until);
        assert!(!send_app(&mut w.net, &mut s, true, b"late"));
        assert_eq!(s.failure(), Some(&FailReason::MappingExpired));
    }

    #[test]
    fn sparse_keepalive_eventually_expires() {
        let (mut w, out) = ice(FullCone, PortRestrictedCone, &Policy::only(&[PunchStrategy::SimplePunch]), 8);
        let mut s = out.session;
        let ttl = crate::natbox::NatConfig::DEFAULT_TTL.as_micros();
        let until = w.net.now() + SimTime(ttl * 7 / 2);
        keepalive(&mut w.net, &s, SimTime(ttl * 2), until);
        assert!(!send_app(&mut w.net, &mut s, false, b"x"));
        assert_eq!(s.failure(), Some(&FailReason::MappingExpired));
    }
}
