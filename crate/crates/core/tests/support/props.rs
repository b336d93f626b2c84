//! Property suites shared by the `properties` and `acceptance` targets.
//! Each returns Err with proptest's minimized failure report.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use natlab::discovery::{CandidateSet, MappedAddress, PeerId};
use natlab::natbox::{
    FilteringBehavior, MappingBehavior, NatBox, NatClassName, NatConfig, NatError, Outbound, PortAllocation,
};
use natlab::netsim::{
    Datagram, DropReason, EndpointAddress, HostId, LinkProfile, Message, Network, NodeSpec, SimTime, TopologySpec,
    INTERNET,
};
use natlab::scenario::{ScenarioSpec, World};
use natlab::traversal::{
    birthday_punch, ice_connect, send_app, simple_punch, BirthdayParams, Chunking, FailReason, Peer, Policy,
    PunchTiming,
};

pub const CASES: u32 = 1000;

pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

const NAT_HOST: HostId = HostId(0xCB00_7101);
const INSIDE: u32 = 0x0A00_0002;

fn filtering() -> impl Strategy<Value = FilteringBehavior> {
    prop_oneof![
        Just(FilteringBehavior::EndpointIndependent),
        Just(FilteringBehavior::AddressDependent),
        Just(FilteringBehavior::AddressAndPortDependent),
    ]
}

fn mapping() -> impl Strategy<Value = MappingBehavior> {
    prop_oneof![Just(MappingBehavior::EndpointIndependent), Just(MappingBehavior::AddressAndPortDependent)]
}

fn alloc() -> impl Strategy<Value = PortAllocation> {
    prop_oneof![Just(PortAllocation::Random), (1024u16..2000).prop_map(|start| PortAllocation::Sequential { start })]
}

/// Remotes drawn from a small pool so hosts and ports repeat.
fn remote() -> impl Strategy<Value = EndpointAddress> {
    (0u32..4, 1u16..5).prop_map(|(h, p)| EndpointAddress::from_parts(0xC000_0200 + h, p))
}

fn internal() -> impl Strategy<Value = EndpointAddress> {
    (0u32..3, 4000u16..4003).prop_map(|(h, p)| EndpointAddress::from_parts(INSIDE + h, p))
}

fn out(nat: &mut NatBox, src: EndpointAddress, dst: EndpointAddress, now: SimTime, rng: &mut ChaCha8Rng) -> Result<u16, NatError> {
    match nat.translate_outbound(&Datagram::new(src, dst, &Message::Probe { nonce: 0 }), now, rng)? {
        Outbound::Forward(d) => Ok(d.src.port()),
        Outbound::Hairpin(_) => unreachable!("remotes never use the NAT's own address"),
    }
}

pub fn eim_invariance(cases: u32) -> Result<(), String> {
    let s = (filtering(), alloc(), internal(), prop::collection::vec((remote(), 0u64..2_000_000), 1..30), any::<u64>());
    run(cases, s, |(f, a, src, sends, seed)| {
        let mut nat = NatBox::new(NatConfig::new(NAT_HOST, MappingBehavior::EndpointIndependent, f).with_port_alloc(a)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut now = SimTime::ZERO;
        let mut ports = BTreeSet::new();
        for (dst, step) in sends {
            now = now + SimTime(step);
            ports.insert(out(&mut nat, src, dst, now, &mut rng).unwrap());
        }
        prop_assert_eq!(ports.len(), 1);
        Ok(())
    })
}

pub fn edm_freshness(cases: u32) -> Result<(), String> {
    let s = (filtering(), alloc(), internal(), prop::collection::vec(remote(), 1..30), any::<u64>());
    run(cases, s, |(f, a, src, dsts, seed)| {
        let mut nat =
            NatBox::new(NatConfig::new(NAT_HOST, MappingBehavior::AddressAndPortDependent, f).with_port_alloc(a)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashMap<EndpointAddress, u16> = HashMap::new();
        for (i, dst) in dsts.into_iter().enumerate() {
            let port = out(&mut nat, src, dst, SimTime(i as u64), &mut rng).unwrap();
            match seen.get(&dst) {
                Some(&p) => prop_assert_eq!(p, port, "same destination must reuse its mapping"),
                None => {
                    prop_assert!(!seen.values().any(|&p| p == port), "new destination got a used port");
                    seen.insert(dst, port);
                }
            }
        }
        Ok(())
    })
}

pub fn no_unsolicited_inbound(cases: u32) -> Result<(), String> {
    let s = (
        mapping(),
        filtering(),
        prop::collection::vec((internal(), remote()), 0..20),
        prop::collection::vec((remote(), 0usize..25), 1..30),
        any::<u64>(),
    );
    run(cases, s, |(m, f, sends, inbound, seed)| {
        let mut nat = NatBox::new(NatConfig::new(NAT_HOST, m, f).with_port_range(1000, 1031)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Oracle: per external port, its internal endpoint and every remote it sent to.
        let mut sent: BTreeMap<u16, (EndpointAddress, BTreeSet<EndpointAddress>)> = BTreeMap::new();
        for (src, dst) in sends {
            let port = out(&mut nat, src, dst, SimTime(1), &mut rng).unwrap();
            sent.entry(port).or_insert_with(|| (src, BTreeSet::new())).1.insert(dst);
        }
        let ports: Vec<u16> = sent.keys().copied().chain([1000, 1031]).collect();
        for (from, pick) in inbound {
            let port = ports[pick % ports.len()];
            let d = Datagram::new(from, EndpointAddress::new(NAT_HOST, port).unwrap(), &Message::App { data: vec![] });
            let got = nat.translate_inbound(&d, SimTime(2));
            let expect = sent.get(&port).and_then(|(internal, remotes)| {
                let ok = match f {
                    FilteringBehavior::EndpointIndependent => true,
                    FilteringBehavior::AddressDependent => remotes.iter().any(|r| r.host() == from.host()),
                    FilteringBehavior::AddressAndPortDependent => remotes.contains(&from),
                };
                ok.then_some(*internal)
            });
            prop_assert_eq!(got.map(|d| d.dst), expect);
        }
        Ok(())
    })
}

pub fn capacity(cases: u32) -> Result<(), String> {
    let s = (1usize..8, prop::collection::vec(remote(), 0..20), any::<u64>());
    run(cases, s, |(max, dsts, seed)| {
        let cfg = NatConfig::for_class(NatClassName::Symmetric, NAT_HOST).with_max_mappings(max);
        let mut nat = NatBox::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = EndpointAddress::from_parts(INSIDE, 4000);
        let mut flows = BTreeSet::new();
        for dst in dsts {
            let r = out(&mut nat, src, dst, SimTime(1), &mut rng);
            let new = !flows.contains(&dst);
            if new && flows.len() >= max {
                prop_assert_eq!(r, Err(NatError::TableFull));
            } else {
                prop_assert!(r.is_ok());
                flows.insert(dst);
            }
            prop_assert!(nat.len() <= max);
        }
        Ok(())
    })
}

pub fn port_uniqueness(cases: u32) -> Result<(), String> {
    let s = (
        mapping(),
        alloc(),
        prop::collection::vec((internal(), remote(), 0u64..20_000_000), 0..40),
        any::<u64>(),
    );
    run(cases, s, |(m, a, sends, seed)| {
        let a = match a {
            PortAllocation::Sequential { .. } => PortAllocation::Sequential { start: 2000 },
            r => r,
        };
        let cfg = NatConfig::new(NAT_HOST, m, FilteringBehavior::AddressAndPortDependent)
            .with_port_range(2000, 2015)
            .with_port_alloc(a)
            .with_ttl(SimTime::from_secs(10));
        let mut nat = NatBox::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut now = SimTime::ZERO;
        for (src, dst, step) in sends {
            now = now + SimTime(step);
            match out(&mut nat, src, dst, now, &mut rng) {
                Ok(p) => prop_assert!((2000..=2015).contains(&p)),
                Err(e) => prop_assert_eq!(e, NatError::PortExhausted),
            }
            let ports: Vec<u16> = nat.entries().map(|e| e.external_port).collect();
            let distinct: BTreeSet<u16> = ports.iter().copied().collect();
            prop_assert_eq!(ports.len(), distinct.len());
        }
        Ok(())
    })
}

fn easy_class() -> impl Strategy<Value = NatClassName> {
    prop_oneof![
        Just(NatClassName::OpenInternet),
        Just(NatClassName::FullCone),
        Just(NatClassName::RestrictedCone),
        Just(NatClassName::PortRestrictedCone),
    ]
}

fn any_class() -> impl Strategy<Value = NatClassName> {
    prop_oneof![easy_class(), Just(NatClassName::Symmetric)]
}

fn latency() -> impl Strategy<Value = u64> {
    1u64..60
}

/// Two peers behind the given classes with per-link latencies in ms.
fn world(ca: NatClassName, cb: NatClassName, seed: u64, lat: &[u64]) -> World {
    let mut spec = ScenarioSpec::two_peers(ca, cb, seed, |c| c);
    let n = spec.links.len();
    for (l, ms) in spec.links.iter_mut().zip(lat.iter().cycle()).take(n) {
        l.profile = LinkProfile::lossless(SimTime::from_millis(*ms));
    }
    World::build(&spec).unwrap()
}

pub fn punch_correctness(cases: u32) -> Result<(), String> {
    let s = (easy_class(), easy_class(), any::<u64>(), prop::collection::vec(latency(), 4));
    run(cases, s, |(ca, cb, seed, lat)| {
        let mut w = world(ca, cb, seed, &lat);
        let (a, b, start) = w.introduce(0, 1).unwrap();
        let mut s = simple_punch(&mut w.net, &a, &b, PunchTiming::at(start));
        prop_assert!(s.is_established(), "{:?}", s.state());
        prop_assert!(send_app(&mut w.net, &mut s, true, b"ping"));
        prop_assert!(send_app(&mut w.net, &mut s, false, b"pong"));
        Ok(())
    })
}

pub fn simple_punch_completeness(cases: u32) -> Result<(), String> {
    let s = (filtering(), filtering(), any::<u64>(), prop::collection::vec(latency(), 4));
    run(cases, s, |(fa, fb, seed, lat)| {
        let eim = MappingBehavior::EndpointIndependent;
        let class = |f| NatClassName::from_behaviors(eim, f);
        let mut w = world(class(fa), class(fb), seed, &lat);
        let (a, b, start) = w.introduce(0, 1).unwrap();
        let s = simple_punch(&mut w.net, &a, &b, PunchTiming::at(start));
        prop_assert!(s.is_established(), "{fa:?}/{fb:?}: {:?}", s.state());
        Ok(())
    })
}

pub fn simple_punch_soundness(cases: u32) -> Result<(), String> {
    let s = (any_class(), any::<bool>(), any::<u64>(), prop::collection::vec(latency(), 4));
    run(cases, s, |(other, flip, seed, lat)| {
        let (ca, cb) = if flip { (NatClassName::Symmetric, other) } else { (other, NatClassName::Symmetric) };
        let mut w = world(ca, cb, seed, &lat);
        let (a, b, start) = w.introduce(0, 1).unwrap();
        let s = simple_punch(&mut w.net, &a, &b, PunchTiming::at(start));
        prop_assert!(!s.is_established(), "{ca:?}/{cb:?} punched");
        Ok(())
    })
}

fn small_policy() -> Policy {
    // Small pools make the birthday rung near-certain (miss odds ≈ e^-15),
    // so a rerun under a different random stream agrees with the ladder.
    let mut p = Policy::full(4000);
    p.scan_range = (1, 256);
    p.port_space = (1, 256);
    p.timeout = SimTime::from_secs(2);
    p
}

fn ladder_world(ca: NatClassName, cb: NatClassName, seed: u64, pmp: bool) -> World {
    World::build(&ScenarioSpec::two_peers(ca, cb, seed, |c| c.with_port_range(1, 256).with_port_mapping(pmp))).unwrap()
}

pub fn ladder_monotonicity(cases: u32) -> Result<(), String> {
    let s = (any_class(), any_class(), any::<bool>(), any::<u64>());
    run(cases, s, |(ca, cb, pmp, seed)| {
        let policy = small_policy();
        let mut w = ladder_world(ca, cb, seed, pmp);
        let (a, b, start) = w.introduce(0, 1).unwrap();
        let relay = w.relay;
        let out = ice_connect(&mut w.net, &a, &b, &policy, start, relay);
        let chosen = out.strategy.expect("relay is always available here");
        for (earlier, _) in out.attempts.iter().filter(|(s, _)| s.rank() < chosen.rank()) {
            let mut w = ladder_world(ca, cb, seed, pmp);
            let (a, b, start) = w.introduce(0, 1).unwrap();
            let mut alone = small_policy();
            alone.ladder = vec![*earlier];
            let solo = ice_connect(&mut w.net, &a, &b, &alone, start, None);
            prop_assert!(!solo.session.is_established(), "{earlier} succeeds alone but ladder chose {chosen}");
        }
        Ok(())
    })
}

/// Two symmetric NATs with no prior table entries.
fn bare_symmetric_pair(max: usize, ports: u16, seed: u64) -> (Network, Peer, Peer) {
    let mut spec = TopologySpec::new(seed);
    let lat = LinkProfile::lossless(SimTime::from_millis(5));
    let hosts = [(0xC633_6401u32, 0x0A01_0002u32), (0xCB00_7101, 0x0A02_0002)];
    for (i, (ext, host)) in hosts.iter().enumerate() {
        let cfg = NatConfig::for_class(NatClassName::Symmetric, HostId(*ext))
            .with_port_range(1, ports)
            .with_max_mappings(max);
        spec = spec
            .node(NodeSpec::nat(format!("nat{i}"), cfg))
            .node(NodeSpec::host(format!("peer{i}"), HostId(*host)))
            .link(&format!("nat{i}"), INTERNET, lat)
            .link(&format!("peer{i}"), &format!("nat{i}"), lat);
    }
    let net = Network::build(&spec).unwrap();
    let peer = |i: usize| {
        let node = net.node_id(&format!("peer{i}")).unwrap();
        let local = net.endpoint(node, 5000).unwrap();
        let seen = EndpointAddress::from_parts(hosts[i].0, 1);
        Peer {
            id: PeerId(i as u64),
            node,
            local,
            candidates: CandidateSet {
                local,
                reflexive: Some(MappedAddress { reflexive: seen, observed_at: SimTime::ZERO, server: seen }),
            },
            class: NatClassName::Symmetric,
        }
    };
    let (a, b) = (peer(0), peer(1));
    (net, a, b)
}

pub fn chunking_safety(cases: u32) -> Result<(), String> {
    let s = (4usize..48, 0.0f64..1.0, 1u64..150, any::<u64>());
    run(cases, s, |(max, frac, k, seed)| {
        let chunk = 1 + ((max - 1) as f64 * frac) as usize;
        let ports = (max * 4) as u16;
        let (mut net, a, b) = bare_symmetric_pair(max, ports, seed);
        let mut p = BirthdayParams::new(k, SimTime::from_millis(1));
        p.port_space = (1, ports);
        p.chunk = Chunking::Size(chunk);
        p.pps = 1000;
        let s = birthday_punch(&mut net, &a, &b, p);
        prop_assert_ne!(s.failure(), Some(&FailReason::TableFull));
        prop_assert_eq!(net.drops(DropReason::TableFull), 0);
        prop_assert!(s.stats.mappings_consumed[0] <= s.stats.probes_sent[0]);
        prop_assert!(s.stats.mappings_consumed[1] <= s.stats.probes_sent[1]);
        Ok(())
    })
}

fn traced_run(ca: NatClassName, cb: NatClassName, seed: u64, loss: f64) -> (String, String) {
    let mut spec = ScenarioSpec::two_peers(ca, cb, seed, |c| c);
    for l in &mut spec.links {
        l.profile = LinkProfile::new(SimTime::from_millis(7), loss, None).unwrap();
    }
    let mut w = World::build(&spec).unwrap();
    let outcome = match w.introduce(0, 1) {
        Ok((a, b, start)) => format!("{:?}", simple_punch(&mut w.net, &a, &b, PunchTiming::at(start))),
        Err(e) => format!("{e:?}"),
    };
    (w.net.trace().to_jsonl(), outcome)
}

pub fn netsim_determinism(cases: u32) -> Result<(), String> {
    let s = (any_class(), any_class(), any::<u64>(), 0.0f64..0.3);
    run(cases, s, |(ca, cb, seed, loss)| {
        let first = traced_run(ca, cb, seed, loss);
        let second = traced_run(ca, cb, seed, loss);
        prop_assert!(!first.0.is_empty());
        prop_assert_eq!(first, second);
        Ok(())
    })
}

/// Every suite, by name.
pub const SUITES: [(&str, fn(u32) -> Result<(), String>); 11] = [
    ("natbox: EIM invariance", eim_invariance),
    ("natbox: EDM freshness", edm_freshness),
    ("natbox: no unsolicited inbound", no_unsolicited_inbound),
    ("natbox: capacity", capacity),
    ("natbox: port uniqueness", port_uniqueness),
    ("traversal: punch correctness", punch_correctness),
    ("traversal: simple-punch completeness", simple_punch_completeness),
    ("traversal: simple-punch soundness", simple_punch_soundness),
    ("traversal: ladder monotonicity", ladder_monotonicity),
    ("traversal: chunking safety", chunking_safety),
    ("netsim: deterministic traces", netsim_determinism),
];
