//! Declarative scenarios and the simulated world built from them.
//!
//! The text format is one directive per line, `#` starts a comment:
//!
//! ```text
//! seed 7
//! limit 600s
//! stun stun-a address=198.51.100.1
//! stun stun-b address=198.51.100.2
//! rendezvous rdv address=198.51.100.10
//! relay relay address=198.51.100.20
//! nat home external=203.0.113.1 class=port-restricted-cone ttl=30s
//! peer alice address=192.168.1.2 port=40000
//! link alice home latency=5ms
//! link home internet latency=20ms loss=0.01
//! policy ladder=simple-punch,birthday k=170000 pps=57000
//! carrier home
//! ```

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::discovery::{
    classify_nat, register, rendezvous_exchange, stun_bind, CandidateSet, DiscoveryError, Participant, PeerId,
    RendezvousServer, StunServer, StunServerPair, STUN_PORT,
};
use crate::natbox::{FilteringBehavior, MappingBehavior, NatClassName, NatConfig, PortAllocation};
use crate::netsim::{
    EndpointAddress, HostId, LinkProfile, Network, NetworkError, NodeId, NodeSpec, SimTime, TopologySpec, INTERNET,
};
use crate::traversal::{CarrierConfig, Chunking, Peer, Policy, PunchStrategy, RelayServer, RELAY_PORT};

pub const RENDEZVOUS_PORT: u16 = 7000;
pub const DEFAULT_PEER_PORT: u16 = 40000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Peer,
    Stun,
    Rendezvous,
    Relay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeDecl {
    pub name: String,
    pub role: Role,
    pub address: HostId,
    /// Port the peer talks from; servers use their well-known port.
    pub port: u16,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NatDecl {
    pub name: String,
    pub config: NatConfig,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkDecl {
    pub child: String,
    pub parent: String,
    pub profile: LinkProfile,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub limit: Option<SimTime>,
    pub nodes: Vec<NodeDecl>,
    pub nats: Vec<NatDecl>,
    pub links: Vec<LinkDecl>,
    pub policy: Policy,
    /// NATs used as carrier templates by the interop matrix.
    pub carriers: Vec<String>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            limit: None,
            nodes: Vec::new(),
            nats: Vec::new(),
            links: Vec::new(),
            policy: Policy::full(Policy::DEFAULT_BIRTHDAY_K),
            carriers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError { line, message: message.into() }
}

/// Parses `10ms`, `30s`, `250us`, a bare microsecond count, or `inf`.
pub fn parse_duration(s: &str) -> Result<SimTime, String> {
    if s == "inf" {
        return Ok(SimTime::INFINITE);
    }
    let (num, scale) = if let Some(n) = s.strip_suffix("us") {
        (n, 1)
    } else if let Some(n) = s.strip_suffix("ms") {
        (n, 1_000)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1_000_000)
    } else {
        (s, 1)
    };
    num.parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(scale))
        .map(SimTime)
        .ok_or_else(|| format!("invalid duration {s:?}"))
}

fn parse_host(s: &str) -> Result<HostId, String> {
    Ipv4Addr::from_str(s).map(|a| HostId::from(a.octets())).map_err(|_| format!("invalid address {s:?}"))
}

fn parse_range(s: &str) -> Result<(u16, u16), String> {
    let (lo, hi) = s.split_once('-').ok_or_else(|| format!("invalid range {s:?}, expected lo-hi"))?;
    match (lo.parse::<u16>(), hi.parse::<u16>()) {
        (Ok(lo), Ok(hi)) if lo >= 1 && lo <= hi => Ok((lo, hi)),
        _ => Err(format!("invalid range {s:?}")),
    }
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("invalid switch {s:?}, expected on/off")),
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("invalid number {s:?}"))
}

fn parse_mapping(s: &str) -> Result<MappingBehavior, String> {
    match s {
        "eim" | "endpoint-independent" => Ok(MappingBehavior::EndpointIndependent),
        "edm" | "address-port-dependent" | "endpoint-dependent" => Ok(MappingBehavior::AddressAndPortDependent),
        _ => Err(format!("invalid mapping {s:?}, expected eim or edm")),
    }
}

fn parse_filtering(s: &str) -> Result<FilteringBehavior, String> {
    match s {
        "ei" | "endpoint-independent" => Ok(FilteringBehavior::EndpointIndependent),
        "address" | "address-dependent" => Ok(FilteringBehavior::AddressDependent),
        "address-port" | "port-restricted" | "address-port-dependent" => Ok(FilteringBehavior::AddressAndPortDependent),
        _ => Err(format!("invalid filtering {s:?}, expected ei, address or address-port")),
    }
}

fn parse_alloc(s: &str) -> Result<PortAllocation, String> {
    match s.split_once(':') {
        None if s == "random" => Ok(PortAllocation::Random),
        None if s == "sequential" => Ok(PortAllocation::Sequential { start: 1024 }),
        Some(("sequential", n)) => Ok(PortAllocation::Sequential { start: parse_num(n)? }),
        _ => Err(format!("invalid allocation {s:?}, expected random or sequential[:start]")),
    }
}

/// Parses a comma-separated ladder subset; `birthday` takes the k given.
pub fn parse_ladder(s: &str, k: u64) -> Result<Vec<PunchStrategy>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.parse::<PunchStrategy>().map_err(|e| e.to_string()).map(|p| match p {
                PunchStrategy::Birthday(_) => PunchStrategy::Birthday(k),
                other => other,
            })
        })
        .collect()
}

struct Line<'a> {
    no: usize,
    directive: &'a str,
    args: Vec<&'a str>,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Line<'a> {
    fn name(&self) -> Option<&'a str> {
        self.args.first().copied()
    }
}

fn tokenize(no: usize, text: &str) -> Result<Option<Line<'_>>, ScenarioError> {
    let text = text.split('#').next().unwrap_or("").trim();
    let mut words = text.split_whitespace();
    let Some(directive) = words.next() else { return Ok(None) };
    let mut args = Vec::new();
    let mut pairs = Vec::new();
    for w in words {
        match w.split_once('=') {
            Some((k, v)) => pairs.push((k, v)),
            None if pairs.is_empty() => args.push(w),
            None => return Err(err(no, format!("expected key=value, found {w:?}"))),
        }
    }
    Ok(Some(Line { no, directive, args, pairs }))
}

fn parse_nat(line: &Line<'_>, errors: &mut Vec<ScenarioError>) -> Option<NatConfig> {
    let mut external = None;
    let mut class = None;
    let mut mapping = None;
    let mut filtering = None;
    let mut cfg = NatConfig::new(HostId::UNASSIGNED, MappingBehavior::EndpointIndependent, FilteringBehavior::EndpointIndependent);
    let before = errors.len();
    for &(k, v) in &line.pairs {
        let r: Result<(), String> = (|| {
            match k {
                "external" => external = Some(parse_host(v)?),
                "class" => class = Some(v.parse::<NatClassName>()?),
                "mapping" => mapping = Some(parse_mapping(v)?),
                "filtering" => filtering = Some(parse_filtering(v)?),
                "alloc" => cfg.port_alloc = parse_alloc(v)?,
                "range" => cfg.port_range = parse_range(v)?,
                "ttl" => cfg.mapping_ttl = parse_duration(v)?,
                "max" => cfg.max_mappings = parse_num(v)?,
                "hairpin" => cfg.hairpinning = parse_switch(v)?,
                "pmp" => cfg.port_mapping = parse_switch(v)?,
                "cgnat" => cfg.carrier_grade = parse_switch(v)?,
                _ => return Err(format!("unknown key {k:?} for nat")),
            }
            Ok(())
        })();
        if let Err(m) = r {
            errors.push(err(line.no, m));
        }
    }
    if let Some(c) = class {
        match c.behaviors() {
            Some((m, f)) => {
                cfg.mapping = m;
                cfg.filtering = f;
            }
            None => errors.push(err(line.no, "class open-internet is not a NAT")),
        }
    }
    if let Some(m) = mapping {
        cfg.mapping = m;
    }
    if let Some(f) = filtering {
        cfg.filtering = f;
    }
    match external {
        Some(h) => cfg.external_host = h,
        None => errors.push(err(line.no, "nat needs external=<address>")),
    }
    if errors.len() == before {
        if let Err(e) = cfg.validate() {
            errors.push(err(line.no, e.to_string()));
        }
    }
    (errors.len() == before).then_some(cfg)
}

fn parse_policy(line: &Line<'_>, policy: &mut Policy, errors: &mut Vec<ScenarioError>) {
    let mut ladder = None;
    let mut k = None;
    for &(key, v) in &line.pairs {
        let r: Result<(), String> = (|| {
            match key {
                "ladder" => ladder = Some(v),
                "k" => k = Some(parse_num::<u64>(v)?),
                "pps" => policy.pps = parse_num(v)?,
                "timeout" => policy.timeout = parse_duration(v)?,
                "scan" => policy.scan_range = parse_range(v)?,
                "port-space" => policy.port_space = parse_range(v)?,
                "chunk" => {
                    policy.chunk = match v {
                        "default" => Chunking::Default,
                        "off" => Chunking::Disabled,
                        n => Chunking::Size(parse_num(n)?),
                    }
                }
                _ => return Err(format!("unknown key {key:?} for policy")),
            }
            Ok(())
        })();
        if let Err(m) = r {
            errors.push(err(line.no, m));
        }
    }
    if k == Some(0) {
        errors.push(err(line.no, "birthday k must be at least 1"));
    }
    let k = k.unwrap_or(Policy::DEFAULT_BIRTHDAY_K);
    if let Some(l) = ladder {
        match parse_ladder(l, k) {
            Ok(ladder) => {
                let mut p = Policy::only(&ladder);
                (p.pps, p.timeout, p.scan_range, p.port_space, p.chunk) =
                    (policy.pps, policy.timeout, policy.scan_range, policy.port_space, policy.chunk);
                *policy = p;
            }
            Err(m) => errors.push(err(line.no, m)),
        }
    } else {
        *policy = std::mem::replace(policy, Policy::only(&[])).with_birthday_k(k);
    }
}

fn parse_node(line: &Line<'_>, role: Role, errors: &mut Vec<ScenarioError>) -> Option<NodeDecl> {
    let name = line.name()?;
    let mut address = None;
    let mut port = match role {
        Role::Peer => DEFAULT_PEER_PORT,
        Role::Stun => STUN_PORT,
        Role::Rendezvous => RENDEZVOUS_PORT,
        Role::Relay => RELAY_PORT,
    };
    let before = errors.len();
    for &(k, v) in &line.pairs {
        let r = match k {
            "address" => parse_host(v).map(|h| address = Some(h)),
            "port" if role == Role::Peer => match parse_num::<u16>(v) {
                Ok(0) => Err("port must be non-zero".to_string()),
                Ok(p) => {
                    port = p;
                    Ok(())
                }
                Err(e) => Err(e),
            },
            _ => Err(format!("unknown key {k:?} for {}", line.directive)),
        };
        if let Err(m) = r {
            errors.push(err(line.no, m));
        }
    }
    if address.is_none() {
        errors.push(err(line.no, format!("{} needs address=<address>", line.directive)));
    }
    (errors.len() == before).then(|| NodeDecl { name: name.to_string(), role, address: address.unwrap(), port, line: line.no })
}

fn parse_link(line: &Line<'_>, errors: &mut Vec<ScenarioError>) -> Option<LinkDecl> {
    let (Some(child), Some(parent), 2) = (line.args.first(), line.args.get(1), line.args.len()) else {
        errors.push(err(line.no, "link needs <child> <parent>"));
        return None;
    };
    let (mut latency, mut loss, mut pps) = (LinkProfile::default().latency, 0.0, None);
    let before = errors.len();
    for &(k, v) in &line.pairs {
        let r: Result<(), String> = match k {
            "latency" => parse_duration(v).map(|d| latency = d),
            "loss" => parse_num::<f64>(v).map(|l| loss = l),
            "pps" if v == "none" => {
                pps = None;
                Ok(())
            }
            "pps" => parse_num::<u32>(v).map(|p| pps = Some(p)),
            _ => Err(format!("unknown key {k:?} for link")),
        };
        if let Err(m) = r {
            errors.push(err(line.no, m));
        }
    }
    if errors.len() != before {
        return None;
    }
    match LinkProfile::new(latency, loss, pps) {
        Ok(profile) => Some(LinkDecl { child: child.to_string(), parent: parent.to_string(), profile, line: line.no }),
        Err(e) => {
            errors.push(err(line.no, e.to_string()));
            None
        }
    }
}

/// Parses and validates a scenario, collecting every error found.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioErrors> {
    let mut spec = ScenarioSpec::default();
    let mut errors = Vec::new();
    let mut carrier_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let line = match tokenize(no, raw) {
            Ok(Some(l)) => l,
            Ok(None) => continue,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let role = match line.directive {
            "peer" => Some(Role::Peer),
            "stun" => Some(Role::Stun),
            "rendezvous" => Some(Role::Rendezvous),
            "relay" => Some(Role::Relay),
            _ => None,
        };
        let needs_name = role.is_some() || matches!(line.directive, "nat" | "link" | "carrier");
        if needs_name && line.name().is_none() {
            errors.push(err(no, format!("{} needs a name", line.directive)));
            continue;
        }
        let max_args = if line.directive == "link" { 2 } else { 1 };
        if line.args.len() > max_args {
            errors.push(err(no, format!("too many arguments for {}", line.directive)));
            continue;
        }
        match (line.directive, role) {
            (_, Some(role)) => {
                if let Some(n) = parse_node(&line, role, &mut errors) {
                    spec.nodes.push(n);
                }
            }
            ("seed", _) => match line.name().map(parse_num::<u64>) {
                Some(Ok(s)) if line.pairs.is_empty() => spec.seed = s,
                _ => errors.push(err(no, "seed needs one integer")),
            },
            ("limit", _) => match line.name().map(parse_duration) {
                Some(Ok(d)) if line.pairs.is_empty() => spec.limit = Some(d),
                _ => errors.push(err(no, "limit needs one duration")),
            },
            ("nat", _) => {
                if let Some(config) = parse_nat(&line, &mut errors) {
                    spec.nats.push(NatDecl { name: line.name().unwrap().into(), config, line: no });
                }
            }
            ("link", _) => {
                if let Some(d) = parse_link(&line, &mut errors) {
                    spec.links.push(d);
                }
            }
            ("policy", _) => parse_policy(&line, &mut spec.policy, &mut errors),
            ("carrier", _) => {
                if !line.pairs.is_empty() {
                    errors.push(err(no, "carrier takes only a NAT name"));
                }
                carrier_lines.push((no, line.name().unwrap().to_string()));
            }
            (other, _) => errors.push(err(no, format!("unknown directive {other:?}"))),
        }
    }
    for (no, name) in carrier_lines {
        if spec.nats.iter().any(|n| n.name == name) {
            spec.carriers.push(name);
        } else {
            errors.push(err(no, format!("carrier {name:?} is not a defined nat")));
        }
    }
    if errors.is_empty() {
        errors.extend(spec.validate());
    }
    if errors.is_empty() {
        Ok(spec)
    } else {
        errors.sort_by_key(|e| e.line);
        Err(ScenarioErrors(errors))
    }
}

impl ScenarioSpec {
    fn names(&self) -> impl Iterator<Item = (&str, usize)> {
        self.nodes.iter().map(|n| (n.name.as_str(), n.line)).chain(self.nats.iter().map(|n| (n.name.as_str(), n.line)))
    }

    pub fn peers(&self) -> impl Iterator<Item = &NodeDecl> {
        self.nodes.iter().filter(|n| n.role == Role::Peer)
    }

    pub fn nodes_with(&self, role: Role) -> impl Iterator<Item = &NodeDecl> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    pub fn nat(&self, name: &str) -> Option<&NatDecl> {
        self.nats.iter().find(|n| n.name == name)
    }

    fn parent_of(&self, name: &str) -> &str {
        self.links.iter().find(|l| l.child == name).map(|l| l.parent.as_str()).unwrap_or(INTERNET)
    }

    pub fn topology(&self) -> TopologySpec {
        let mut t = TopologySpec::new(self.seed);
        for n in &self.nodes {
            t = t.node(NodeSpec::host(n.name.clone(), n.address));
        }
        for n in &self.nats {
            t = t.node(NodeSpec::nat(n.name.clone(), n.config.clone()));
        }
        for l in &self.links {
            t = t.link(&l.child, &l.parent, l.profile);
        }
        t
    }

    /// Carrier NATs as matrix inputs, with the uplink declared for each and
    /// the access link of the first peer attached to it.
    pub fn carrier_configs(&self) -> Vec<CarrierConfig> {
        self.carriers
            .iter()
            .filter_map(|name| {
                let nat = self.nat(name)?;
                let mut c = CarrierConfig::new(name.clone(), nat.config.clone());
                if let Some(l) = self.links.iter().find(|l| &l.child == name) {
                    c.uplink = l.profile;
                }
                let access = self.links.iter().find(|l| &l.parent == name && self.peers().any(|p| p.name == l.child));
                if let Some(l) = access {
                    c.access = l.profile;
                }
                Some(c)
            })
            .collect()
    }

    /// Structural checks beyond single lines: references resolve, the
    /// topology builds, and servers sit on the public internet.
    pub fn validate(&self) -> Vec<ScenarioError> {
        let mut errors = Vec::new();
        let known: Vec<_> = self.names().map(|(n, _)| n).collect();
        let mut seen = std::collections::HashMap::new();
        for (name, line) in self.names() {
            if let Some(first) = seen.insert(name, line) {
                errors.push(err(line, format!("{name:?} already defined on line {first}")));
            }
        }
        for l in &self.links {
            for end in [&l.child, &l.parent] {
                if end != INTERNET && !known.contains(&end.as_str()) {
                    errors.push(err(l.line, format!("link references undefined node {end:?}")));
                }
            }
        }
        if !errors.is_empty() {
            return errors;
        }
        if let Err(e) = Network::build(&self.topology()) {
            errors.push(err(0, format!("invalid topology: {e}")));
            return errors;
        }
        for n in self.nodes.iter().filter(|n| n.role != Role::Peer) {
            if self.parent_of(&n.name) != INTERNET {
                errors.push(err(n.line, format!("server {:?} must attach to the internet", n.name)));
            }
        }
        if self.peers().next().is_some() && self.nodes.iter().all(|n| n.role == Role::Peer) {
            errors.push(err(0, "peers need at least one server to reach"));
        }
        errors
    }
}

/// A built network plus where its servers live.
pub struct World {
    pub net: Network,
    pub stun: Option<StunServerPair>,
    pub rendezvous: Option<EndpointAddress>,
    pub relay: Option<EndpointAddress>,
    /// (name, node, local endpoint) per declared peer.
    pub peers: Vec<(String, NodeId, EndpointAddress)>,
    pub policy: Policy,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World").field("peers", &self.peers).field("now", &self.net.now()).finish()
    }
}

const DISCOVERY_WAIT: SimTime = SimTime::from_secs(2);
/// Offset from a peer's port to the ports its classification runs from.
const CLASSIFY_PORT_OFFSET: u16 = 100;

impl World {
    pub fn build(spec: &ScenarioSpec) -> Result<World, NetworkError> {
        let mut net = Network::build(&spec.topology())?;
        let endpoint = |n: &NodeDecl| EndpointAddress::new(n.address, n.port).expect("non-zero port");
        let stuns: Vec<_> = spec.nodes_with(Role::Stun).collect();
        let mut stun = None;
        for (i, s) in stuns.iter().enumerate() {
            let mut server = StunServer::new(endpoint(s));
            if stuns.len() > 1 {
                server = server.with_partner(endpoint(stuns[(i + 1) % stuns.len()]));
            }
            net.set_responder(net.node_id(&s.name)?, Box::new(server))?;
        }
        if stuns.len() >= 2 {
            stun = Some(StunServerPair { a: endpoint(stuns[0]), b: endpoint(stuns[1]) });
        } else if let Some(s) = stuns.first() {
            stun = Some(StunServerPair { a: endpoint(s), b: endpoint(s) });
        }
        let mut rendezvous = None;
        if let Some(r) = spec.nodes_with(Role::Rendezvous).next() {
            net.set_responder(net.node_id(&r.name)?, Box::new(RendezvousServer::new()))?;
            rendezvous = Some(endpoint(r));
        }
        let mut relay = None;
        if let Some(r) = spec.nodes_with(Role::Relay).next() {
            net.set_responder(net.node_id(&r.name)?, Box::new(RelayServer::new()))?;
            relay = Some(endpoint(r));
        }
        let peers = spec
            .peers()
            .map(|p| Ok((p.name.clone(), net.node_id(&p.name)?, endpoint(p))))
            .collect::<Result<_, NetworkError>>()?;
        Ok(World { net, stun, rendezvous, relay, peers, policy: spec.policy.clone() })
    }

    pub fn peer_index(&self, name: &str) -> Option<usize> {
        self.peers.iter().position(|(n, _, _)| n == name)
    }

    /// Classifies the peer's NAT path and learns its reflexive endpoint.
    pub fn discover(&mut self, i: usize) -> Result<Peer, DiscoveryError> {
        let (_, node, local) = self.peers[i].clone();
        let stun = self.stun.ok_or(DiscoveryError::Inconclusive("no STUN servers in scenario"))?;
        let class = if stun.a == stun.b {
            NatClassName::OpenInternet
        } else {
            classify_nat(&mut self.net, node, local.port().wrapping_add(CLASSIFY_PORT_OFFSET).max(1), stun, DISCOVERY_WAIT)?
        };
        let mapped = stun_bind(&mut self.net, node, local.port(), stun.a, DISCOVERY_WAIT)?;
        Ok(Peer {
            id: PeerId(i as u64 + 1),
            node,
            local,
            candidates: CandidateSet { local, reflexive: Some(mapped) },
            class,
        })
    }

    /// Discovers both peers, registers them at the rendezvous server and
    /// has it introduce them. Returns each side with its own candidates and
    /// the agreed punch start.
    pub fn introduce(&mut self, i: usize, j: usize) -> Result<(Peer, Peer, SimTime), DiscoveryError> {
        let t0 = self.net.now();
        let a = self.discover(i)?;
        let b = self.discover(j)?;
        let rtt = SimTime((self.net.now().as_micros() - t0.as_micros()) / 8).max(SimTime(1));
        let Some(server) = self.rendezvous else {
            return Ok((a, b, self.net.now()));
        };
        for p in [&a, &b] {
            register(&mut self.net, p.node, p.local, server, p.id, p.candidates)?;
        }
        let settle = self.net.now() + DISCOVERY_WAIT;
        while self.net.step_until(settle).is_some() {}
        let pa = Participant { node: a.node, local: a.local, id: a.id };
        let pb = Participant { node: b.node, local: b.local, id: b.id };
        let out = rendezvous_exchange(&mut self.net, server, pa, pb, rtt, DISCOVERY_WAIT)?;
        debug_assert_eq!(out.for_a, b.candidates);
        Ok((a, b, out.start.max(self.net.now())))
    }
}

/// Addresses used by the canned worlds.
mod plan {
    pub const STUN_A: [u8; 4] = [198, 51, 100, 1];
    pub const STUN_B: [u8; 4] = [198, 51, 100, 2];
    pub const RENDEZVOUS: [u8; 4] = [198, 51, 100, 10];
    pub const RELAY: [u8; 4] = [198, 51, 100, 20];
}

impl ScenarioSpec {
    /// STUN pair, rendezvous and relay on the public internet.
    pub fn with_servers(seed: u64) -> Self {
        let server = |name: &str, role, addr: [u8; 4], port| NodeDecl {
            name: name.into(),
            role,
            address: HostId::from(addr),
            port,
            line: 0,
        };
        ScenarioSpec {
            seed,
            nodes: vec![
                server("stun-a", Role::Stun, plan::STUN_A, STUN_PORT),
                server("stun-b", Role::Stun, plan::STUN_B, STUN_PORT),
                server("rendezvous", Role::Rendezvous, plan::RENDEZVOUS, RENDEZVOUS_PORT),
                server("relay", Role::Relay, plan::RELAY, RELAY_PORT),
            ],
            ..Default::default()
        }
    }

    pub fn add_peer(&mut self, name: &str, address: HostId, parent: &str, latency: SimTime) {
        self.nodes.push(NodeDecl { name: name.into(), role: Role::Peer, address, port: DEFAULT_PEER_PORT, line: 0 });
        self.links.push(LinkDecl { child: name.into(), parent: parent.into(), profile: LinkProfile::lossless(latency), line: 0 });
    }

    pub fn add_nat(&mut self, name: &str, config: NatConfig, parent: &str, latency: SimTime) {
        self.nats.push(NatDecl { name: name.into(), config, line: 0 });
        self.links.push(LinkDecl { child: name.into(), parent: parent.into(), profile: LinkProfile::lossless(latency), line: 0 });
    }

    /// Two peers, each behind its own NAT of the given class (or public).
    pub fn two_peers(ca: NatClassName, cb: NatClassName, seed: u64, tweak: impl Fn(NatConfig) -> NatConfig) -> Self {
        let mut spec = Self::with_servers(seed);
        for (i, class) in [ca, cb].into_iter().enumerate() {
            let i = i as u8;
            let name = format!("peer-{}", (b'a' + i) as char);
            if class == NatClassName::OpenInternet {
                spec.add_peer(&name, HostId::from([203, 0, 113, 101 + i]), INTERNET, SimTime::from_millis(10));
            } else {
                let nat = format!("nat-{}", (b'a' + i) as char);
                let cfg = tweak(NatConfig::for_class(class, HostId::from([203, 0, 113, 1 + i])));
                spec.add_nat(&nat, cfg, INTERNET, SimTime::from_millis(10));
                spec.add_peer(&name, HostId::from([192, 168, 1 + i, 2]), &nat, SimTime::from_millis(2));
            }
        }
        spec
    }

    /// Two peers behind their own home NATs, both behind one carrier NAT.
    pub fn shared_cgnat(hairpinning: bool, seed: u64) -> Self {
        let mut spec = Self::with_servers(seed);
        let cgnat = NatConfig::for_class(NatClassName::PortRestrictedCone, HostId::from([203, 0, 113, 50]))
            .with_hairpinning(hairpinning)
            .carrier_grade(true);
        spec.add_nat("cgnat", cgnat, INTERNET, SimTime::from_millis(15));
        for i in 0..2u8 {
            let home = format!("home-{}", (b'a' + i) as char);
            let cfg = NatConfig::for_class(NatClassName::PortRestrictedCone, HostId::from([100, 64, 0, 2 + i]));
            spec.add_nat(&home, cfg, "cgnat", SimTime::from_millis(5));
            spec.add_peer(&format!("peer-{}", (b'a' + i) as char), HostId::from([192, 168, 1 + i, 2]), &home, SimTime::from_millis(1));
        }
        spec
    }

    /// The carrier experiment: four carrier NATs (three endpoint-independent,
    /// one symmetric), a phone on two of them, a public peer, and a
    /// rendezvous server.
    pub fn carrier_experiment(seed: u64) -> Self {
        let mut spec = Self::with_servers(seed);
        let carriers = [
            ("kpn", NatClassName::PortRestrictedCone),
            ("vodafone", NatClassName::PortRestrictedCone),
            ("t-mobile", NatClassName::PortRestrictedCone),
            ("lyca", NatClassName::Symmetric),
        ];
        for (i, (name, class)) in carriers.iter().enumerate() {
            let cfg = NatConfig::for_class(*class, HostId::from([203, 0, 113, 10 + i as u8])).carrier_grade(true);
            spec.add_nat(name, cfg, INTERNET, SimTime::from_millis(20));
            spec.carriers.push(name.to_string());
        }
        spec.add_peer("phone-1", HostId::from([100, 64, 1, 2]), "kpn", SimTime::from_millis(15));
        spec.add_peer("phone-2", HostId::from([100, 64, 2, 2]), "lyca", SimTime::from_millis(15));
        spec.add_peer("jvm", HostId::from([198, 18, 0, 5]), INTERNET, SimTime::from_millis(5));
        spec.policy = Policy::only(&[PunchStrategy::SimplePunch]);
        spec
    }
}

impl World {
    pub fn two_peers(ca: NatClassName, cb: NatClassName, seed: u64) -> World {
        Self::two_peers_with(ca, cb, seed, |c| c)
    }

    pub fn two_peers_with(ca: NatClassName, cb: NatClassName, seed: u64, tweak: impl Fn(NatConfig) -> NatConfig) -> World {
        World::build(&ScenarioSpec::two_peers(ca, cb, seed, tweak)).expect("canned topology is valid")
    }

    pub fn shared_cgnat(hairpinning: bool, seed: u64) -> World {
        World::build(&ScenarioSpec::shared_cgnat(hairpinning, seed)).expect("canned topology is valid")
    }
}
