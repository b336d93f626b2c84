//! Connection strategies: simultaneous hole punching, brute-force port
//! scanning, birthday-paradox collision, port-mapping requests, hairpin
//! loops, relaying, and the ladder that tries them in order.

mod engine;
mod ice;
mod mapping;
mod matrix;
mod punch;
mod relay;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::discovery::{CandidateSet, PeerId};
use crate::natbox::NatClassName;
use crate::netsim::{EndpointAddress, HostId, Network, NodeId, SimTime};

pub use ice::{ice_connect, keepalive, send_app, IceOutcome, Policy};
pub use mapping::{request_mapping, MappingError, MappingGrant};
pub use matrix::{run_interop_matrix, CarrierConfig, InteropMatrix, MatrixCell};
pub use punch::{
    birthday_punch, birthday_trial, brute_force_punch, direct_connect, hairpin_connect, simple_punch,
    BirthdayParams, BruteForceParams, Chunking, PunchTiming,
};
pub use relay::{relay_connect, RelayServer, RELAY_PORT};

/// One rung of the connection ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PunchStrategy {
    Direct,
    PortMapping,
    SimplePunch,
    BruteForce,
    /// Probes per side.
    Birthday(u64),
    Hairpin,
    Relay,
}

impl PunchStrategy {
    /// Position in the ladder; lower runs first.
    pub fn rank(self) -> u8 {
        match self {
            PunchStrategy::Direct => 0,
            PunchStrategy::PortMapping => 1,
            PunchStrategy::SimplePunch => 2,
            PunchStrategy::BruteForce => 3,
            PunchStrategy::Birthday(_) => 4,
            PunchStrategy::Hairpin => 5,
            PunchStrategy::Relay => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PunchStrategy::Direct => "direct",
            PunchStrategy::PortMapping => "port-mapping",
            PunchStrategy::SimplePunch => "simple-punch",
            PunchStrategy::BruteForce => "brute-force",
            PunchStrategy::Birthday(_) => "birthday",
            PunchStrategy::Hairpin => "hairpin",
            PunchStrategy::Relay => "relay",
        }
    }
}

impl fmt::Display for PunchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PunchStrategy::Birthday(k) => write!(f, "birthday(k={k})"),
            s => f.write_str(s.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy `{0}`")]
pub struct UnknownStrategy(pub String);

impl FromStr for PunchStrategy {
    type Err = UnknownStrategy;

    /// Parses a strategy name; `birthday` gets k = 1 until a policy sets it.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "direct" => PunchStrategy::Direct,
            "port-mapping" | "portmapping" | "pmp" => PunchStrategy::PortMapping,
            "simple-punch" | "simplepunch" | "simple" | "punch" => PunchStrategy::SimplePunch,
            "brute-force" | "bruteforce" | "brute" => PunchStrategy::BruteForce,
            "birthday" => PunchStrategy::Birthday(1),
            "hairpin" => PunchStrategy::Hairpin,
            "relay" => PunchStrategy::Relay,
            other => return Err(UnknownStrategy(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Direct,
    Hairpin,
    Relayed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum FailReason {
    #[error("timed out")]
    Timeout,
    #[error("no usable candidates")]
    NoCandidates,
    #[error("NAT table full")]
    TableFull,
    #[error("hairpinning unsupported")]
    HairpinUnsupported,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("relay down")]
    RelayDown,
    #[error("mapping expired")]
    MappingExpired,
    #[error("port mapping unsupported")]
    Unsupported,
    #[error("all strategies exhausted")]
    AllStrategiesExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "state", content = "detail", rename_all = "lowercase")]
pub enum SessionState {
    Idle,
    Gathering,
    Punching,
    Established(PathKind),
    Failed(FailReason),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal session transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: SessionState,
    pub to: SessionState,
}

/// Counters for one attempt, or summed over a ladder run. Index 0 is the
/// initiating side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PunchStats {
    pub probes_sent: [u64; 2],
    pub mappings_consumed: [u64; 2],
    pub elapsed: SimTime,
}

impl PunchStats {
    pub fn total_probes(&self) -> u64 {
        self.probes_sent[0] + self.probes_sent[1]
    }

    pub fn accumulate(&mut self, other: &PunchStats) {
        for i in 0..2 {
            self.probes_sent[i] += other.probes_sent[i];
            self.mappings_consumed[i] += other.mappings_consumed[i];
        }
        self.elapsed = self.elapsed + other.elapsed;
    }
}

/// One side's view of an established path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PathEnd {
    #[serde(skip)]
    pub node: NodeId,
    pub local: EndpointAddress,
    /// Where this side addresses the peer (the peer's endpoint, or its
    /// identity at the relay).
    pub remote: EndpointAddress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SessionPath {
    pub kind: PathKind,
    pub a: PathEnd,
    pub b: PathEnd,
    pub relay: Option<EndpointAddress>,
}

/// Connection attempt between two peers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraversalSession {
    state: SessionState,
    pub strategy: Option<PunchStrategy>,
    pub stats: PunchStats,
    pub path: Option<SessionPath>,
    /// Nonce carried by this session's probes.
    pub nonce: u64,
}

impl Default for TraversalSession {
    fn default() -> Self {
        TraversalSession { state: SessionState::Idle, strategy: None, stats: PunchStats::default(), path: None, nonce: 0 }
    }
}

impl TraversalSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn is_established(&self) -> bool {
        matches!(self.state, SessionState::Established(_))
    }

    pub fn failure(&self) -> Option<&FailReason> {
        match &self.state {
            SessionState::Failed(r) => Some(r),
            _ => None,
        }
    }

    /// Moves to `to` if the transition is legal: Idle → Gathering → Punching →
    /// {Established, Failed}, plus Established → Failed(MappingExpired) when
    /// an idle path times out.
    pub fn advance(&mut self, to: SessionState) -> Result<(), TransitionError> {
        use SessionState::*;
        let ok = matches!(
            (&self.state, &to),
            (Idle, Gathering)
                | (Gathering, Punching)
                | (Punching, Established(_))
                | (Punching, Failed(_))
                | (Established(_), Failed(FailReason::MappingExpired))
        );
        if !ok {
            return Err(TransitionError { from: self.state.clone(), to });
        }
        self.state = to;
        Ok(())
    }

    fn fail(strategy: PunchStrategy, reason: FailReason, stats: PunchStats) -> Self {
        let mut s = TraversalSession::new();
        s.strategy = Some(strategy);
        s.stats = stats;
        for st in [SessionState::Gathering, SessionState::Punching, SessionState::Failed(reason)] {
            s.advance(st).expect("legal path");
        }
        s
    }
}

/// Everything one side knows about itself after discovery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Peer {
    pub id: PeerId,
    #[serde(skip)]
    pub node: NodeId,
    /// The endpoint the peer registered and punches from.
    pub local: EndpointAddress,
    pub candidates: CandidateSet,
    /// Outcome of its own NAT classification.
    pub class: NatClassName,
}

impl Peer {
    /// Endpoint-dependent mapping somewhere on the path out.
    pub fn is_edm(&self) -> bool {
        self.class == NatClassName::Symmetric
    }

    pub fn is_natted(&self) -> bool {
        self.class != NatClassName::OpenInternet
    }

    pub fn reflexive(&self) -> Option<EndpointAddress> {
        self.candidates.reflexive.map(|m| m.reflexive)
    }

    /// The host the outside world sees this peer as.
    pub fn external_host(&self) -> HostId {
        self.candidates.best().host()
    }
}

/// External hosts of every NAT above `node`, innermost first.
pub(crate) fn nat_hosts_above(net: &Network, node: NodeId) -> Vec<HostId> {
    net.ancestors(node).into_iter().filter_map(|n| net.nat(n).map(|b| b.external_host())).collect()
}

/// NATs shared by both nodes' uplink chains.
pub(crate) fn shared_nats(net: &Network, a: NodeId, b: NodeId) -> Vec<NodeId> {
    let theirs = net.ancestors(b);
    net.ancestors(a).into_iter().filter(|n| theirs.contains(n) && net.nat(*n).is_some()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legal_transitions() {
        let mut s = TraversalSession::new();
        assert!(s.advance(SessionState::Punching).is_err());
        s.advance(SessionState::Gathering).unwrap();
        s.advance(SessionState::Punching).unwrap();
        s.advance(SessionState::Established(PathKind::Direct)).unwrap();
        assert!(s.advance(SessionState::Failed(FailReason::Timeout)).is_err());
        s.advance(SessionState::Failed(FailReason::MappingExpired)).unwrap();
        assert!(s.advance(SessionState::Idle).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            PunchStrategy::Direct,
            PunchStrategy::PortMapping,
            PunchStrategy::SimplePunch,
            PunchStrategy::BruteForce,
            PunchStrategy::Birthday(1),
            PunchStrategy::Hairpin,
            PunchStrategy::Relay,
        ] {
            assert_eq!(s.name().parse::<PunchStrategy>().unwrap(), s);
        }
        assert!("pwnat".parse::<PunchStrategy>().is_err());
    }
}
