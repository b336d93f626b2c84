//! Deterministic discrete-event network substrate.
//!
//! Time is an integer count of microseconds. Every node owns a seeded
//! random stream derived from the scenario's root seed, so a scenario
//! plus a seed fully determines the event trace.

mod network;
mod trace;
pub mod wire;

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

pub use network::{
    LinkSpec, NetCounters, Network, NetworkError, NodeId, NodeKind, NodeSpec, Responder, StepOutcome,
    TopologySpec, INTERNET, PORT_MAPPING_PORT,
};
pub use trace::{DropReason, EventTrace, TraceEntry, TraceKind};
pub use wire::{Message, MessageKind, WireError};

/// Instant or delta on the simulation clock, in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Used for mapping lifetimes that never run out.
    pub const INFINITE: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn is_infinite(self) -> bool {
        self == Self::INFINITE
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        self.saturating_add(rhs)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
        }
    }
}

/// A 32-bit host identifier playing the role of an IPv4 address.
/// Zero means "unassigned".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HostId(pub u32);

impl HostId {
    pub const UNASSIGNED: HostId = HostId(0);

    pub fn is_assigned(self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0.to_be_bytes();
        write!(f, "{a}.{b}.{c}.{d}")
    }
}

impl From<[u8; 4]> for HostId {
    fn from(octets: [u8; 4]) -> Self {
        HostId(u32::from_be_bytes(octets))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AddressError {
    #[error("port 0 is not a valid endpoint port")]
    ZeroPort,
    #[error("malformed endpoint {0:?}")]
    Malformed(String),
}

/// `host:port` pair. The port is never zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointAddress {
    host: HostId,
    port: u16,
}

impl EndpointAddress {
    pub fn new(host: HostId, port: u16) -> Result<Self, AddressError> {
        if port == 0 {
            return Err(AddressError::ZeroPort);
        }
        Ok(EndpointAddress { host, port })
    }

    /// Panics on port 0. For literals in tests and builders.
    pub fn from_parts(host: u32, port: u16) -> Self {
        Self::new(HostId(host), port).expect("non-zero port")
    }

    pub fn host(&self) -> HostId {
        self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn with_port(self, port: u16) -> Result<Self, AddressError> {
        Self::new(self.host, port)
    }
}

impl fmt::Display for EndpointAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl std::str::FromStr for EndpointAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddressError::Malformed(s.to_string());
        let (host, port) = s.rsplit_once(':').ok_or_else(bad)?;
        let mut octets = [0u8; 4];
        let mut parts = host.split('.');
        for o in octets.iter_mut() {
            *o = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        let port: u16 = port.parse().map_err(|_| bad())?;
        EndpointAddress::new(HostId::from(octets), port)
    }
}

impl Serialize for EndpointAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EndpointAddress {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fixed per-frame bytes added on top of the UDP payload when a datagram is
/// on the wire. An 8-byte payload comes to 88 bytes, the default probe size
/// used by the rate budget in [`crate::analytics`].
pub const FRAME_OVERHEAD_BYTES: usize = 80;

/// A simulated UDP datagram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Datagram {
    pub src: EndpointAddress,
    pub dst: EndpointAddress,
    payload: Vec<u8>,
}

impl Datagram {
    pub fn new(src: EndpointAddress, dst: EndpointAddress, msg: &Message) -> Self {
        Datagram { src, dst, payload: msg.encode() }
    }

    /// Builds a datagram from an already-encoded payload.
    pub fn from_payload(
        src: EndpointAddress,
        dst: EndpointAddress,
        payload: Vec<u8>,
    ) -> Result<Self, WireError> {
        MessageKind::from_tag(*payload.first().ok_or(WireError::Empty)?)?;
        Ok(Datagram { src, dst, payload })
    }

    pub fn kind(&self) -> MessageKind {
        MessageKind::from_tag(self.payload[0]).expect("validated on construction")
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn message(&self) -> Result<Message, WireError> {
        Message::decode(&self.payload)
    }

    pub fn wire_bytes(&self) -> usize {
        self.payload.len() + FRAME_OVERHEAD_BYTES
    }

    pub fn readdressed(&self, src: EndpointAddress, dst: EndpointAddress) -> Self {
        Datagram { src, dst, payload: self.payload.clone() }
    }
}

/// Per-link delivery characteristics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub latency: SimTime,
    pub loss_rate: f64,
    pub rate_cap_pps: Option<u32>,
}

impl LinkProfile {
    pub const DEFAULT_LATENCY: SimTime = SimTime::from_millis(10);

    pub fn new(latency: SimTime, loss_rate: f64, rate_cap_pps: Option<u32>) -> Result<Self, NetworkError> {
        if !(0.0..=1.0).contains(&loss_rate) {
            return Err(NetworkError::InvalidLink(format!("loss_rate {loss_rate} outside [0, 1]")));
        }
        if rate_cap_pps == Some(0) {
            return Err(NetworkError::InvalidLink("rate cap of 0 pps".into()));
        }
        Ok(LinkProfile { latency, loss_rate, rate_cap_pps })
    }

    pub fn lossless(latency: SimTime) -> Self {
        LinkProfile { latency, loss_rate: 0.0, rate_cap_pps: None }
    }
}

impl Default for LinkProfile {
    fn default() -> Self {
        LinkProfile::lossless(Self::DEFAULT_LATENCY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_rejects_port_zero() {
        assert_eq!(EndpointAddress::new(HostId(1), 0), Err(AddressError::ZeroPort));
    }

    #[test]
    fn endpoint_parse_display() {
        let e: EndpointAddress = "10.0.0.2:4000".parse().unwrap();
        assert_eq!(e.host(), HostId::from([10, 0, 0, 2]));
        assert_eq!(e.to_string(), "10.0.0.2:4000");
        assert!("10.0.0:1".parse::<EndpointAddress>().is_err());
        assert!("10.0.0.1:0".parse::<EndpointAddress>().is_err());
    }

    #[test]
    fn wire_bytes_include_overhead() {
        let a = EndpointAddress::from_parts(1, 1);
        let d = Datagram::new(a, a, &Message::Probe { nonce: 7 });
        assert_eq!(d.wire_bytes(), d.payload().len() + FRAME_OVERHEAD_BYTES);
        assert!(d.wire_bytes() >= d.payload().len());
    }

    #[test]
    fn link_profile_validation() {
        assert!(LinkProfile::new(SimTime::ZERO, 1.5, None).is_err());
        assert!(LinkProfile::new(SimTime::ZERO, 0.5, Some(0)).is_err());
        assert!(LinkProfile::new(SimTime::ZERO, 1.0, Some(10)).is_ok());
    }
}
