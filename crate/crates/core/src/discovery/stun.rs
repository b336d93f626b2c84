use std::any::Any;

use crate::natbox::NatClassName;
use crate::netsim::wire::ReplyMode;
use crate::netsim::{Datagram, EndpointAddress, Message, MessageKind, Network, NodeId, Responder, SimTime};

use super::{await_datagram, DiscoveryError, MappedAddress};

pub const STUN_PORT: u16 = 3478;
pub const STUN_ALT_PORT: u16 = 3479;

/// Reflexive-address server. It listens on a primary and an alternate port
/// and can ask a partner server on another host to answer on its behalf.
#[derive(Clone, Debug)]
pub struct StunServer {
    pub primary: EndpointAddress,
    pub alternate: EndpointAddress,
    pub partner: Option<EndpointAddress>,
}

impl StunServer {
    pub fn new(primary: EndpointAddress) -> Self {
        let alternate = primary.with_port(STUN_ALT_PORT).expect("non-zero");
        StunServer { primary, alternate, partner: None }
    }

    pub fn with_partner(mut self, partner: EndpointAddress) -> Self {
        self.partner = Some(partner);
        self
    }

    fn other_port(&self, port: u16) -> EndpointAddress {
        if port == self.primary.port() {
            self.alternate
        } else {
            self.primary
        }
    }
}

impl Responder for StunServer {
    fn on_datagram(&mut self, _now: SimTime, d: &Datagram) -> Vec<Datagram> {
        let resp = |from: EndpointAddress, to: EndpointAddress| {
            Datagram::new(from, to, &Message::StunResp { mapped: to })
        };
        match d.message() {
            Ok(Message::StunReq) | Ok(Message::AltReplyReq { mode: ReplyMode::Same }) => {
                vec![resp(d.dst, d.src)]
            }
            Ok(Message::AltReplyReq { mode: ReplyMode::AltPort }) => {
                vec![resp(self.other_port(d.dst.port()), d.src)]
            }
            Ok(Message::AltReplyReq { mode: ReplyMode::AltHost }) => match self.partner {
                Some(p) => vec![Datagram::new(self.primary, p, &Message::StunForward { client: d.src })],
                None => Vec::new(),
            },
            Ok(Message::StunForward { client }) => vec![resp(self.alternate, client)],
            _ => Vec::new(),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Two cooperating servers on distinct hosts, as classification needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StunServerPair {
    pub a: EndpointAddress,
    pub b: EndpointAddress,
}

fn stun_response(d: &Datagram) -> Option<EndpointAddress> {
    match d.message() {
        Ok(Message::StunResp { mapped }) => Some(mapped),
        _ => None,
    }
}

/// Asks `server` which endpoint it sees `client:local_port` as.
pub fn stun_bind(
    net: &mut Network,
    client: NodeId,
    local_port: u16,
    server: EndpointAddress,
    wait: SimTime,
) -> Result<MappedAddress, DiscoveryError> {
    let local = net.endpoint(client, local_port)?;
    net.send(client, Datagram::new(local, server, &Message::StunReq))?;
    let deadline = net.now() + wait;
    let d = await_datagram(net, client, local, deadline, |d| {
        d.kind() == MessageKind::StunResp && d.src == server
    })
    .ok_or(DiscoveryError::Timeout)?;
    Ok(MappedAddress {
        reflexive: stun_response(&d).expect("filtered on kind"),
        observed_at: net.now(),
        server,
    })
}

fn alt_reply(
    net: &mut Network,
    client: NodeId,
    local: EndpointAddress,
    server: EndpointAddress,
    mode: ReplyMode,
    wait: SimTime,
) -> Result<bool, DiscoveryError> {
    net.send(client, Datagram::new(local, server, &Message::AltReplyReq { mode }))?;
    let deadline = net.now() + wait;
    Ok(await_datagram(net, client, local, deadline, |d| d.kind() == MessageKind::StunResp).is_some())
}

/// Classifies the NAT path in front of `client`.
///
/// The mapping test runs first (same local port to both servers), so an
/// endpoint-dependent mapping short-circuits the filtering tests. The
/// filtering tests run from a second local port that has only contacted
/// server A's primary endpoint.
pub fn classify_nat(
    net: &mut Network,
    client: NodeId,
    local_port: u16,
    servers: StunServerPair,
    wait: SimTime,
) -> Result<NatClassName, DiscoveryError> {
    let local = net.endpoint(client, local_port)?;
    let first = stun_bind(net, client, local_port, servers.a, wait)
        .map_err(|_| DiscoveryError::Inconclusive("server A did not answer"))?;
    if first.reflexive == local {
        return Ok(NatClassName::OpenInternet);
    }
    let second = stun_bind(net, client, local_port, servers.b, wait)
        .map_err(|_| DiscoveryError::Inconclusive("server B did not answer"))?;
    if second.reflexive != first.reflexive {
        return Ok(NatClassName::Symmetric);
    }

    let probe_port = if local_port == u16::MAX { 1 } else { local_port + 1 };
    let probe_local = net.endpoint(client, probe_port)?;
    stun_bind(net, client, probe_port, servers.a, wait)
        .map_err(|_| DiscoveryError::Inconclusive("server A stopped answering"))?;
    if alt_reply(net, client, probe_local, servers.a, ReplyMode::AltHost, wait)? {
        return Ok(NatClassName::FullCone);
    }
    if alt_reply(net, client, probe_local, servers.a, ReplyMode::AltPort, wait)? {
        return Ok(NatClassName::RestrictedCone);
    }
    Ok(NatClassName::PortRestrictedCone)
}
