//! Big-endian wire encoding for every message the simulator carries.
//!
//! | tag  | message        | body                                              |
//! |------|----------------|---------------------------------------------------|
//! | 0x01 | STUN_REQ       | -                                                 |
//! | 0x02 | STUN_RESP      | host u32, port u16                                |
//! | 0x03 | PROBE          | nonce u64                                         |
//! | 0x04 | PROBE_ACK      | nonce u64                                         |
//! | 0x05 | APP            | opaque bytes                                      |
//! | 0x06 | PMP_REQ        | internal port u16, requested port u16, lifetime u32 |
//! | 0x07 | PMP_RESP       | status u8, granted port u16, lifetime u32         |
//! | 0x08 | RELAY_FWD      | inner src (6), inner dst (6), inner payload       |
//! | 0x09 | ALT_REPLY_REQ  | mode u8 (0 same, 1 alt-port, 2 alt-host)          |
//! | 0x0A | REGISTER       | peer id u64, candidate set                        |
//! | 0x0B | EXCHANGE       | op u8, then op-specific body                      |
//! | 0x0C | ACK_ACK        | nonce u64                                         |
//! | 0x0D | STUN_FORWARD   | client host u32, client port u16                  |
//!
//! A candidate set is `local (6) | has_reflexive u8 | [reflexive (6),
//! observed_at u64, server (6)]`. EXCHANGE ops are 0 = request
//! (`from u64, target u64, rtt_us u32`), 1 = response
//! (`peer u64, candidate set, start_us u64`), 2 = unknown peer (`peer u64`).

use crate::discovery::{CandidateSet, MappedAddress, PeerId};

use super::{EndpointAddress, HostId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    StunReq = 0x01,
    StunResp = 0x02,
    Probe = 0x03,
    ProbeAck = 0x04,
    App = 0x05,
    PmpReq = 0x06,
    PmpResp = 0x07,
    RelayFwd = 0x08,
    AltReplyReq = 0x09,
    Register = 0x0A,
    Exchange = 0x0B,
    AckAck = 0x0C,
    StunForward = 0x0D,
}

impl MessageKind {
    pub fn from_tag(tag: u8) -> Result<Self, WireError> {
        use MessageKind::*;
        Ok(match tag {
            0x01 => StunReq,
            0x02 => StunResp,
            0x03 => Probe,
            0x04 => ProbeAck,
            0x05 => App,
            0x06 => PmpReq,
            0x07 => PmpResp,
            0x08 => RelayFwd,
            0x09 => AltReplyReq,
            0x0A => Register,
            0x0B => Exchange,
            0x0C => AckAck,
            0x0D => StunForward,
            other => return Err(WireError::UnknownTag(other)),
        })
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        use MessageKind::*;
        match self {
            StunReq => "STUN_REQ",
            StunResp => "STUN_RESP",
            Probe => "PROBE",
            ProbeAck => "PROBE_ACK",
            App => "APP",
            PmpReq => "PMP_REQ",
            PmpResp => "PMP_RESP",
            RelayFwd => "RELAY_FWD",
            AltReplyReq => "ALT_REPLY_REQ",
            Register => "REGISTER",
            Exchange => "EXCHANGE",
            AckAck => "ACK_ACK",
            StunForward => "STUN_FORWARD",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("empty payload")]
    Empty,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("truncated {0} message")]
    Truncated(&'static str),
    #[error("invalid field in {0} message")]
    Invalid(&'static str),
}

/// Which address the primary STUN server should answer an
/// [`Message::AltReplyReq`] from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplyMode {
    Same = 0,
    AltPort = 1,
    AltHost = 2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    StunReq,
    StunResp { mapped: EndpointAddress },
    Probe { nonce: u64 },
    ProbeAck { nonce: u64 },
    AckAck { nonce: u64 },
    App { data: Vec<u8> },
    PmpReq { internal_port: u16, requested_port: u16, lifetime_s: u32 },
    PmpResp { status: u8, granted_port: u16, lifetime_s: u32 },
    RelayFwd { src: EndpointAddress, dst: EndpointAddress, inner: Vec<u8> },
    AltReplyReq { mode: ReplyMode },
    Register { peer: PeerId, candidates: CandidateSet },
    ExchangeReq { from: PeerId, target: PeerId, rtt_us: u32 },
    ExchangeResp { peer: PeerId, candidates: CandidateSet, start: SimTime },
    ExchangeUnknown { peer: PeerId },
    StunForward { client: EndpointAddress },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        use Message::*;
        match self {
            StunReq => MessageKind::StunReq,
            StunResp { .. } => MessageKind::StunResp,
            Probe { .. } => MessageKind::Probe,
            ProbeAck { .. } => MessageKind::ProbeAck,
            AckAck { .. } => MessageKind::AckAck,
            App { .. } => MessageKind::App,
            PmpReq { .. } => MessageKind::PmpReq,
            PmpResp { .. } => MessageKind::PmpResp,
            RelayFwd { .. } => MessageKind::RelayFwd,
            AltReplyReq { .. } => MessageKind::AltReplyReq,
            Register { .. } => MessageKind::Register,
            ExchangeReq { .. } | ExchangeResp { .. } | ExchangeUnknown { .. } => MessageKind::Exchange,
            StunForward { .. } => MessageKind::StunForward,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.kind().tag()];
        match self {
            Message::StunReq => {}
            Message::StunResp { mapped } | Message::StunForward { client: mapped } => {
                put_endpoint(&mut out, *mapped)
            }
            Message::Probe { nonce } | Message::ProbeAck { nonce } | Message::AckAck { nonce } => {
                out.extend_from_slice(&nonce.to_be_bytes())
            }
            Message::App { data } => out.extend_from_slice(data),
            Message::PmpReq { internal_port, requested_port, lifetime_s } => {
                out.extend_from_slice(&internal_port.to_be_bytes());
                out.extend_from_slice(&requested_port.to_be_bytes());
                out.extend_from_slice(&lifetime_s.to_be_bytes());
            }
            Message::PmpResp { status, granted_port, lifetime_s } => {
                out.push(*status);
                out.extend_from_slice(&granted_port.to_be_bytes());
                out.extend_from_slice(&lifetime_s.to_be_bytes());
            }
            Message::RelayFwd { src, dst, inner } => {
                put_endpoint(&mut out, *src);
                put_endpoint(&mut out, *dst);
                out.extend_from_slice(inner);
            }
            Message::AltReplyReq { mode } => out.push(*mode as u8),
            Message::Register { peer, candidates } => {
                out.extend_from_slice(&peer.0.to_be_bytes());
                put_candidates(&mut out, candidates);
            }
            Message::ExchangeReq { from, target, rtt_us } => {
                out.push(0);
                out.extend_from_slice(&from.0.to_be_bytes());
                out.extend_from_slice(&target.0.to_be_bytes());
                out.extend_from_slice(&rtt_us.to_be_bytes());
            }
            Message::ExchangeResp { peer, candidates, start } => {
                out.push(1);
                out.extend_from_slice(&peer.0.to_be_bytes());
                put_candidates(&mut out, candidates);
                out.extend_from_slice(&start.0.to_be_bytes());
            }
            Message::ExchangeUnknown { peer } => {
                out.push(2);
                out.extend_from_slice(&peer.0.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        let (&tag, body) = bytes.split_first().ok_or(WireError::Empty)?;
        let kind = MessageKind::from_tag(tag)?;
        let mut r = Reader { buf: body, what: kind.name() };
        let msg = match kind {
            MessageKind::StunReq => Message::StunReq,
            MessageKind::StunResp => Message::StunResp { mapped: r.endpoint()? },
            MessageKind::StunForward => Message::StunForward { client: r.endpoint()? },
            MessageKind::Probe => Message::Probe { nonce: r.u64()? },
            MessageKind::ProbeAck => Message::ProbeAck { nonce: r.u64()? },
            MessageKind::AckAck => Message::AckAck { nonce: r.u64()? },
            MessageKind::App => return Ok(Message::App { data: body.to_vec() }),
            MessageKind::PmpReq => Message::PmpReq {
                internal_port: r.u16()?,
                requested_port: r.u16()?,
                lifetime_s: r.u32()?,
            },
            MessageKind::PmpResp => Message::PmpResp {
                status: r.u8()?,
                granted_port: r.u16()?,
                lifetime_s: r.u32()?,
            },
            MessageKind::RelayFwd => {
                let src = r.endpoint()?;
                let dst = r.endpoint()?;
                return Ok(Message::RelayFwd { src, dst, inner: r.buf.to_vec() });
            }
            MessageKind::AltReplyReq => Message::AltReplyReq {
                mode: match r.u8()? {
                    0 => ReplyMode::Same,
                    1 => ReplyMode::AltPort,
                    2 => ReplyMode::AltHost,
                    _ => return Err(WireError::Invalid("ALT_REPLY_REQ")),
                },
            },
            MessageKind::Register => {
                Message::Register { peer: PeerId(r.u64()?), candidates: r.candidates()? }
            }
            MessageKind::Exchange => match r.u8()? {
                0 => Message::ExchangeReq {
                    from: PeerId(r.u64()?),
                    target: PeerId(r.u64()?),
                    rtt_us: r.u32()?,
                },
                1 => Message::ExchangeResp {
                    peer: PeerId(r.u64()?),
                    candidates: r.candidates()?,
                    start: SimTime(r.u64()?),
                },
                2 => Message::ExchangeUnknown { peer: PeerId(r.u64()?) },
                _ => return Err(WireError::Invalid("EXCHANGE")),
            },
        };
        if !r.buf.is_empty() {
            return Err(WireError::Invalid(kind.name()));
        }
        Ok(msg)
    }
}

fn put_endpoint(out: &mut Vec<u8>, e: EndpointAddress) {
    out.extend_from_slice(&e.host().0.to_be_bytes());
    out.extend_from_slice(&e.port().to_be_bytes());
}

fn put_candidates(out: &mut Vec<u8>, c: &CandidateSet) {
    put_endpoint(out, c.local);
    match &c.reflexive {
        None => out.push(0),
        Some(m) => {
            out.push(1);
            put_endpoint(out, m.reflexive);
            out.extend_from_slice(&m.observed_at.0.to_be_bytes());
            put_endpoint(out, m.server);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        if self.buf.len() < N {
            return Err(WireError::Truncated(self.what));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take()?))
    }

    fn endpoint(&mut self) -> Result<EndpointAddress, WireError> {
        let host = HostId(self.u32()?);
        EndpointAddress::new(host, self.u16()?).map_err(|_| WireError::Invalid(self.what))
    }

    fn candidates(&mut self) -> Result<CandidateSet, WireError> {
        let local = self.endpoint()?;
        let reflexive = match self.u8()? {
            0 => None,
            1 => Some(MappedAddress {
                reflexive: self.endpoint()?,
                observed_at: SimTime(self.u64()?),
                server: self.endpoint()?,
            }),
            _ => return Err(WireError::Invalid(self.what)),
        };
        Ok(CandidateSet { local, reflexive })
    }
}
