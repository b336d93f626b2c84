//! NAT device: outbound translation, inbound filtering, port allocation,
//! expiry, hairpinning and static port mappings.

mod config;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::Serialize;

use crate::netsim::{Datagram, EndpointAddress, HostId, SimTime};

pub use config::{
    ConfigError, FilteringBehavior, MappingBehavior, NatClassName, NatConfig, PortAllocation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum NatError {
    #[error("mapping table full")]
    TableFull,
    #[error("no free external port")]
    PortExhausted,
    #[error("hairpinning disabled")]
    HairpinDisabled,
    #[error("port mapping unsupported")]
    Unsupported,
}

/// Remotes an entry admits inbound traffic from, at the granularity of the
/// NAT's filtering behavior.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PermittedRemotes {
    Hosts(BTreeSet<HostId>),
    Endpoints(BTreeSet<EndpointAddress>),
}

impl PermittedRemotes {
    fn for_filtering(f: FilteringBehavior) -> Self {
        match f {
            FilteringBehavior::AddressAndPortDependent => PermittedRemotes::Endpoints(BTreeSet::new()),
            _ => PermittedRemotes::Hosts(BTreeSet::new()),
        }
    }

    fn record(&mut self, remote: EndpointAddress) {
        match self {
            PermittedRemotes::Hosts(h) => {
                h.insert(remote.host());
            }
            PermittedRemotes::Endpoints(e) => {
                e.insert(remote);
            }
        }
    }

    fn admits(&self, src: EndpointAddress) -> bool {
        match self {
            PermittedRemotes::Hosts(h) => h.contains(&src.host()),
            PermittedRemotes::Endpoints(e) => e.contains(&src),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PermittedRemotes::Hosts(h) => h.len(),
            PermittedRemotes::Endpoints(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn render(&self) -> Vec<String> {
        match self {
            PermittedRemotes::Hosts(h) => h.iter().map(ToString::to_string).collect(),
            PermittedRemotes::Endpoints(e) => e.iter().map(ToString::to_string).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingEntry {
    pub internal: EndpointAddress,
    /// `None` under endpoint-independent mapping and for static entries.
    pub remote_key: Option<EndpointAddress>,
    pub external_port: u16,
    pub created: SimTime,
    pub last_outbound: SimTime,
    pub permitted_remotes: PermittedRemotes,
    /// Set for entries installed by a port-mapping request; they admit any
    /// remote and live until this instant regardless of the TTL.
    pub static_until: Option<SimTime>,
}

impl MappingEntry {
    fn deadline(&self, ttl: SimTime) -> SimTime {
        self.static_until.unwrap_or_else(|| self.last_outbound.saturating_add(ttl))
    }
}

/// What happened to an outbound datagram.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outbound {
    /// Rewritten and leaving through the external side.
    Forward(Datagram),
    /// Addressed to this NAT's own external side and looped back inside;
    /// `None` when the inbound filter rejected it.
    Hairpin(Option<Datagram>),
}

type MappingKey = (EndpointAddress, Option<EndpointAddress>);

/// Free-port pool supporting O(1) uniform sampling and removal.
#[derive(Clone, Debug)]
struct PortPool {
    lo: u16,
    free: Vec<u16>,
    slot: Vec<u32>,
    cursor: u16,
}

const TAKEN: u32 = u32::MAX;

impl PortPool {
    fn new(lo: u16, hi: u16, cursor: u16) -> Self {
        let free: Vec<u16> = (lo..=hi).collect();
        let slot = (0..free.len() as u32).collect();
        PortPool { lo, free, slot, cursor }
    }

    fn is_free(&self, port: u16) -> bool {
        port >= self.lo
            && self.slot.get((port - self.lo) as usize).is_some_and(|&s| s != TAKEN)
    }

    fn take(&mut self, port: u16) {
        let idx = self.slot[(port - self.lo) as usize] as usize;
        let last = *self.free.last().unwrap();
        self.free.swap_remove(idx);
        if last != port {
            self.slot[(last - self.lo) as usize] = idx as u32;
        }
        self.slot[(port - self.lo) as usize] = TAKEN;
    }

    fn release(&mut self, port: u16) {
        if port < self.lo || (port - self.lo) as usize >= self.slot.len() || self.is_free(port) {
            return;
        }
        self.slot[(port - self.lo) as usize] = self.free.len() as u32;
        self.free.push(port);
    }

    fn allocate<R: Rng + ?Sized>(&mut self, alloc: PortAllocation, rng: &mut R) -> Option<u16> {
        if self.free.is_empty() {
            return None;
        }
        let port = match alloc {
            PortAllocation::Random => self.free[rng.gen_range(0..self.free.len())],
            PortAllocation::Sequential { .. } => {
                let span = self.slot.len();
                let start = (self.cursor - self.lo) as usize;
                let off = (0..span).map(|i| (start + i) % span).find(|&o| self.slot[o] != TAKEN)?;
                let port = self.lo + off as u16;
                self.cursor = if off + 1 == span { self.lo } else { port + 1 };
                port
            }
        };
        self.take(port);
        Some(port)
    }
}

/// A NAT device and its live translation table.
#[derive(Clone, Debug)]
pub struct NatBox {
    config: NatConfig,
    entries: BTreeMap<u16, MappingEntry>,
    by_key: HashMap<MappingKey, u16>,
    deadlines: BTreeSet<(SimTime, u16)>,
    pool: PortPool,
}

impl NatBox {
    pub fn new(config: NatConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let (lo, hi) = config.port_range;
        let cursor = match config.port_alloc {
            PortAllocation::Sequential { start } => start,
            PortAllocation::Random => lo,
        };
        Ok(NatBox {
            pool: PortPool::new(lo, hi, cursor),
            config,
            entries: BTreeMap::new(),
            by_key: HashMap::new(),
            deadlines: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &NatConfig {
        &self.config
    }

    pub fn external_host(&self) -> HostId {
        self.config.external_host
    }

    pub fn class(&self) -> NatClassName {
        self.config.class()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MappingEntry> {
        self.entries.values()
    }

    pub fn entry_for_port(&self, port: u16) -> Option<&MappingEntry> {
        self.entries.get(&port)
    }

    /// Live entry an outbound datagram from `internal` to `remote` would use.
    pub fn lookup(&self, internal: EndpointAddress, remote: EndpointAddress) -> Option<&MappingEntry> {
        self.by_key
            .get(&self.key(internal, remote))
            .or_else(|| self.by_key.get(&(internal, None)))
            .and_then(|p| self.entries.get(p))
    }

    fn key(&self, internal: EndpointAddress, remote: EndpointAddress) -> MappingKey {
        match self.config.mapping {
            MappingBehavior::EndpointIndependent => (internal, None),
            MappingBehavior::AddressAndPortDependent => (internal, Some(remote)),
        }
    }

    /// Removes entries idle for longer than the TTL and static entries whose
    /// lifetime has passed.
    pub fn expire(&mut self, now: SimTime) {
        while let Some(&(deadline, port)) = self.deadlines.first() {
            if deadline >= now {
                break;
            }
            self.deadlines.pop_first();
            self.remove(port);
        }
    }

    fn remove(&mut self, port: u16) {
        if let Some(e) = self.entries.remove(&port) {
            self.by_key.remove(&(e.internal, e.remote_key));
            self.pool.release(port);
        }
    }

    fn set_deadline(&mut self, port: u16, old: Option<SimTime>, new: SimTime) {
        if let Some(old) = old {
            self.deadlines.remove(&(old, port));
        }
        if !new.is_infinite() {
            self.deadlines.insert((new, port));
        }
    }

    fn insert(&mut self, entry: MappingEntry) {
        let port = entry.external_port;
        let deadline = entry.deadline(self.config.mapping_ttl);
        self.by_key.insert((entry.internal, entry.remote_key), port);
        self.entries.insert(port, entry);
        self.set_deadline(port, None, deadline);
    }

    fn ensure_capacity(&self) -> Result<(), NatError> {
        if self.entries.len() >= self.config.max_mappings {
            Err(NatError::TableFull)
        } else {
            Ok(())
        }
    }

    /// Translates a datagram leaving the stub domain.
    pub fn translate_outbound<R: Rng + ?Sized>(
        &mut self,
        d: &Datagram,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Outbound, NatError> {
        self.expire(now);
        let key = self.key(d.src, d.dst);
        let port = match self.by_key.get(&key).or_else(|| self.by_key.get(&(d.src, None))) {
            Some(&p) => p,
            None => {
                self.ensure_capacity()?;
                let port = self
                    .pool
                    .allocate(self.config.port_alloc, rng)
                    .ok_or(NatError::PortExhausted)?;
                self.insert(MappingEntry {
                    internal: d.src,
                    remote_key: key.1,
                    external_port: port,
                    created: now,
                    last_outbound: now,
                    permitted_remotes: PermittedRemotes::for_filtering(self.config.filtering),
                    static_until: None,
                });
                port
            }
        };
        let ttl = self.config.mapping_ttl;
        let entry = self.entries.get_mut(&port).expect("indexed entry");
        entry.permitted_remotes.record(d.dst);
        let old = entry.deadline(ttl);
        entry.last_outbound = now;
        let new = entry.deadline(ttl);
        if old != new {
            self.set_deadline(port, Some(old), new);
        }

        let external = EndpointAddress::new(self.config.external_host, port).expect("allocated ports are non-zero");
        let translated = d.readdressed(external, d.dst);
        if d.dst.host() == self.config.external_host {
            if !self.config.hairpinning {
                return Err(NatError::HairpinDisabled);
            }
            return Ok(Outbound::Hairpin(self.translate_inbound(&translated, now)));
        }
        Ok(Outbound::Forward(translated))
    }

    /// Filters and translates a datagram arriving on the external side.
    pub fn translate_inbound(&mut self, d: &Datagram, now: SimTime) -> Option<Datagram> {
        self.expire(now);
        if d.dst.host() != self.config.external_host {
            return None;
        }
        let entry = self.entries.get(&d.dst.port())?;
        let admitted = entry.static_until.is_some()
            || self.config.filtering == FilteringBehavior::EndpointIndependent
            || entry.permitted_remotes.admits(d.src);
        admitted.then(|| d.readdressed(d.src, entry.internal))
    }

    /// Installs a static mapping in answer to a port-mapping request.
    /// Returns the granted external port.
    pub fn install_static<R: Rng + ?Sized>(
        &mut self,
        internal: EndpointAddress,
        requested_port: u16,
        lifetime: SimTime,
        now: SimTime,
        rng: &mut R,
    ) -> Result<u16, NatError> {
        if !self.config.port_mapping || self.config.carrier_grade {
            return Err(NatError::Unsupported);
        }
        self.expire(now);
        let until = now.saturating_add(lifetime);
        if let Some(&port) = self.by_key.get(&(internal, None)) {
            let entry = self.entries.get_mut(&port).expect("indexed entry");
            if entry.static_until.is_some() {
                let old = entry.deadline(self.config.mapping_ttl);
                entry.static_until = Some(until);
                self.set_deadline(port, Some(old), until);
                return Ok(port);
            }
        }
        self.ensure_capacity()?;
        let port = if requested_port != 0 && self.pool.is_free(requested_port) {
            self.pool.take(requested_port);
            requested_port
        } else {
            self.pool.allocate(self.config.port_alloc, rng).ok_or(NatError::PortExhausted)?
        };
        // A static entry supersedes any dynamic EIM entry for the same internal endpoint.
        if let Some(&old) = self.by_key.get(&(internal, None)) {
            let dl = self.entries[&old].deadline(self.config.mapping_ttl);
            self.deadlines.remove(&(dl, old));
            self.remove(old);
        }
        self.insert(MappingEntry {
            internal,
            remote_key: None,
            external_port: port,
            created: now,
            last_outbound: now,
            permitted_remotes: PermittedRemotes::for_filtering(self.config.filtering),
            static_until: Some(until),
        });
        Ok(port)
    }

    pub fn snapshot(&self) -> NatSnapshot {
        NatSnapshot(
            self.entries
                .values()
                .map(|e| SnapshotEntry {
                    internal: e.internal,
                    remote_key: e.remote_key,
                    external_port: e.external_port,
                    last_outbound_us: e.last_outbound.as_micros(),
                    permitted_remotes: e.permitted_remotes.render(),
                })
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SnapshotEntry {
    pub internal: EndpointAddress,
    pub remote_key: Option<EndpointAddress>,
    pub external_port: u16,
    pub last_outbound_us: u64,
    pub permitted_remotes: Vec<String>,
}

/// Serializable view of a NAT table, ordered by external port.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct NatSnapshot(pub Vec<SnapshotEntry>);

impl NatSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}
