use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netsim::{HostId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MappingBehavior {
    EndpointIndependent,
    AddressAndPortDependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilteringBehavior {
    EndpointIndependent,
    AddressDependent,
    AddressAndPortDependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PortAllocation {
    Sequential { start: u16 },
    Random,
}

/// The classic five-way NAT taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NatClassName {
    OpenInternet,
    FullCone,
    RestrictedCone,
    PortRestrictedCone,
    Symmetric,
}

impl NatClassName {
    pub const ALL: [NatClassName; 5] = [
        NatClassName::OpenInternet,
        NatClassName::FullCone,
        NatClassName::RestrictedCone,
        NatClassName::PortRestrictedCone,
        NatClassName::Symmetric,
    ];

    pub fn from_behaviors(mapping: MappingBehavior, filtering: FilteringBehavior) -> Self {
        match (mapping, filtering) {
            (MappingBehavior::AddressAndPortDependent, _) => NatClassName::Symmetric,
            (_, FilteringBehavior::EndpointIndependent) => NatClassName::FullCone,
            (_, FilteringBehavior::AddressDependent) => NatClassName::RestrictedCone,
            (_, FilteringBehavior::AddressAndPortDependent) => NatClassName::PortRestrictedCone,
        }
    }

    /// Mapping and filtering that realize this class, `None` for no NAT.
    pub fn behaviors(self) -> Option<(MappingBehavior, FilteringBehavior)> {
        use FilteringBehavior as F;
        use MappingBehavior as M;
        match self {
            NatClassName::OpenInternet => None,
            NatClassName::FullCone => Some((M::EndpointIndependent, F::EndpointIndependent)),
            NatClassName::RestrictedCone => Some((M::EndpointIndependent, F::AddressDependent)),
            NatClassName::PortRestrictedCone => {
                Some((M::EndpointIndependent, F::AddressAndPortDependent))
            }
            NatClassName::Symmetric => {
                Some((M::AddressAndPortDependent, F::AddressAndPortDependent))
            }
        }
    }

    pub fn is_endpoint_dependent(self) -> bool {
        self == NatClassName::Symmetric
    }
}

impl fmt::Display for NatClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NatClassName::OpenInternet => "open-internet",
            NatClassName::FullCone => "full-cone",
            NatClassName::RestrictedCone => "restricted-cone",
            NatClassName::PortRestrictedCone => "port-restricted-cone",
            NatClassName::Symmetric => "symmetric",
        })
    }
}

impl FromStr for NatClassName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        NatClassName::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| format!("unknown NAT class {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_mappings must be at least 1")]
    ZeroCapacity,
    #[error("port range {0}..={1} is empty or contains port 0")]
    BadPortRange(u16, u16),
    #[error("sequential start port {0} outside the allocation range")]
    BadSequentialStart(u16),
    #[error("external host must be assigned")]
    UnassignedHost,
}

/// Policy of one NAT device.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NatConfig {
    pub external_host: HostId,
    /// Address the NAT answers control requests on from its inside.
    pub gateway_host: HostId,
    pub mapping: MappingBehavior,
    pub filtering: FilteringBehavior,
    pub port_alloc: PortAllocation,
    /// Inclusive external port range the allocator draws from.
    pub port_range: (u16, u16),
    pub mapping_ttl: SimTime,
    pub max_mappings: usize,
    pub hairpinning: bool,
    /// Whether port-mapping requests from the inside are honored.
    pub port_mapping: bool,
    /// Carrier-grade NATs never accept port-mapping requests.
    pub carrier_grade: bool,
}

impl NatConfig {
    pub const DEFAULT_TTL: SimTime = SimTime::from_secs(30);
    pub const DEFAULT_MAX_MAPPINGS: usize = 64_000;

    pub fn new(external_host: HostId, mapping: MappingBehavior, filtering: FilteringBehavior) -> Self {
        NatConfig {
            external_host,
            gateway_host: HostId::UNASSIGNED,
            mapping,
            filtering,
            port_alloc: PortAllocation::Random,
            port_range: (1, u16::MAX),
            mapping_ttl: Self::DEFAULT_TTL,
            max_mappings: Self::DEFAULT_MAX_MAPPINGS,
            hairpinning: false,
            port_mapping: false,
            carrier_grade: false,
        }
    }

    /// Config realizing a NAT class. Panics for `OpenInternet`, which has no NAT.
    pub fn for_class(class: NatClassName, external_host: HostId) -> Self {
        let (m, f) = class.behaviors().expect("OpenInternet has no NAT config");
        Self::new(external_host, m, f)
    }

    pub fn with_port_alloc(mut self, alloc: PortAllocation) -> Self {
        self.port_alloc = alloc;
        self
    }

    pub fn with_port_range(mut self, lo: u16, hi: u16) -> Self {
        self.port_range = (lo, hi);
        self
    }

    pub fn with_ttl(mut self, ttl: SimTime) -> Self {
        self.mapping_ttl = ttl;
        self
    }

    pub fn with_max_mappings(mut self, n: usize) -> Self {
        self.max_mappings = n;
        self
    }

    pub fn with_hairpinning(mut self, on: bool) -> Self {
        self.hairpinning = on;
        self
    }

    pub fn with_port_mapping(mut self, on: bool) -> Self {
        self.port_mapping = on;
        self
    }

    pub fn carrier_grade(mut self, on: bool) -> Self {
        self.carrier_grade = on;
        self
    }

    pub fn class(&self) -> NatClassName {
        NatClassName::from_behaviors(self.mapping, self.filtering)
    }

    pub fn port_space(&self) -> usize {
        (self.port_range.1 as usize).saturating_sub(self.port_range.0 as usize) + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.external_host.is_assigned() {
            return Err(ConfigError::UnassignedHost);
        }
        if self.max_mappings == 0 {
            return Err(ConfigError::ZeroCapacity);
        }
        let (lo, hi) = self.port_range;
        if lo == 0 || lo > hi {
            return Err(ConfigError::BadPortRange(lo, hi));
        }
        if let PortAllocation::Sequential { start } = self.port_alloc {
            if !(lo..=hi).contains(&start) {
                return Err(ConfigError::BadSequentialStart(start));
            }
        }
        Ok(())
    }
}
