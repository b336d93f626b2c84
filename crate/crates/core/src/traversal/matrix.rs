use std::fmt;

use serde::Serialize;

use crate::natbox::NatConfig;
use crate::netsim::{HostId, LinkProfile, SimTime, INTERNET};
use crate::scenario::{ScenarioSpec, World};

use super::ice::{ice_connect, Policy};
use super::PunchStrategy;

/// A carrier's NAT policy plus the links on either side of it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarrierConfig {
    pub name: String,
    pub nat: NatConfig,
    #[serde(skip)]
    pub uplink: LinkProfile,
    #[serde(skip)]
    pub access: LinkProfile,
}

impl CarrierConfig {
    pub fn new(name: impl Into<String>, nat: NatConfig) -> Self {
        CarrierConfig {
            name: name.into(),
            nat,
            uplink: LinkProfile::lossless(SimTime::from_millis(20)),
            access: LinkProfile::lossless(SimTime::from_millis(15)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatrixCell {
    pub success: bool,
    pub strategy: Option<PunchStrategy>,
    pub probes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InteropMatrix {
    pub carriers: Vec<String>,
    /// `cells[i][j]`: a phone on carrier i reaching one on carrier j.
    pub cells: Vec<Vec<MatrixCell>>,
    pub successes: usize,
    pub total: usize,
    /// Carriers with at least one successful cell.
    pub interoperable: usize,
}

impl InteropMatrix {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.successes as f64 / self.total as f64
        }
    }
}

impl fmt::Display for InteropMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.carriers.iter().map(String::len).max().unwrap_or(0).max(4);
        write!(f, "{:w$}", "")?;
        for c in &self.carriers {
            write!(f, "  {c:>w$}")?;
        }
        writeln!(f)?;
        for (name, row) in self.carriers.iter().zip(&self.cells) {
            write!(f, "{name:w$}")?;
            for cell in row {
                write!(f, "  {:>w$}", if cell.success { "✓" } else { "×" })?;
            }
            writeln!(f)?;
        }
        writeln!(f, "{}/{} cells succeeded ({:.1}%)", self.successes, self.total, 100.0 * self.ratio())?;
        write!(
            f,
            "{} of {} carriers interoperable ({:.0}%)",
            self.interoperable,
            self.carriers.len(),
            100.0 * self.interoperable as f64 / self.carriers.len().max(1) as f64
        )
    }
}

/// Public addresses handed to the two NAT instances of a cell.
const CELL_EXTERNAL: [[u8; 4]; 2] = [[203, 0, 113, 201], [203, 0, 113, 202]];

fn cell_world(a: &CarrierConfig, b: &CarrierConfig, seed: u64) -> World {
    let mut spec = ScenarioSpec::with_servers(seed);
    for (i, c) in [a, b].into_iter().enumerate() {
        let mut nat = c.nat.clone();
        nat.external_host = HostId::from(CELL_EXTERNAL[i]);
        nat.gateway_host = HostId::UNASSIGNED;
        let nat_name = format!("carrier-{i}");
        let phone = format!("phone-{i}");
        spec.add_nat(&nat_name, nat, INTERNET, SimTime::ZERO);
        spec.add_peer(&phone, HostId::from([100, 64, i as u8 + 1, 2]), &nat_name, SimTime::ZERO);
        let n = spec.links.len();
        spec.links[n - 2].profile = c.uplink;
        spec.links[n - 1].profile = c.access;
    }
    let mut w = World::build(&spec).expect("cell topology is valid");
    w.net.set_record_trace(false);
    w
}

/// Runs the ladder for every ordered pair of carriers, each cell in a fresh
/// world where both phones sit behind their own instance of the carrier NAT.
pub fn run_interop_matrix(carriers: &[CarrierConfig], policy: &Policy, seed: u64) -> InteropMatrix {
    let mut cells = Vec::with_capacity(carriers.len());
    for (i, a) in carriers.iter().enumerate() {
        let mut row = Vec::with_capacity(carriers.len());
        for (j, b) in carriers.iter().enumerate() {
            let cell_seed = seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut w = cell_world(a, b, cell_seed);
            let cell = match w.introduce(0, 1) {
                Ok((pa, pb, start)) => {
                    let relay = w.relay;
                    let out = ice_connect(&mut w.net, &pa, &pb, policy, start, relay);
                    MatrixCell { success: out.session.is_established(), strategy: out.strategy, probes: out.stats.total_probes() }
                }
                Err(_) => MatrixCell { success: false, strategy: None, probes: 0 },
            };
            row.push(cell);
        }
        cells.push(row);
    }
    let successes = cells.iter().flatten().filter(|c| c.success).count();
    let interoperable = cells.iter().filter(|row| row.iter().any(|c| c.success)).count();
    InteropMatrix {
        carriers: carriers.iter().map(|c| c.name.clone()).collect(),
        total: carriers.len() * carriers.len(),
        cells,
        successes,
        interoperable,
    }
}
