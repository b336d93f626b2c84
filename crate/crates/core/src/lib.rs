//! Deterministic NAT simulator and NAT traversal engine.
//!
//! * [`netsim`]: discrete-event network with seeded randomness.
//! * [`natbox`]: NAT device state machine.
//! * [`discovery`]: STUN-style reflexive discovery, classification, rendezvous.
//! * [`traversal`]: hole punching, port scanning, birthday collisions,
//!   port mapping, hairpinning, relaying and the strategy ladder.
//! * [`analytics`]: closed-form probability and budget estimates.
//! * [`scenario`]: the declarative scenario format.

pub mod analytics;
pub mod discovery;
pub mod natbox;
pub mod netsim;
pub mod scalar;
pub mod scenario;
pub mod traversal;

pub use scalar::Real;

/// Collision model evaluated in double precision.
pub type Probability = f64;
/// Single-precision variant, for bulk sweeps.
pub type Probability32 = f32;
