//! Lattice Monte Carlo for the XY model and convex gradient fields.

pub mod diagnostics;
pub mod error;
pub mod gradient;
pub mod hswalk;
pub mod lattice;
pub mod oracle;
pub mod potentials;
pub mod rng;
pub mod sampler;
pub mod statistics;

pub use error::{Error, Result};
pub use lattice::{build_rect_domain, DirectedEdge, DomainDescriptor, Edge, LatticeDomain, Plaquette};
pub use potentials::{BetaSchedule, BetaValue, Family, Potential, DEFAULT_DELTA};
pub use sampler::{ChainSpec, Ensemble, Model, SamplerState, Scheme, SpinConfig, Update};
