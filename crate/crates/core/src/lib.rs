//! Data-driven safety certificates for interconnected stochastic agents.
//!
//! The crate synthesizes per-agent sub-barrier certificates from sampled
//! transitions of black-box agents (one linear program per contraction
//! factor), attaches an a-priori confidence via scenario sample-complexity
//! bounds, and composes the per-agent results into a network-level collision
//! risk bound, either through a small-gain condition or through a union bound.
//!
//! Module map:
//!
//! - [`system`]: agent dynamics, topologies, the platoon builder, simulation
//! - [`sampling`]: i.i.d. scenario datasets and their CSV format
//! - [`complexity`]: sample sizes, binomial tails and Lipschitz constants
//! - [`certificate`]: polynomial templates and constraint residuals
//! - [`lp`]: a dense simplex solver for the scenario programs
//! - [`scenario`]: scenario program assembly and the feasibility verdict
//! - [`composition`]: risk bounds and compositional rules
//! - [`validate`]: Monte Carlo and grid cross-checks
//! - [`pipeline`]: config-driven orchestration used by the CLI

pub mod certificate;
pub mod complexity;
pub mod composition;
pub mod config;
pub mod error;
pub mod lp;
pub mod pipeline;
pub mod region;
pub mod rng;
pub mod sampling;
pub mod scenario;
pub mod system;
pub mod validate;

mod par;
pub(crate) mod serde_ext;

pub use error::{Error, Result};
