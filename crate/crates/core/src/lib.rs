//! Agent-based simulator of a single-asset market populated by leveraged
//! value investors, with three regulatory overlays — a short-selling ban,
//! a value-at-risk limit, and a transaction tax — plus the experiment and
//! regression harness used to compare regimes.
//!
//! The crate is organized bottom-up:
//!
//! - [`calibration`]: model constants, regime flags, sensitivity switches
//! - [`model`]: one agent's demand under caps and the no-trade threshold
//! - [`stochastic`]: seeded shock streams and the perception process
//! - [`clearing`]: the simultaneous price/demand solve per timestep
//! - [`engine`]: the timestep loop producing full trajectories
//! - [`metrics`]: per-run outcomes and stylized-facts diagnostics
//! - [`experiments`]: the regime grid and tax sweep with common random
//!   numbers
//! - [`analysis`]: OLS / feasible GLS / median regression on regime dummies

pub mod analysis;
pub mod calibration;
pub mod clearing;
pub mod engine;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod stochastic;

pub use calibration::{Calibration, MispricingSign, RegulatoryRegime, ReturnConvention, Switches};
pub use engine::{run, RunConfig, RunResult};
pub use metrics::MetricsRecord;
