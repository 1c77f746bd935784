//! Monte-Carlo convergence studies and reporting for the Allen-Cahn solver.
//!
//! The library side of the `allencahn` binary: TOML run configurations,
//! lockstep spatial/temporal study drivers over coupled Brownian paths,
//! log-log rate fitting, and CSV/JSON/SVG report emission.

pub mod config;
pub mod error;
pub mod rates;
pub mod report;
pub mod sim;
pub mod study;

pub use error::{Error, Result};
