//! Two-population mean-field game of optimal stopping for electricity
//! markets.
//!
//! Conventional producers choose when to exit, renewable projects choose
//! when to enter, and both interact through a merit-order clearing price.
//! The equilibrium is computed by fictitious play whose best responses are
//! linear programs over discretized Fokker-Planck constraint sets.

pub mod best_response;
pub mod cli;
pub mod error;
pub mod grids;
pub mod linalg;
pub mod market;
pub mod mfg;
pub mod payoffs;
pub mod processes;
pub mod scenario_io;

pub use error::{Error, Result};
