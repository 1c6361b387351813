//! Analytical and simulation models of 802.11e EDCA for multimedia
//! capacity estimation and admission control.

pub mod admission;
pub mod capacity;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod saturation;
pub mod scenario;
pub mod simulator;
pub mod timing;

pub use error::{Error, Result};
