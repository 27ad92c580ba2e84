//! Simulation of decoupled forward-backward SDEs driven by a Brownian motion
//! and a pure-jump Lévy process, with the Lévy process replaced by a randomly
//! truncated shot noise series.

pub mod backward;
pub mod error;
pub mod fbsde;
pub mod forward;
pub mod harness;
pub mod levy;
pub mod quad;
pub mod rng;
pub mod shotnoise;
pub mod special;
pub mod stats;

pub use error::{Error, Result};

/// Crate version, recorded in study manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
