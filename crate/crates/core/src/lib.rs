//! Mean-field throughput analysis and power control for large wireless networks.
//!
//! The crate builds finite weighted-throughput problems from stochastic
//! network descriptions, solves them globally, and checks the predictions
//! against direct simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod capacity;
pub mod channel;
pub mod config;
pub mod error;
pub mod lp;
pub mod mfg;
pub mod reduction;
pub mod rng;
pub mod routing;
pub mod sim;
pub mod wtm;

pub use channel::{GainDistribution, GainKind, NodeSet};
pub use config::NetworkConfig;
pub use error::{Error, Result};
pub use reduction::{InterferenceGroupTable, MeanFieldWtm, PosteriorTables};
pub use wtm::{FeasibilityResult, PowerSolution};
