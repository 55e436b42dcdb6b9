//! Cycle-approximate simulator of a many-core GPU running direct-convolution
//! layers, with two opportunistic near-data computing schemes:
//!
//! * intra-SM predicted computation ([`intra`]): a per-SM Precompute Table
//!   fed by a sliding-window predictor and drained by assistant warps while
//!   the SM is stalled;
//! * inter-SM computation forwarding ([`inter`]): a per-cluster Assign Table
//!   that moves a stalled computation to the SM already holding both operand
//!   blocks.
//!
//! Every scheme is checked for functional equivalence against the naive
//! reference convolution in [`oracle`].

pub mod cachehier;
pub mod config;
pub mod error;
pub mod experiment;
pub mod inter;
pub mod intra;
pub mod metrics;
pub mod oracle;
pub mod smcore;
pub mod workload;

pub use error::{Error, Result};
