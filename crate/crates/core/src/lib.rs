//! Robust multistage sieve density estimation on bounded grid classes.
//!
//! The pipeline is split into a data-free half (class geometry, local
//! entropy estimates, the pruned tree) and a data-dependent half (grouped
//! likelihood votes and the distance tournament). See [`tournament::estimate`].

pub mod adversary;
pub mod classes;
pub mod density;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod packing;
pub mod rng;
pub mod tournament;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
