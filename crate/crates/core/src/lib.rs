//! Contact process in a stationary random environment on `Z^d`.
//!
//! The crate is `no_std` (with `alloc`): it holds the graphical
//! construction, the simulation engine and the estimators, all as pure
//! functions of their seeds. IO, parallel campaigns and the CLI live in the
//! companion `cpshape` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod coupling;
pub mod dynamics;
pub mod engine;
pub mod environment;
pub mod error;
pub mod lattice;
pub mod oracle;
pub mod regeneration;
pub mod replica;
pub mod rng;
pub mod stats;
pub mod subadditive;
pub mod substrate;

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
