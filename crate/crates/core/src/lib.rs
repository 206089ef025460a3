//! Parameter-shared embedding tables.
//!
//! A parameter-shared setup (PSS) replaces an `n x d` embedding table with a
//! small learnable memory `M` and a recovery map that rebuilds any row from
//! `M` on demand. This crate holds the allocation-only core: the universal
//! hash family that drives the recovery maps, Johnson-Lindenstrauss sketches
//! used to check the `(1 +- eps)` guarantee, the trainable store with its
//! sparse and dense backward passes, a small DLRM-style click model and a
//! synthetic click-log generator.
//!
//! Everything touching files, clocks or threads lives in the `pss` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod error;
pub mod grad;
pub mod hashing;
pub mod jlt;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod store;
pub mod synth;
pub mod table;

mod radix;

pub use config::{compression_ratio, memory_footprint, Footprint, PssConfig, Variant};
pub use error::{Error, Result};
pub use grad::{GradientBuffer, GradientMode, IndexMap};
pub use hashing::HashParams;
pub use store::{ChunkPlacement, PssStore};
pub use table::DenseTable;
