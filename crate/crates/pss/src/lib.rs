//! File formats, benchmarks, training and the `pss` command line on top of
//! [`pss_core`].

pub mod bench;
pub mod cli;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod report;
pub mod train;

pub use error::{Error, Result};
