//! Std companion to `streammem-core`: the MCES stream format, seeded
//! synthetic workloads, snapshot export, the experiment harness and the
//! `streammem` command line.

pub mod bench;
pub mod cli;
mod error;
pub mod experiment;
pub mod format;
pub mod metrics;
pub mod plant;
pub mod snapshot;
pub mod synth;

pub use crate::error::{Error, Result};
pub use streammem_core as core;
