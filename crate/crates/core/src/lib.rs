//! Bounded streaming memory for per-frame token embeddings.
//!
//! Frames (N x D token matrices) are pushed into a fixed-capacity
//! [`ShortTermBuffer`]. When it fills, the buffered frames are consolidated
//! by repeatedly merging the most similar adjacent pair until a target count
//! remains; the target depends on how relevant the buffered frames are to an
//! optional question vector. Consolidated frames accumulate in a
//! capacity-bounded [`LongTermMemory`]. The [`Pipeline`] ties the pieces
//! together and assembles global or breakpoint representations.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, synthetic
//! data and the experiment harness live in the `streammem` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod consolidation;
mod error;
pub mod frame;
pub mod memory;
mod merge;
pub mod pipeline;
pub mod tensor;

pub use crate::baselines::{MemoryPolicy, PolicyId};
pub use crate::consolidation::{
    ConsolidationConfig, ConsolidationReport, MergeStep, QuestionPooling, RelevanceBasis,
};
pub use crate::error::{Error, Result};
pub use crate::frame::{Provenance, Span, WeightedFrame};
pub use crate::memory::{
    IngestOutcome, LongTermMemory, MemoryEntry, PositionalTable, ShortTermBuffer,
};
pub use crate::pipeline::{
    AccountingRecord, Counters, Pipeline, PipelineConfig, ReinitMode, StepEvent,
    VideoRepresentation,
};
pub use crate::tensor::TokenMatrix;
