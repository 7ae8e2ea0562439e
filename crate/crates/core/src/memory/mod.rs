//! Short-term buffer, long-term memory and extended positional encodings.

mod long;
mod position;
mod short;

pub use long::{LongTermMemory, MemoryEntry};
pub use position::{assign_positions, PositionalTable};
pub use short::{IngestOutcome, ShortTermBuffer};
