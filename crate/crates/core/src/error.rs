use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    DimensionMismatch { expected: usize, found: usize },
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    /// A vector (or the token at `token`) has norm below the degeneracy floor.
    ZeroNorm { token: Option<usize> },
    NonFinite { index: usize },
    EmptyShape,
    EmptyInput,
    MissingQuestion,
    InvalidTarget,
    InvalidConfig(&'static str),
    BufferNotEmpty,
    SeedTooLarge { seed: usize, room: usize },
    PositionOutOfRange { position: u64, limit: u64 },
    MemoryTooLongForTable { len: usize, limit: u64 },
    InvalidTable(&'static str),
    InvalidLambda,
    NotFlushed,
    StaleTimestamp { requested: u64, head: Option<u64> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::ShapeMismatch { expected, found } => write!(
                f,
                "shape mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::ZeroNorm { token: Some(j) } => write!(f, "token {j} has (near-)zero norm"),
            Error::ZeroNorm { token: None } => write!(f, "vector has (near-)zero norm"),
            Error::NonFinite { index } => write!(f, "non-finite value at element {index}"),
            Error::EmptyShape => f.write_str("token matrix needs at least one row and column"),
            Error::EmptyInput => f.write_str("no frames to consolidate"),
            Error::MissingQuestion => f.write_str("a question vector is required"),
            Error::InvalidTarget => f.write_str("merge target must be at least 1"),
            Error::InvalidConfig(why) => write!(f, "invalid configuration: {why}"),
            Error::BufferNotEmpty => f.write_str("short-term buffer holds frames since the last fill"),
            Error::SeedTooLarge { seed, room } => {
                write!(f, "cannot seed {seed} frames, room for at most {room}")
            }
            Error::PositionOutOfRange { position, limit } => {
                write!(f, "position {position} outside table range 0..{limit}")
            }
            Error::MemoryTooLongForTable { len, limit } => {
                write!(f, "{len} entries exceed the {limit} encodable positions")
            }
            Error::InvalidTable(why) => write!(f, "invalid positional table: {why}"),
            Error::InvalidLambda => f.write_str("EMA decay must lie in [0, 1)"),
            Error::NotFlushed => f.write_str("pipeline has unflushed short-term frames"),
            Error::StaleTimestamp { requested, head: Some(h) } => {
                write!(f, "breakpoint {requested} is not the live head {h}")
            }
            Error::StaleTimestamp { requested, head: None } => {
                write!(f, "breakpoint {requested} requested with no live head")
            }
        }
    }
}

impl core::error::Error for Error {}
