use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("invalid shape {shape:?} for {len} data elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("position {pos} out of range (max {max})")]
    PositionOutOfRange { pos: usize, max: usize },

    #[error("sequence length {n} exceeds maximum {n_max}")]
    SequenceTooLong { n: usize, n_max: usize },

    #[error("non-ternary value {value} at coordinate {index}")]
    NonTernary { index: usize, value: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("backward called on a tape without a scalar loss (shape {0:?})")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called before any forward computation")]
    EmptyTape,

    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),

    #[error("bad magic number {found} (expected {expected})")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("idx dimension mismatch: header says {header}, payload holds {payload}")]
    IdxDimMismatch { header: usize, payload: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("run '{0}' already exists; runs are immutable")]
    RunExists(String),

    #[error("training diverged: non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty metrics input")]
    EmptyMetrics,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
