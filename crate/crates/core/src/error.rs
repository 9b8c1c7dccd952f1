use thiserror::Error;

use crate::ir::Diagnostic;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("`{0}` must be strictly positive")]
    NonPositive(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PassError {
    #[error("vectorize: lanes must be >= 1")]
    ZeroLanes,
    #[error("vectorize: compute op already has vector_factor {0}")]
    AlreadyVectorized(u32),
    #[error("threads must be >= 1")]
    ZeroThreads,
    #[error("no tiled loop to parallelize: {0}")]
    NoLoop(String),
    #[error("cross-thread dependence: {0}")]
    CrossThreadDependence(String),
    #[error("form-async-threads: module contains no forall")]
    NoForall,
    #[error("db-stage1: not in single-buffered normal form: {0}")]
    NotNormalForm(String),
    #[error("db-stage2: no db anchors present")]
    MissingAnchors,
    #[error("db-stage2: {0}")]
    Stage2(String),
    #[error("pipeline output failed verification: {}", .0.first().map(ToString::to_string).unwrap_or_default())]
    Verify(Vec<Diagnostic>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("missing input array `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has {got} elements, expected {expected}")]
    InputShape {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown buffer {0}")]
    UnknownBuffer(String),
    #[error("view of {0} out of bounds")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("read of {buffer} while DMA tag {tag} is still in flight")]
    UnawaitedRead { buffer: String, tag: u32 },
    #[error("write to {buffer} while DMA tag {tag} is still in flight")]
    WriteHazard { buffer: String, tag: u32 },
    #[error("DMA tag {0} started while already in flight")]
    TagBusy(u32),
    #[error("wait on DMA tag {0} with no transfer in flight")]
    IdleWait(u32),
    #[error("DMA tag {0} still in flight at {1}")]
    PendingTransfer(u32, &'static str),
    #[error("toggle op outside a toggle-carrying loop")]
    Toggle,
    #[error("unbound induction variable")]
    UnboundVar,
    #[error("unknown async token or group")]
    UnknownToken,
    #[error("deadlock: no runnable context and no pending events")]
    Deadlock,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel spec kind does not match builder")]
    WrongKind,
    #[error("invalid kernel spec: {0}")]
    Invalid(String),
    #[error("tile of {bytes} bytes per buffer set does not fit TCM capacity {capacity}")]
    TileTooLarge { bytes: u64, capacity: u64 },
    #[error("shape mismatch for `{0}`")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("rung {rung}: {source}")]
    Pass { rung: String, source: PassError },
    #[error("rung {rung}: verification failed: {first}")]
    Verify { rung: String, first: String },
    #[error("rung {rung}: {source}")]
    Sim { rung: String, source: SimError },
    #[error("rung {rung}: outputs differ from the scalar rung ({detail})")]
    Mismatch { rung: String, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}
