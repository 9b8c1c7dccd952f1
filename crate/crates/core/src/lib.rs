//! Tile-level IR, compiler passes for vectorization, multi-threading and
//! double buffering, and a deterministic timed NPU simulator to run them on.

pub mod bench;
pub mod cli;
pub mod error;
pub mod ir;
pub mod kernels;
pub mod passes;
pub mod sim;

pub use error::{BenchError, ConfigError, KernelError, PassError, SimError};
