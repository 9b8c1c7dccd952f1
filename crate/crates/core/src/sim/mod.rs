//! Execution of tile modules: a functional interpreter used as the
//! correctness oracle and a timed discrete-event model of the NPU.

mod bound;
mod config;
mod interp;
mod store;
mod timed;

use std::collections::BTreeMap;

pub use bound::{compute_floor, dma_floor, latency_lower_bound, KernelStats};
pub use config::{cycles_to_us, round3, MachineConfig};
pub use interp::interpret_functional;
pub use timed::{simulate_timed, TimingReport};

/// Named F32 arrays, row-major, keyed by DDR buffer name.
pub type Arrays = BTreeMap<String, Vec<f32>>;
