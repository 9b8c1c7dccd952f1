//! IR rewrites: vectorization, virtual and async threading, and two-stage
//! double buffering, plus the per-rung pipeline driver.

mod double_buffer;
mod pipeline;
mod threads;
mod vectorize;

use serde::{Deserialize, Serialize};

use crate::ir::DistPolicy;
use crate::sim::MachineConfig;

pub use double_buffer::{db_stage1, db_stage2};
pub use pipeline::{run_passes, run_pipeline};
pub use threads::{assignments, form_async_threads, form_virtual_threads};
pub use vectorize::vectorize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadderRung {
    Scalar,
    Vec,
    VecMt,
    VecMtDb,
}

impl LadderRung {
    pub const ALL: [LadderRung; 4] = [
        LadderRung::Scalar,
        LadderRung::Vec,
        LadderRung::VecMt,
        LadderRung::VecMtDb,
    ];

    /// CLI spelling.
    pub fn name(self) -> &'static str {
        match self {
            LadderRung::Scalar => "scalar",
            LadderRung::Vec => "vec",
            LadderRung::VecMt => "vec-mt",
            LadderRung::VecMtDb => "vec-mt-db",
        }
    }

    /// Figure label.
    pub fn label(self) -> &'static str {
        match self {
            LadderRung::Scalar => "Scalar",
            LadderRung::Vec => "Vec",
            LadderRung::VecMt => "Vec+MT",
            LadderRung::VecMtDb => "Vec+MT+DB",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        LadderRung::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Passes the rung applies, in order.
    pub fn passes(self) -> &'static [PassKind] {
        use PassKind::*;
        match self {
            LadderRung::Scalar => &[],
            LadderRung::Vec => &[Vectorize],
            LadderRung::VecMt => &[Vectorize, FormVirtualThreads, FormAsyncThreads],
            LadderRung::VecMtDb => &[
                DbStage1,
                DbStage2,
                Vectorize,
                FormVirtualThreads,
                FormAsyncThreads,
            ],
        }
    }
}

impl std::fmt::Display for LadderRung {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassKind {
    Vectorize,
    FormVirtualThreads,
    FormAsyncThreads,
    DbStage1,
    DbStage2,
}

impl PassKind {
    pub const ALL: [PassKind; 5] = [
        PassKind::Vectorize,
        PassKind::FormVirtualThreads,
        PassKind::FormAsyncThreads,
        PassKind::DbStage1,
        PassKind::DbStage2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PassKind::Vectorize => "vectorize",
            PassKind::FormVirtualThreads => "form-virtual-threads",
            PassKind::FormAsyncThreads => "form-async-threads",
            PassKind::DbStage1 => "db-stage1",
            PassKind::DbStage2 => "db-stage2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        PassKind::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Work distribution for threaded loops. `kind: None` picks Block when the
/// tile count divides evenly over `threads` and BlockCyclic otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MtPolicy {
    pub kind: Option<DistPolicy>,
    pub threads: u32,
}

impl MtPolicy {
    pub fn auto(threads: u32) -> Self {
        MtPolicy {
            kind: None,
            threads,
        }
    }

    pub fn resolve(&self, tile_count: u32) -> DistPolicy {
        self.kind
            .unwrap_or(if tile_count.is_multiple_of(self.threads.max(1)) {
                DistPolicy::Block
            } else {
                DistPolicy::BlockCyclic
            })
    }
}

/// Size floor below which threading is not applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MtProfitability {
    pub min_tiles: u32,
    pub min_total_elements: u64,
}

impl Default for MtProfitability {
    fn default() -> Self {
        MtProfitability {
            min_tiles: 2,
            min_total_elements: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub rung: LadderRung,
    pub lanes: u32,
    pub mt: MtPolicy,
    pub prof: MtProfitability,
    /// Double-buffer the storeback as well as the prefetch.
    pub db_storeback_async: bool,
}

impl PipelineSpec {
    /// Lanes and threads taken from the machine.
    pub fn for_machine(rung: LadderRung, cfg: &MachineConfig) -> Self {
        PipelineSpec {
            rung,
            lanes: cfg.lanes,
            mt: MtPolicy::auto(cfg.threads),
            prof: MtProfitability::default(),
            db_storeback_async: true,
        }
    }
}
