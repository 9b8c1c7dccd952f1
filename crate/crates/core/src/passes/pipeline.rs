use crate::error::PassError;
use crate::ir::{verify_module, Op, TileModule};
use crate::sim::MachineConfig;

use super::{
    db_stage1, db_stage2, form_async_threads, form_virtual_threads, vectorize, PassKind,
    PipelineSpec,
};

/// Applies the rung's passes and verifies the result.
pub fn run_pipeline(m: &TileModule, spec: &PipelineSpec) -> Result<TileModule, PassError> {
    run_passes(m, spec.rung.passes(), spec)
}

/// Applies `passes` in order with parameters from `spec`, then verifies.
/// Async lowering is skipped when virtual threading declined.
pub fn run_passes(
    m: &TileModule,
    passes: &[PassKind],
    spec: &PipelineSpec,
) -> Result<TileModule, PassError> {
    if spec.lanes == 0 {
        return Err(PassError::ZeroLanes);
    }
    if spec.mt.threads == 0 {
        return Err(PassError::ZeroThreads);
    }
    let mut cur = m.clone();
    for pass in passes {
        cur = match pass {
            PassKind::Vectorize => vectorize(&cur, spec.lanes)?,
            PassKind::FormVirtualThreads => form_virtual_threads(&cur, &spec.mt, &spec.prof)?,
            PassKind::FormAsyncThreads => {
                if !cur.has_op(|op| matches!(op, Op::Forall { .. })) {
                    continue;
                }
                form_async_threads(&cur, spec.mt.threads)?
            }
            PassKind::DbStage1 => db_stage1(&cur)?,
            PassKind::DbStage2 => db_stage2(&cur, spec.db_storeback_async)?,
        };
    }
    // Capacity is a property of the machine, checked by the harness.
    let unbounded = MachineConfig {
        tcm_capacity: u64::MAX,
        ..MachineConfig::default()
    };
    let diags = verify_module(&cur, &unbounded);
    if !diags.is_empty() {
        return Err(PassError::Verify(diags));
    }
    Ok(cur)
}
