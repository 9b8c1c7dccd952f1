use crate::error::SimError;
use crate::ir::walk::{Cursor, Step, WalkError};
use crate::ir::{Op, TileModule};

use super::store::Store;
use super::Arrays;

impl From<WalkError> for SimError {
    fn from(e: WalkError) -> Self {
        match e {
            WalkError::ToggleOutsideLoop => SimError::Toggle,
            WalkError::UnboundVar(_) => SimError::UnboundVar,
        }
    }
}

/// Executes `m` in program order. Async regions run to completion at their
/// launch point, so fork–join degenerates to sequential tile order. Reading
/// a region whose DMA has not been awaited is a hard error.
pub fn interpret_functional(m: &TileModule, inputs: &Arrays) -> Result<Arrays, SimError> {
    let mut store = Store::new(m, inputs)?;
    run(&mut Cursor::new(&m.body, Vec::new()), 0, &mut store)?;
    store.check_quiescent()?;
    Ok(store.outputs(m))
}

fn run(cur: &mut Cursor<'_>, scope: u32, store: &mut Store) -> Result<(), SimError> {
    while let Some(step) = cur.next_step()? {
        let node = match step {
            Step::Async(_, body) => {
                let inner = store.child_scope(scope);
                run(&mut Cursor::new(body, cur.env().clone()), inner, store)?;
                continue;
            }
            Step::Prim(n) => n,
        };
        let env = cur.env();
        match &node.op {
            Op::AllocTcm { decl } => store.alloc(scope, decl),
            Op::DeallocTcm { id } => store.dealloc(scope, id)?,
            Op::Copy { src, dst } => {
                store.copy(scope, src, dst, env)?;
            }
            Op::DmaStart { src, dst, tag } => {
                store.dma_start(scope, src, dst, tag.id, env, 0)?;
            }
            Op::DmaWait { tag } => store.dma_wait(scope, tag.id)?,
            Op::FreeTag { tag } => store.free_tag(scope, tag.id)?,
            Op::Compute {
                inputs,
                output,
                expr,
                ..
            } => {
                store.compute(scope, inputs, output, expr, env)?;
            }
            Op::AllocTag { .. } | Op::AddToGroup { .. } | Op::AwaitAll { .. } => {}
            _ => unreachable!("cursor yields only leaf ops"),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{
        build_gelu, build_vec_add_2d, generate_inputs, reference_output, KernelSpec,
    };

    #[test]
    fn constant_vec_add() {
        let spec = KernelSpec {
            rows: 4,
            cols: 32,
            ..KernelSpec::vec_add_2d()
        };
        let m = build_vec_add_2d(&spec).unwrap();
        let inputs: Arrays = [("A", 1.0f32), ("B", 2.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), vec![v; 128]))
            .collect();
        let out = interpret_functional(&m, &inputs).unwrap();
        assert!(out["C"].iter().all(|&v| v == 3.0));
    }

    #[test]
    fn gelu_matches_reference_and_zero_is_fixed() {
        let spec = KernelSpec {
            tile_elems: 256,
            ..KernelSpec::gelu(1024)
        };
        let m = build_gelu(&spec, 1 << 20).unwrap();
        let inputs = generate_inputs(&spec);
        let out = interpret_functional(&m, &inputs).unwrap();
        // Same operation order in the same precision: bit-identical.
        assert_eq!(out, reference_output(&spec, &inputs).unwrap());

        let zeros: Arrays = [("X".to_string(), vec![0.0; 1024])].into_iter().collect();
        assert!(interpret_functional(&m, &zeros).unwrap()["Y"]
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn missing_input_is_reported() {
        let m = build_vec_add_2d(&KernelSpec::vec_add_2d()).unwrap();
        assert!(matches!(
            interpret_functional(&m, &Arrays::new()),
            Err(SimError::MissingInput(_))
        ));
    }
}
