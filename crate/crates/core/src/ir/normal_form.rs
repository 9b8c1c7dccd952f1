use super::{BufferDecl, BufferId, Expr, LoopVar, MemSpace, Node, Op, TileModule, ViewRef};

/// One input of a single-buffered tile: DDR subview, TCM allocation, copy-in.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTriple {
    pub subview: ViewRef,
    pub tcm: BufferDecl,
    pub alloc_pos: usize,
    pub copy_pos: usize,
}

/// The output side: TCM result buffer written back to a DDR subview.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPair {
    pub subview: ViewRef,
    pub tcm: BufferDecl,
    pub alloc_pos: usize,
    pub copy_pos: usize,
}

/// Result of matching the single-buffered tiled-loop normal form. Positions
/// index into the loop body.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormDescriptor {
    /// Index of the loop in the module body.
    pub loop_pos: usize,
    pub iv: LoopVar,
    pub tile_count: u32,
    pub inputs: Vec<InputTriple>,
    pub compute_pos: usize,
    pub expr: Expr,
    pub vector_factor: u32,
    pub output: OutputPair,
    pub dealloc_pos: Vec<usize>,
}

/// Matches a module whose body is exactly one untoggled `ForTiles` with the
/// body `(alloc, copy-in)+ alloc compute copy-out dealloc+`. Any deviation
/// gives `Err` naming the first mismatch; there are no partial matches.
pub fn match_normal_form(m: &TileModule) -> Result<NormalFormDescriptor, String> {
    let [Node {
        op:
            Op::ForTiles {
                iv,
                tile_count,
                toggle,
                body,
            },
        ..
    }] = m.body.as_slice()
    else {
        return Err("module body is not a single tiled loop".into());
    };
    if *toggle {
        return Err("loop carries a ping/pong toggle (already pipelined)".into());
    }
    let is_tcm_full = |v: &ViewRef, d: &BufferDecl| v == &d.full_view();
    let is_ddr = |id: &BufferId| m.buffer(id).is_some_and(|b| b.space == MemSpace::Ddr);

    let mut pos = 0;
    let mut inputs = Vec::new();
    // (alloc, copy-in) pairs until the output allocation.
    loop {
        let Some(Node {
            op: Op::AllocTcm { decl },
            ..
        }) = body.get(pos)
        else {
            return Err(format!("op {pos}: expected alloc_tcm"));
        };
        match body.get(pos + 1).map(|n| &n.op) {
            Some(Op::Copy { src, dst }) if dst.base == decl.id => {
                if !is_ddr(&src.base) {
                    return Err(format!(
                        "op {}: copy-in source is not a DDR subview",
                        pos + 1
                    ));
                }
                if !is_tcm_full(dst, decl)
                    || src.row_count != decl.rows
                    || src.col_count != decl.cols
                {
                    return Err(format!(
                        "op {}: copy-in does not fill the TCM tile",
                        pos + 1
                    ));
                }
                inputs.push(InputTriple {
                    subview: src.clone(),
                    tcm: decl.clone(),
                    alloc_pos: pos,
                    copy_pos: pos + 1,
                });
                pos += 2;
            }
            Some(Op::Compute { .. }) => break,
            _ => {
                return Err(format!(
                    "op {}: expected copy into {} or compute",
                    pos + 1,
                    decl.id
                ))
            }
        }
    }
    if inputs.is_empty() {
        return Err("no copied-in inputs".into());
    }
    let Some(Node {
        op: Op::AllocTcm { decl: out_decl },
        ..
    }) = body.get(pos)
    else {
        return Err(format!("op {pos}: expected output alloc_tcm"));
    };
    let out_alloc = pos;
    pos += 1;
    let Some(Node {
        op:
            Op::Compute {
                inputs: operands,
                output,
                expr,
                vector_factor,
            },
        ..
    }) = body.get(pos)
    else {
        return Err(format!("op {pos}: expected compute"));
    };
    let compute_pos = pos;
    let operands_ok = operands.len() == inputs.len()
        && operands
            .iter()
            .zip(&inputs)
            .all(|(v, t)| is_tcm_full(v, &t.tcm));
    if !operands_ok {
        return Err(format!(
            "op {pos}: compute operands are not the copied-in tiles"
        ));
    }
    if !is_tcm_full(output, out_decl) {
        return Err(format!("op {pos}: compute does not write the output tile"));
    }
    pos += 1;
    let output = match body.get(pos).map(|n| &n.op) {
        Some(Op::Copy { src, dst }) if is_tcm_full(src, out_decl) && is_ddr(&dst.base) => {
            OutputPair {
                subview: dst.clone(),
                tcm: out_decl.clone(),
                alloc_pos: out_alloc,
                copy_pos: pos,
            }
        }
        _ => return Err(format!("op {pos}: expected write-back copy to DDR")),
    };
    pos += 1;
    let mut expected: Vec<&BufferId> = inputs.iter().map(|t| &t.tcm.id).collect();
    expected.push(&out_decl.id);
    let mut dealloc_pos = Vec::new();
    while let Some(n) = body.get(pos) {
        match &n.op {
            Op::DeallocTcm { id } if expected.contains(&id) => {
                expected.retain(|e| *e != id);
                dealloc_pos.push(pos);
            }
            _ => return Err(format!("op {pos}: expected dealloc_tcm")),
        }
        pos += 1;
    }
    if !expected.is_empty() {
        return Err(format!("missing dealloc for {}", expected[0]));
    }
    Ok(NormalFormDescriptor {
        loop_pos: 0,
        iv: *iv,
        tile_count: *tile_count,
        inputs,
        compute_pos,
        expr: expr.clone(),
        vector_factor: *vector_factor,
        output,
        dealloc_pos,
    })
}
