use crate::error::PassError;
use crate::ir::{Node, Op, TileModule, ViewRef};

/// Sets every compute op's vector factor to `lanes`. A compute whose element
/// count is not a multiple of `lanes` is split by columns into a vector body
/// and a scalar epilogue over the remaining columns.
pub fn vectorize(m: &TileModule, lanes: u32) -> Result<TileModule, PassError> {
    if lanes == 0 {
        return Err(PassError::ZeroLanes);
    }
    let body = rewrite(&m.body, lanes)?;
    if lanes == 1 {
        return Ok(m.clone());
    }
    let mut out = m.clone();
    out.body = body;
    out.metadata.passes.push("vectorize".into());
    Ok(out)
}

fn rewrite(nodes: &[Node], lanes: u32) -> Result<Vec<Node>, PassError> {
    let mut out = Vec::with_capacity(nodes.len());
    for n in nodes {
        let Op::Compute {
            inputs,
            output,
            expr,
            vector_factor,
        } = &n.op
        else {
            let mut n = n.clone();
            for region in n.regions_mut() {
                *region = rewrite(region, lanes)?;
            }
            out.push(n);
            continue;
        };
        if *vector_factor != 1 {
            return Err(PassError::AlreadyVectorized(*vector_factor));
        }
        let rem = output.col_count % lanes;
        let whole = output.col_count - rem;
        let compute = |inputs: Vec<ViewRef>, output: ViewRef, vf: u32| Node {
            op: Op::Compute {
                inputs,
                output,
                expr: expr.clone(),
                vector_factor: vf,
            },
            anchor: n.anchor,
        };
        if output.elements() % u64::from(lanes) == 0 || whole == 0 {
            let vf = if whole == 0 && output.elements() % u64::from(lanes) != 0 {
                1
            } else {
                lanes
            };
            out.push(compute(inputs.clone(), output.clone(), vf));
            continue;
        }
        let cut = |v: &ViewRef, start: u32, count: u32| ViewRef {
            col_offset: v.col_offset.clone().plus_const(i64::from(start)),
            col_count: count,
            ..v.clone()
        };
        out.push(compute(
            inputs.iter().map(|v| cut(v, 0, whole)).collect(),
            cut(output, 0, whole),
            lanes,
        ));
        out.push(compute(
            inputs.iter().map(|v| cut(v, whole, rem)).collect(),
            cut(output, whole, rem),
            1,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BufferDecl, Expr, LoopVar, MemSpace, Metadata};

    fn single(cols: u32) -> TileModule {
        let x = BufferDecl::new("X", MemSpace::Ddr, 1, cols);
        let y = BufferDecl::new("Y", MemSpace::Ddr, 1, cols);
        TileModule {
            name: "t".into(),
            buffers: vec![x.clone(), y.clone()],
            inputs: vec![x.id.clone()],
            outputs: vec![y.id.clone()],
            body: vec![Node::new(Op::ForTiles {
                iv: LoopVar(0),
                tile_count: 1,
                toggle: false,
                body: vec![Node::new(Op::Compute {
                    inputs: vec![x.full_view()],
                    output: y.full_view(),
                    expr: Expr::input(0),
                    vector_factor: 1,
                })],
            })],
            metadata: Metadata::default(),
        }
    }

    fn computes(m: &TileModule) -> Vec<(u32, u64, i64)> {
        let mut v = Vec::new();
        crate::ir::visit(&m.body, &mut |n| {
            if let Op::Compute {
                output,
                vector_factor,
                ..
            } = &n.op
            {
                v.push((
                    *vector_factor,
                    output.elements(),
                    output.col_offset.constant_part(),
                ));
            }
        });
        v
    }

    #[test]
    fn divisible_gives_one_vector_op() {
        let m = vectorize(&single(16384), 32).unwrap();
        assert_eq!(computes(&m), [(32, 16384, 0)]);
        assert_eq!(m.metadata.passes, ["vectorize"]);
    }

    #[test]
    fn remainder_goes_to_scalar_epilogue() {
        let m = vectorize(&single(100), 32).unwrap();
        assert_eq!(computes(&m), [(32, 96, 0), (1, 4, 96)]);
    }

    #[test]
    fn lanes_one_is_identity_and_zero_rejected() {
        let m = single(100);
        assert_eq!(vectorize(&m, 1).unwrap(), m);
        assert_eq!(vectorize(&m, 0), Err(PassError::ZeroLanes));
    }

    #[test]
    fn rejects_vectorized_input() {
        let m = vectorize(&single(64), 32).unwrap();
        assert_eq!(vectorize(&m, 32), Err(PassError::AlreadyVectorized(32)));
    }

    #[test]
    fn narrower_than_lanes_stays_scalar() {
        let m = vectorize(&single(5), 32).unwrap();
        assert_eq!(computes(&m), [(1, 5, 0)]);
    }
}
