//! Two-stage multi-threading: tiled loop → `Forall` → fork–join skeleton.

use crate::error::PassError;
use crate::ir::{
    Affine, Anchor, DistPolicy, GroupId, LoopVar, Node, Op, TileModule, TokenId, ViewRef,
};

use super::{MtPolicy, MtProfitability};

/// Marks the tile loop parallel.
///
/// Without double-buffering anchors the top-level tiled loop becomes a
/// `Forall`. With them, each `db.compute` op is split into `threads`
/// sub-tiles inside a `Forall`, leaving the ping/pong loop sequential.
/// Below the profitability floor the module is returned unchanged.
pub fn form_virtual_threads(
    m: &TileModule,
    policy: &MtPolicy,
    prof: &MtProfitability,
) -> Result<TileModule, PassError> {
    if policy.threads == 0 {
        return Err(PassError::ZeroThreads);
    }
    let total: u64 = m
        .outputs
        .iter()
        .filter_map(|o| m.buffer(o))
        .map(|b| b.elements())
        .sum();
    let anchored = m.count_ops(|n| n.anchor == Some(Anchor::Compute)) > 0;
    let mut out = m.clone();
    if anchored {
        let s = policy.threads;
        if s < prof.min_tiles || total < prof.min_total_elements {
            return Ok(out);
        }
        let iv = m.fresh_var();
        out.body = split_computes(&m.body, iv, s, policy);
    } else {
        let pos = m
            .body
            .iter()
            .position(|n| matches!(n.op, Op::ForTiles { toggle: false, .. }))
            .ok_or_else(|| PassError::NoLoop("no untoggled top-level tiled loop".into()))?;
        let Op::ForTiles {
            iv,
            tile_count,
            body,
            ..
        } = &m.body[pos].op
        else {
            unreachable!()
        };
        check_disjoint_writes(body, *iv, *tile_count)?;
        if *tile_count < prof.min_tiles || total < prof.min_total_elements {
            return Ok(out);
        }
        out.body[pos] = Node {
            op: Op::Forall {
                iv: *iv,
                tile_count: *tile_count,
                policy: policy.resolve(*tile_count),
                body: body.clone(),
            },
            anchor: m.body[pos].anchor,
        };
    }
    out.metadata.passes.push("form-virtual-threads".into());
    Ok(out)
}

fn split_computes(nodes: &[Node], iv: LoopVar, s: u32, policy: &MtPolicy) -> Vec<Node> {
    nodes
        .iter()
        .map(|n| match (&n.op, n.anchor) {
            (Op::Compute { output, .. }, Some(Anchor::Compute)) => {
                let split: Option<fn(&ViewRef, LoopVar, u32) -> ViewRef> =
                    if output.row_count % s == 0 {
                        Some(|v, iv, s| {
                            let k = v.row_count / s;
                            ViewRef {
                                row_offset: v.row_offset.clone().plus_term(iv, i64::from(k)),
                                row_count: k,
                                ..v.clone()
                            }
                        })
                    } else if output.col_count % s == 0 {
                        Some(|v, iv, s| {
                            let k = v.col_count / s;
                            ViewRef {
                                col_offset: v.col_offset.clone().plus_term(iv, i64::from(k)),
                                col_count: k,
                                ..v.clone()
                            }
                        })
                    } else {
                        None
                    };
                let Some(split) = split else {
                    return n.clone();
                };
                let Op::Compute {
                    inputs,
                    output,
                    expr,
                    vector_factor,
                } = &n.op
                else {
                    unreachable!()
                };
                let sub = Node::anchored(
                    Op::Compute {
                        inputs: inputs.iter().map(|v| split(v, iv, s)).collect(),
                        output: split(output, iv, s),
                        expr: expr.clone(),
                        vector_factor: *vector_factor,
                    },
                    Anchor::Compute,
                );
                Node::new(Op::Forall {
                    iv,
                    tile_count: s,
                    policy: policy.resolve(s),
                    body: vec![sub],
                })
            }
            _ => {
                let mut n = n.clone();
                for region in n.regions_mut() {
                    *region = split_computes(region, iv, s, policy);
                }
                n
            }
        })
        .collect()
}

/// Writes to buffers that outlive one iteration must touch disjoint
/// rectangles for distinct iterations.
fn check_disjoint_writes(body: &[Node], iv: LoopVar, tile_count: u32) -> Result<(), PassError> {
    let mut local = Vec::new();
    let mut writes: Vec<&ViewRef> = Vec::new();
    crate::ir::visit(body, &mut |n| match &n.op {
        Op::AllocTcm { decl } => local.push(decl.id.clone()),
        Op::Copy { dst, .. } | Op::DmaStart { dst, .. } => writes.push(dst),
        Op::Compute { output, .. } => writes.push(output),
        _ => {}
    });
    writes.retain(|v| !local.contains(&v.base));
    let mut rects = Vec::new();
    for i in 0..tile_count {
        for v in &writes {
            let eval = |a: &Affine| {
                a.eval(|x| (x == iv).then_some(i64::from(i)))
                    .ok_or_else(|| {
                        PassError::CrossThreadDependence(format!(
                            "{v} depends on an outer variable"
                        ))
                    })
            };
            let (r, c) = (eval(&v.row_offset)?, eval(&v.col_offset)?);
            rects.push((i, *v, r, c));
        }
    }
    for (a, &(i, va, ra, ca)) in rects.iter().enumerate() {
        for &(j, vb, rb, cb) in &rects[a + 1..] {
            let overlap = i != j
                && va.base == vb.base
                && ra < rb + i64::from(vb.row_count)
                && rb < ra + i64::from(va.row_count)
                && ca < cb + i64::from(vb.col_count)
                && cb < ca + i64::from(va.col_count);
            if overlap {
                return Err(PassError::CrossThreadDependence(format!(
                    "iterations {i} and {j} both write {}",
                    va.base
                )));
            }
        }
    }
    Ok(())
}

/// Skeleton shape for `tile_count` tiles over `threads` workers: (number of
/// async regions, tiles per region).
fn shape(tile_count: u32, threads: u32, policy: DistPolicy) -> (u32, u32) {
    if tile_count == 0 {
        return (0, 0);
    }
    match policy {
        DistPolicy::Block => {
            let c = tile_count.div_ceil(threads);
            (tile_count.div_ceil(c), c)
        }
        DistPolicy::BlockCyclic => {
            let w = threads.min(tile_count);
            (w, tile_count.div_ceil(w))
        }
    }
}

/// Tile index for region `t`, slot `j`.
fn tile_of(policy: DistPolicy, w: u32, c: u32, t: u32, j: u32) -> u32 {
    match policy {
        DistPolicy::Block => c * t + j,
        DistPolicy::BlockCyclic => t + w * j,
    }
}

/// Per-thread tile sets produced by [`form_async_threads`]. Threads with no
/// work are omitted.
pub fn assignments(tile_count: u32, threads: u32, policy: DistPolicy) -> Vec<Vec<u32>> {
    let threads = threads.max(1);
    let (w, c) = shape(tile_count, threads, policy);
    (0..w)
        .map(|t| {
            (0..c)
                .map(|j| tile_of(policy, w, c, t, j))
                .filter(|&tile| tile < tile_count)
                .collect()
        })
        .collect()
}

/// Lowers every `Forall` to a fork–join skeleton: a loop over workers that
/// launches one async region per worker and adds it to a group, followed by
/// an await on the group.
pub fn form_async_threads(m: &TileModule, threads: u32) -> Result<TileModule, PassError> {
    if threads == 0 {
        return Err(PassError::ZeroThreads);
    }
    if !m.has_op(|op| matches!(op, Op::Forall { .. })) {
        return Err(PassError::NoForall);
    }
    let mut out = m.clone();
    loop {
        let ids = (out.fresh_var(), out.fresh_token(), out.fresh_group());
        if !lower_first(&mut out.body, threads, ids) {
            break;
        }
    }
    out.metadata.passes.push("form-async-threads".into());
    Ok(out)
}

fn lower_first(nodes: &mut Vec<Node>, threads: u32, ids: (LoopVar, TokenId, GroupId)) -> bool {
    for i in 0..nodes.len() {
        if let Op::Forall {
            iv,
            tile_count,
            policy,
            body,
        } = &nodes[i].op
        {
            let skeleton = skeleton(*iv, *tile_count, *policy, body, threads, ids);
            nodes.splice(i..=i, skeleton);
            return true;
        }
        for region in nodes[i].regions_mut() {
            if lower_first(region, threads, ids) {
                return true;
            }
        }
    }
    false
}

fn skeleton(
    iv: LoopVar,
    tile_count: u32,
    policy: DistPolicy,
    body: &[Node],
    threads: u32,
    (t, token, group): (LoopVar, TokenId, GroupId),
) -> [Node; 2] {
    let j = LoopVar(t.0 + 1);
    let (w, c) = shape(tile_count, threads, policy);
    let tile = match policy {
        DistPolicy::Block => Affine::var(t, i64::from(c), 0).plus_term(j, 1),
        DistPolicy::BlockCyclic => Affine::var(t, 1, 0).plus_term(j, i64::from(w)),
    };
    let mut inner = crate::ir::substitute_all(body, iv, &tile);
    if w * c != tile_count {
        inner = vec![Node::new(Op::IfInRange {
            index: tile,
            lo: 0,
            hi: i64::from(tile_count),
            body: inner,
        })];
    }
    let region = Node::new(Op::AsyncExecute {
        token,
        body: vec![Node::new(Op::ForTiles {
            iv: j,
            tile_count: c,
            toggle: false,
            body: inner,
        })],
    });
    [
        Node::new(Op::ForTiles {
            iv: t,
            tile_count: w,
            toggle: false,
            body: vec![region, Node::new(Op::AddToGroup { token, group })],
        }),
        Node::new(Op::AwaitAll { group }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_vec_add_2d, KernelSpec};

    fn vec_add(rows: u32) -> TileModule {
        build_vec_add_2d(&KernelSpec {
            rows,
            cols: 1024,
            ..KernelSpec::vec_add_2d()
        })
        .unwrap()
    }

    fn forall_policy(m: &TileModule) -> Option<DistPolicy> {
        let mut p = None;
        crate::ir::visit(&m.body, &mut |n| {
            if let Op::Forall { policy, .. } = &n.op {
                p = Some(*policy);
            }
        });
        p
    }

    #[test]
    fn policy_follows_divisibility() {
        let prof = MtProfitability::default();
        let m8 = form_virtual_threads(&vec_add(8), &MtPolicy::auto(4), &prof).unwrap();
        assert_eq!(forall_policy(&m8), Some(DistPolicy::Block));
        let m10 = form_virtual_threads(&vec_add(10), &MtPolicy::auto(4), &prof).unwrap();
        assert_eq!(forall_policy(&m10), Some(DistPolicy::BlockCyclic));
    }

    #[test]
    fn single_tile_is_not_profitable() {
        let m = vec_add(1);
        let out =
            form_virtual_threads(&m, &MtPolicy::auto(4), &MtProfitability::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn overlapping_writes_are_rejected() {
        let mut m = vec_add(4);
        let Op::ForTiles { body, .. } = &mut m.body[0].op else {
            unreachable!()
        };
        for n in body.iter_mut() {
            if let Op::Copy { dst, .. } = &mut n.op {
                if dst.base.as_str() == "C" {
                    dst.row_offset = Affine::constant(0);
                }
            }
        }
        assert!(matches!(
            form_virtual_threads(&m, &MtPolicy::auto(4), &MtProfitability::default()),
            Err(PassError::CrossThreadDependence(_))
        ));
    }

    #[test]
    fn documented_partitions() {
        assert_eq!(
            assignments(8, 4, DistPolicy::Block),
            [vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]
        );
        assert_eq!(
            assignments(10, 4, DistPolicy::BlockCyclic),
            [vec![0, 4, 8], vec![1, 5, 9], vec![2, 6], vec![3, 7]]
        );
        assert_eq!(assignments(5, 1, DistPolicy::Block), [vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn skeleton_has_one_region_per_worker() {
        let m = form_virtual_threads(&vec_add(8), &MtPolicy::auto(4), &MtProfitability::default())
            .unwrap();
        let out = form_async_threads(&m, 4).unwrap();
        assert_eq!(
            out.count_ops(|n| matches!(n.op, Op::AsyncExecute { .. })),
            1
        );
        assert_eq!(out.count_ops(|n| matches!(n.op, Op::AwaitAll { .. })), 1);
        assert!(!out.has_op(|op| matches!(op, Op::Forall { .. } | Op::IfInRange { .. })));
        let Op::ForTiles { tile_count, .. } = &out.body[0].op else {
            panic!("expected worker loop")
        };
        assert_eq!(*tile_count, 4);
    }

    #[test]
    fn async_threads_requires_forall() {
        assert_eq!(form_async_threads(&vec_add(8), 4), Err(PassError::NoForall));
    }
}
