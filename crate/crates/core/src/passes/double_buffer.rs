//! Two-stage double buffering. Stage 1 restructures a single-buffered tile
//! loop into a ping/pong pipeline with anchored prefetch, compute and
//! storeback ops; stage 2 turns the anchored copies into tagged DMAs and
//! places the waits.

use std::collections::BTreeMap;

use crate::error::PassError;
use crate::ir::{
    match_normal_form, Affine, Anchor, BufferDecl, BufferId, DmaTag, LoopVar, Node, Op, TagRole,
    TileModule,
};

fn renamed(decl: &BufferDecl, suffix: &str) -> BufferDecl {
    BufferDecl {
        id: BufferId::new(format!("{}_{suffix}", decl.id.as_str())),
        ..decl.clone()
    }
}

pub fn db_stage1(m: &TileModule) -> Result<TileModule, PassError> {
    let nf = match_normal_form(m).map_err(PassError::NotNormalForm)?;
    if nf.tile_count == 0 {
        return Err(PassError::NotNormalForm("tile loop has zero trips".into()));
    }
    let iv = nf.iv;
    let tiles = i64::from(nf.tile_count);
    let sets: Vec<[BufferDecl; 2]> = nf
        .inputs
        .iter()
        .map(|t| &t.tcm)
        .chain([&nf.output.tcm])
        .map(|d| [renamed(d, "ping"), renamed(d, "pong")])
        .collect();
    let (in_sets, out_set) = sets.split_at(nf.inputs.len());
    let out_set = &out_set[0];

    let prefetch = |tile: Affine, into: usize| -> Vec<Node> {
        nf.inputs
            .iter()
            .zip(in_sets)
            .map(|(t, set)| {
                Node::anchored(
                    Op::Copy {
                        src: t.subview.substitute(iv, &tile),
                        dst: set[into].full_view(),
                    },
                    Anchor::Prefetch,
                )
            })
            .collect()
    };
    let arm = |cur: usize| -> Vec<Node> {
        vec![
            Node::new(Op::IfInRange {
                index: Affine::var(iv, 1, 1),
                lo: 0,
                hi: tiles,
                body: prefetch(Affine::var(iv, 1, 1), 1 - cur),
            }),
            Node::anchored(
                Op::Compute {
                    inputs: in_sets.iter().map(|s| s[cur].full_view()).collect(),
                    output: out_set[cur].full_view(),
                    expr: nf.expr.clone(),
                    vector_factor: nf.vector_factor,
                },
                Anchor::Compute,
            ),
            Node::anchored(
                Op::Copy {
                    src: out_set[cur].full_view(),
                    dst: nf.output.subview.clone(),
                },
                Anchor::Storeback,
            ),
        ]
    };

    let mut body: Vec<Node> = sets
        .iter()
        .flatten()
        .map(|d| Node::new(Op::AllocTcm { decl: d.clone() }))
        .collect();
    body.extend(prefetch(Affine::constant(0), 0));
    body.push(Node::new(Op::ForTiles {
        iv,
        tile_count: nf.tile_count,
        toggle: true,
        body: vec![
            Node::new(Op::IfToggle {
                ping: arm(0),
                pong: arm(1),
            }),
            Node::new(Op::FlipToggle),
        ],
    }));
    body.extend(
        sets.iter()
            .flatten()
            .map(|d| Node::new(Op::DeallocTcm { id: d.id.clone() })),
    );

    let mut out = m.clone();
    out.body = body;
    out.metadata.passes.push("db-stage1".into());
    Ok(out)
}

#[derive(Default)]
struct Tags {
    next: u32,
    prefetch: BTreeMap<BufferId, DmaTag>,
    storeback: BTreeMap<BufferId, DmaTag>,
    order: Vec<DmaTag>,
}

impl Tags {
    fn assign(&mut self, nodes: &[Node], depth: u32, storeback_async: bool) {
        for n in nodes {
            match (&n.op, n.anchor) {
                (Op::Copy { dst, .. }, Some(Anchor::Prefetch))
                    if !self.prefetch.contains_key(&dst.base) =>
                {
                    let role = if depth == 0 {
                        TagRole::Ping
                    } else {
                        TagRole::Pong
                    };
                    let tag = DmaTag::new(self.next, role);
                    self.next += 1;
                    self.prefetch.insert(dst.base.clone(), tag);
                    self.order.push(tag);
                }
                (Op::Copy { src, .. }, Some(Anchor::Storeback))
                    if storeback_async && !self.storeback.contains_key(&src.base) =>
                {
                    let tag = DmaTag::new(self.next, TagRole::Storeback);
                    self.next += 1;
                    self.storeback.insert(src.base.clone(), tag);
                    self.order.push(tag);
                }
                _ => {}
            }
            let inner = depth + u32::from(matches!(n.op, Op::ForTiles { .. }));
            for r in n.regions() {
                self.assign(r, inner, storeback_async);
            }
        }
    }

    fn rewrite(&self, nodes: &[Node], iv: Option<LoopVar>) -> Result<Vec<Node>, PassError> {
        let mut out = Vec::with_capacity(nodes.len());
        let mut waited = Vec::new();
        for n in nodes {
            match (&n.op, n.anchor) {
                (Op::Copy { src, dst }, Some(Anchor::Prefetch)) => out.push(Node::anchored(
                    Op::DmaStart {
                        src: src.clone(),
                        dst: dst.clone(),
                        tag: self.prefetch[&dst.base],
                    },
                    Anchor::Prefetch,
                )),
                (Op::Copy { src, dst }, Some(Anchor::Storeback))
                    if self.storeback.contains_key(&src.base) =>
                {
                    out.push(Node::anchored(
                        Op::DmaStart {
                            src: src.clone(),
                            dst: dst.clone(),
                            tag: self.storeback[&src.base],
                        },
                        Anchor::Storeback,
                    ))
                }
                (Op::Compute { inputs, output, .. }, Some(Anchor::Compute)) => {
                    if let Some(&tag) = self.storeback.get(&output.base) {
                        if !waited.contains(&tag) {
                            let iv = iv.ok_or_else(|| {
                                PassError::Stage2("compute outside the pipelined loop".into())
                            })?;
                            waited.push(tag);
                            out.push(Node::new(Op::IfInRange {
                                index: Affine::var(iv, 1, 0),
                                lo: 2,
                                hi: i64::MAX,
                                body: vec![Node::new(Op::DmaWait { tag })],
                            }));
                        }
                    }
                    for v in inputs {
                        let tag = *self.prefetch.get(&v.base).ok_or_else(|| {
                            PassError::Stage2(format!(
                                "compute input {} is never prefetched",
                                v.base
                            ))
                        })?;
                        if !waited.contains(&tag) {
                            waited.push(tag);
                            out.push(Node::new(Op::DmaWait { tag }));
                        }
                    }
                    out.push(n.clone());
                }
                _ => {
                    let mut n = n.clone();
                    let inner = match n.op {
                        Op::ForTiles { iv, .. } => Some(iv),
                        _ => iv,
                    };
                    for region in n.regions_mut() {
                        *region = self.rewrite(region, inner)?;
                    }
                    out.push(n);
                }
            }
        }
        Ok(out)
    }
}

/// Rewrites a stage-1 module: anchored prefetches become DMA starts with one
/// tag per destination buffer, each compute waits on its inputs' tags
/// immediately before it runs, and (with `storeback_async`) storebacks become
/// DMA starts awaited before their source buffer is next written and in the
/// epilogue.
pub fn db_stage2(m: &TileModule, storeback_async: bool) -> Result<TileModule, PassError> {
    let has = |a: Anchor| m.count_ops(|n| n.anchor == Some(a)) > 0;
    if !has(Anchor::Prefetch) || !has(Anchor::Compute) {
        return Err(PassError::MissingAnchors);
    }
    let mut tags = Tags {
        next: m.fresh_tag_id(),
        ..Tags::default()
    };
    tags.assign(&m.body, 0, storeback_async);
    let mut body = tags.rewrite(&m.body, None)?;

    if !tags.storeback.is_empty() {
        let (pos, tile_count, ping, pong) = storeback_arms(&body)?;
        let arm_tag = |arm: &[Node]| -> Option<DmaTag> {
            arm.iter().find_map(|n| match (&n.op, n.anchor) {
                (Op::DmaStart { tag, .. }, Some(Anchor::Storeback)) => Some(*tag),
                _ => None,
            })
        };
        let (ping, pong) = (arm_tag(&ping), arm_tag(&pong));
        let last = i64::from(tile_count) - 1;
        let waits: Vec<Node> = [last - 1, last]
            .into_iter()
            .filter(|&k| k >= 0)
            .filter_map(|k| if k % 2 == 0 { ping } else { pong })
            .map(|tag| Node::new(Op::DmaWait { tag }))
            .collect();
        body.splice(pos + 1..pos + 1, waits);
    }

    let mut out = m.clone();
    let allocs = tags
        .order
        .iter()
        .map(|&tag| Node::new(Op::AllocTag { tag }));
    let frees = tags.order.iter().map(|&tag| Node::new(Op::FreeTag { tag }));
    out.body = allocs.chain(body).chain(frees).collect();
    out.metadata.passes.push("db-stage2".into());
    Ok(out)
}

/// Locates the top-level toggle loop and clones its two arms.
fn storeback_arms(body: &[Node]) -> Result<(usize, u32, Vec<Node>, Vec<Node>), PassError> {
    for (pos, n) in body.iter().enumerate() {
        if let Op::ForTiles {
            toggle: true,
            tile_count,
            body: inner,
            ..
        } = &n.op
        {
            for m in inner {
                if let Op::IfToggle { ping, pong } = &m.op {
                    return Ok((pos, *tile_count, ping.clone(), pong.clone()));
                }
            }
        }
    }
    Err(PassError::Stage2("no ping/pong loop for storeback".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::visit;
    use crate::kernels::{build_vec_add_2d, KernelSpec};
    use crate::sim::MachineConfig;

    fn vec_add(rows: u32) -> TileModule {
        build_vec_add_2d(&KernelSpec {
            rows,
            cols: 256,
            ..KernelSpec::vec_add_2d()
        })
        .unwrap()
    }

    #[test]
    fn stage1_doubles_footprint_and_is_not_reapplicable() {
        let m = vec_add(8);
        let s1 = db_stage1(&m).unwrap();
        assert_eq!(s1.tcm_footprint(), 2 * m.tcm_footprint());
        assert!(matches!(db_stage1(&s1), Err(PassError::NotNormalForm(_))));
        assert!(crate::ir::verify_module(&s1, &MachineConfig::default()).is_empty());
    }

    #[test]
    fn stage2_waits_immediately_before_compute() {
        let s2 = db_stage2(&db_stage1(&vec_add(8)).unwrap(), true).unwrap();
        let mut checked = 0;
        visit(&s2.body, &mut |n| {
            if let Op::IfToggle { ping, pong } = &n.op {
                for arm in [ping, pong] {
                    let c = arm
                        .iter()
                        .position(|x| x.anchor == Some(Anchor::Compute))
                        .unwrap();
                    assert!(matches!(arm[c - 1].op, Op::DmaWait { .. }));
                    assert!(matches!(arm[c - 2].op, Op::DmaWait { .. }));
                    let (Op::DmaWait { tag: a }, Op::DmaWait { tag: b }) =
                        (&arm[c - 2].op, &arm[c - 1].op)
                    else {
                        unreachable!()
                    };
                    assert_ne!(a, b);
                    checked += 1;
                }
            }
        });
        assert_eq!(checked, 2);
        assert!(crate::ir::verify_module(&s2, &MachineConfig::default()).is_empty());
    }

    #[test]
    fn ping_and_pong_tags_differ() {
        let s2 = db_stage2(&db_stage1(&vec_add(4)).unwrap(), false).unwrap();
        let mut by_dst: BTreeMap<String, DmaTag> = BTreeMap::new();
        visit(&s2.body, &mut |n| {
            if let Op::DmaStart { dst, tag, .. } = &n.op {
                by_dst.insert(dst.base.as_str().to_string(), *tag);
            }
        });
        assert_eq!(by_dst.len(), 4);
        assert_ne!(by_dst["a_tile_ping"], by_dst["a_tile_pong"]);
        assert_eq!(by_dst["a_tile_ping"].role, TagRole::Ping);
        assert_eq!(by_dst["a_tile_pong"].role, TagRole::Pong);
    }

    #[test]
    fn stage2_requires_anchors() {
        assert_eq!(db_stage2(&vec_add(4), true), Err(PassError::MissingAnchors));
    }
}
