#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use tilelab::ir::{dynamic_trace, Affine, DistPolicy, Node, Op, TileModule, TokenId};
use tilelab::kernels::{KernelKind, KernelSpec};
use tilelab::passes::{LadderRung, MtPolicy, MtProfitability, PassKind, PipelineSpec};
use tilelab::sim::MachineConfig;

pub const DB_ONLY: [PassKind; 3] = [PassKind::DbStage1, PassKind::DbStage2, PassKind::Vectorize];

pub fn machine(lanes: u32, threads: u32) -> MachineConfig {
    MachineConfig {
        lanes,
        threads,
        tcm_capacity: 1 << 30,
        ..MachineConfig::default()
    }
}

pub fn pipeline(
    rung: LadderRung,
    lanes: u32,
    threads: u32,
    kind: Option<DistPolicy>,
) -> PipelineSpec {
    PipelineSpec {
        rung,
        lanes,
        mt: MtPolicy { kind, threads },
        prof: MtProfitability {
            min_tiles: 1,
            min_total_elements: 0,
        },
        db_storeback_async: true,
    }
}

pub fn vec_add(rows: u32, cols: u32, tile_rows: u32, seed: u64) -> KernelSpec {
    KernelSpec {
        rows,
        cols,
        tile_rows,
        seed,
        ..KernelSpec::vec_add_2d()
    }
}

pub fn gelu(tile: u32, tiles: u32, seed: u64) -> KernelSpec {
    KernelSpec {
        tile_elems: tile,
        seed,
        ..KernelSpec::gelu(tile * tiles)
    }
}

pub fn is_vec_add(spec: &KernelSpec) -> bool {
    spec.kind == KernelKind::VecAdd2d
}

/// Replaces each worker loop of a fork–join skeleton by explicit launches in
/// the order given by `order(w)`, each with its own token.
pub fn unroll_workers(m: &TileModule, order: &dyn Fn(u32) -> Vec<u32>) -> TileModule {
    let mut out = m.clone();
    let mut next = out.fresh_token().0;
    unroll(&mut out.body, order, &mut next);
    out
}

fn unroll(nodes: &mut Vec<Node>, order: &dyn Fn(u32) -> Vec<u32>, next: &mut u32) {
    let mut i = 0;
    while i < nodes.len() {
        let replacement = match &nodes[i].op {
            Op::ForTiles {
                iv,
                tile_count,
                body,
                ..
            } if matches!(body.first().map(|n| &n.op), Some(Op::AsyncExecute { .. })) => {
                let (Op::AsyncExecute { body: region, .. }, Op::AddToGroup { group, .. }) =
                    (&body[0].op, &body[1].op)
                else {
                    unreachable!("worker loop shape")
                };
                let mut seq = Vec::new();
                for w in order(*tile_count) {
                    let token = TokenId(*next);
                    *next += 1;
                    let fixed =
                        tilelab::ir::substitute_all(region, *iv, &Affine::constant(i64::from(w)));
                    seq.push(Node::new(Op::AsyncExecute { token, body: fixed }));
                    seq.push(Node::new(Op::AddToGroup {
                        token,
                        group: *group,
                    }));
                }
                Some(seq)
            }
            _ => None,
        };
        match replacement {
            Some(seq) => {
                let n = seq.len();
                nodes.splice(i..=i, seq);
                i += n;
            }
            None => {
                for r in nodes[i].regions_mut() {
                    unroll(r, order, next);
                }
                i += 1;
            }
        }
    }
}

/// Walks the dynamic schedule and checks DMA tag discipline: tags are
/// allocated before use and freed when idle, every start is matched by
/// exactly one wait, and no compute touches a buffer with a transfer in
/// flight (inputs against incoming data, outputs against both directions).
/// Returns the number of DMA starts seen.
pub fn check_tag_discipline(m: &TileModule) -> Result<usize, String> {
    let trace = dynamic_trace(&m.body)?;
    let mut live = BTreeSet::new();
    let mut in_flight: BTreeMap<u32, (String, String)> = BTreeMap::new();
    let mut starts = 0;
    for (k, step) in trace.iter().enumerate() {
        match &step.node.op {
            Op::AllocTag { tag } => {
                if !live.insert(tag.id) {
                    return Err(format!("step {k}: tag {} allocated twice", tag.id));
                }
            }
            Op::FreeTag { tag } => {
                if in_flight.contains_key(&tag.id) || !live.remove(&tag.id) {
                    return Err(format!(
                        "step {k}: tag {} freed while busy or unallocated",
                        tag.id
                    ));
                }
            }
            Op::DmaStart { src, dst, tag } => {
                if !live.contains(&tag.id) {
                    return Err(format!("step {k}: tag {} used before allocation", tag.id));
                }
                let pair = (src.base.as_str().to_string(), dst.base.as_str().to_string());
                if in_flight.insert(tag.id, pair).is_some() {
                    return Err(format!(
                        "step {k}: tag {} restarted before its wait",
                        tag.id
                    ));
                }
                starts += 1;
            }
            Op::DmaWait { tag } => {
                if in_flight.remove(&tag.id).is_none() {
                    return Err(format!("step {k}: wait on idle tag {}", tag.id));
                }
            }
            Op::Compute { inputs, output, .. } => {
                for v in inputs {
                    if let Some((t, _)) = in_flight.iter().find(|(_, (_, d))| d == v.base.as_str())
                    {
                        return Err(format!(
                            "step {k}: compute reads {} before tag {t} is awaited",
                            v.base
                        ));
                    }
                }
                let out = output.base.as_str();
                if let Some((t, _)) = in_flight.iter().find(|(_, (s, d))| s == out || d == out) {
                    return Err(format!(
                        "step {k}: compute writes {out} while tag {t} is in flight"
                    ));
                }
            }
            _ => {}
        }
    }
    if let Some(t) = in_flight.keys().next() {
        return Err(format!("tag {t} still in flight at end"));
    }
    if let Some(t) = live.iter().next() {
        return Err(format!("tag {t} never freed"));
    }
    Ok(starts)
}
