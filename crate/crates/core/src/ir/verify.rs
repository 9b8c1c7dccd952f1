use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::walk::{Cursor, Step, WalkError};
use super::{BufferDecl, BufferId, DmaTag, MemSpace, Node, Op, TileModule, ViewRef};
use crate::sim::MachineConfig;

/// Dynamic steps the verifier is willing to unroll before giving up.
const MAX_WALK_STEPS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiagKind {
    Structure,
    Buffer,
    Bounds,
    Shape,
    VectorFactor,
    Toggle,
    Tag,
    TagBalance,
    Capacity,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Diagnostic {
    /// Op position; see `Cursor::path`. Empty for module-level findings.
    pub path: Vec<u32>,
    pub kind: DiagKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path: Vec<String> = self.path.iter().map(ToString::to_string).collect();
        write!(f, "at [{}]: {}", path.join("."), self.message)
    }
}

/// Returns every invariant violation, ordered by op position. Empty means
/// the module is valid for `machine`.
pub fn verify_module(m: &TileModule, machine: &MachineConfig) -> Vec<Diagnostic> {
    let mut diags = BTreeSet::new();
    check_module_level(m, &mut diags);
    let mut st = StaticState {
        ddr: m.buffers.iter().map(|b| (b.id.clone(), b)).collect(),
        capacity: machine.tcm_capacity,
        ..StaticState::default()
    };
    let mut path = Vec::new();
    check_static(&m.body, &mut st, 0, &mut path, &mut diags);
    for (tag, p) in &st.tags {
        diags.insert(diag(
            p.clone(),
            DiagKind::Tag,
            format!("tag {} never freed", tag.id),
        ));
    }
    check_dynamic(m, &mut diags);
    diags.into_iter().collect()
}

fn diag(path: Vec<u32>, kind: DiagKind, message: String) -> Diagnostic {
    Diagnostic {
        path,
        kind,
        message,
    }
}

fn check_module_level(m: &TileModule, diags: &mut BTreeSet<Diagnostic>) {
    let mut seen = BTreeSet::new();
    for b in &m.buffers {
        if !seen.insert(&b.id) {
            diags.insert(diag(
                vec![],
                DiagKind::Buffer,
                format!("duplicate buffer {}", b.id),
            ));
        }
        if b.space != MemSpace::Ddr {
            diags.insert(diag(
                vec![],
                DiagKind::Buffer,
                format!("module buffer {} must live in DDR", b.id),
            ));
        }
        if b.rows == 0 || b.cols == 0 {
            diags.insert(diag(
                vec![],
                DiagKind::Buffer,
                format!("buffer {} has an empty shape", b.id),
            ));
        }
    }
    for id in m.inputs.iter().chain(&m.outputs) {
        if m.buffer(id).is_none() {
            diags.insert(diag(
                vec![],
                DiagKind::Buffer,
                format!("undeclared interface buffer {id}"),
            ));
        }
    }
    let loops = m
        .body
        .iter()
        .filter(|n| matches!(n.op, Op::ForTiles { .. } | Op::Forall { .. }))
        .count();
    if loops != 1 {
        diags.insert(diag(
            vec![],
            DiagKind::Structure,
            format!("expected exactly one top-level tiled loop, found {loops}"),
        ));
    }
}

#[derive(Default)]
struct StaticState<'m> {
    ddr: BTreeMap<BufferId, &'m BufferDecl>,
    tcm: Vec<&'m BufferDecl>,
    live_bytes: u64,
    capacity: u64,
    /// Allocated tags and where they were allocated.
    tags: BTreeMap<DmaTag, Vec<u32>>,
    tag_roles: BTreeMap<u32, DmaTag>,
}

impl StaticState<'_> {
    fn knows(&self, id: &BufferId) -> bool {
        self.ddr.contains_key(id) || self.tcm.iter().any(|d| &d.id == id)
    }
}

fn check_static<'m>(
    ops: &'m [Node],
    st: &mut StaticState<'m>,
    toggle_depth: u32,
    path: &mut Vec<u32>,
    diags: &mut BTreeSet<Diagnostic>,
) {
    for (i, n) in ops.iter().enumerate() {
        path.push(i as u32);
        let here = path.clone();
        let mut view_ok = |v: &ViewRef, st: &StaticState<'m>| {
            if !st.knows(&v.base) {
                diags.insert(diag(
                    here.clone(),
                    DiagKind::Buffer,
                    format!("unknown buffer {}", v.base),
                ));
            }
        };
        match &n.op {
            Op::ForTiles { toggle, body, .. } => {
                check_static(body, st, toggle_depth + u32::from(*toggle), path, diags);
            }
            Op::Forall { body, .. } | Op::IfInRange { body, .. } => {
                check_static(body, st, toggle_depth, path, diags);
            }
            // Async regions do not see the dispatcher's toggle.
            Op::AsyncExecute { body, .. } => check_static(body, st, 0, path, diags),
            Op::IfToggle { ping, pong } => {
                if toggle_depth == 0 {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Toggle,
                        "if_toggle outside a toggle-carrying loop".into(),
                    ));
                }
                path.push(0);
                check_static(ping, st, toggle_depth, path, diags);
                path.pop();
                path.push(1);
                check_static(pong, st, toggle_depth, path, diags);
                path.pop();
            }
            Op::FlipToggle => {
                if toggle_depth == 0 {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Toggle,
                        "flip_toggle outside a toggle-carrying loop".into(),
                    ));
                }
            }
            Op::AllocTcm { decl } => {
                if decl.space != MemSpace::Tcm {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Buffer,
                        format!("alloc_tcm of non-TCM {}", decl.id),
                    ));
                }
                if decl.rows == 0 || decl.cols == 0 {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Buffer,
                        format!("buffer {} has an empty shape", decl.id),
                    ));
                }
                if st.knows(&decl.id) {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Buffer,
                        format!("buffer {} already live", decl.id),
                    ));
                }
                st.tcm.push(decl);
                st.live_bytes += decl.bytes();
                if st.live_bytes > st.capacity {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Capacity,
                        format!(
                            "TCM capacity exceeded: {} bytes live > {} bytes",
                            st.live_bytes, st.capacity
                        ),
                    ));
                }
            }
            Op::DeallocTcm { id } => match st.tcm.iter().rposition(|d| &d.id == id) {
                Some(pos) => {
                    st.live_bytes -= st.tcm.remove(pos).bytes();
                }
                None => {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Buffer,
                        format!("dealloc of unallocated {id}"),
                    ));
                }
            },
            Op::Copy { src, dst } => {
                view_ok(src, st);
                view_ok(dst, st);
                if src.elements() != dst.elements() {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Shape,
                        format!(
                            "copy shape mismatch: {} vs {} elements",
                            src.elements(),
                            dst.elements()
                        ),
                    ));
                }
            }
            Op::DmaStart { src, dst, tag } => {
                view_ok(src, st);
                view_ok(dst, st);
                if src.elements() != dst.elements() {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Shape,
                        format!(
                            "dma shape mismatch: {} vs {} elements",
                            src.elements(),
                            dst.elements()
                        ),
                    ));
                }
                check_tag_live(tag, st, &here, diags);
            }
            Op::DmaWait { tag } => check_tag_live(tag, st, &here, diags),
            Op::AllocTag { tag } => {
                if let Some(prev) = st.tag_roles.insert(tag.id, *tag) {
                    if prev.role != tag.role {
                        diags.insert(diag(
                            here.clone(),
                            DiagKind::Tag,
                            format!("tag {} reused with a different role", tag.id),
                        ));
                    }
                }
                if st.tags.insert(*tag, here.clone()).is_some() {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Tag,
                        format!("tag {} allocated twice", tag.id),
                    ));
                }
            }
            Op::FreeTag { tag } => {
                if st.tags.remove(tag).is_none() {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Tag,
                        format!("free of unallocated tag {}", tag.id),
                    ));
                }
            }
            Op::Compute {
                inputs,
                output,
                expr,
                vector_factor,
            } => {
                for v in inputs {
                    view_ok(v, st);
                }
                view_ok(output, st);
                if *vector_factor == 0 {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::VectorFactor,
                        "vector_factor must be >= 1".into(),
                    ));
                }
                match expr.dense_arity() {
                    Some(k) if k == inputs.len() => {}
                    _ => {
                        diags.insert(diag(
                            here.clone(),
                            DiagKind::Shape,
                            format!(
                                "expression inputs do not match {} operand views",
                                inputs.len()
                            ),
                        ));
                    }
                }
                if inputs.iter().any(|v| v.elements() != output.elements()) {
                    diags.insert(diag(
                        here.clone(),
                        DiagKind::Shape,
                        "compute operand element counts differ".into(),
                    ));
                }
            }
            Op::AddToGroup { .. } | Op::AwaitAll { .. } => {}
        }
        path.pop();
    }
}

fn check_tag_live(
    tag: &DmaTag,
    st: &StaticState<'_>,
    here: &[u32],
    diags: &mut BTreeSet<Diagnostic>,
) {
    if !st.tags.contains_key(tag) {
        diags.insert(diag(
            here.to_vec(),
            DiagKind::Tag,
            format!("tag {} used while not allocated", tag.id),
        ));
    }
}

/// Unrolls the control structure and checks per-iteration facts: view
/// bounds and start/wait pairing of every tag on the executed path.
fn check_dynamic(m: &TileModule, diags: &mut BTreeSet<Diagnostic>) {
    struct Walk<'m> {
        shapes: BTreeMap<&'m BufferId, (u32, u32)>,
        in_flight: BTreeMap<u32, Vec<u32>>,
        steps: u64,
    }

    fn run<'m>(
        cur: &mut Cursor<'m>,
        prefix: &[u32],
        w: &mut Walk<'m>,
        diags: &mut BTreeSet<Diagnostic>,
    ) -> bool {
        loop {
            let step = match cur.next_step() {
                Ok(Some(s)) => s,
                Ok(None) => return true,
                Err(WalkError::ToggleOutsideLoop) => return false,
                Err(WalkError::UnboundVar(v)) => {
                    diags.insert(diag(
                        full(prefix, cur),
                        DiagKind::Structure,
                        format!("unbound induction variable {v}"),
                    ));
                    return false;
                }
            };
            w.steps += 1;
            if w.steps > MAX_WALK_STEPS {
                diags.insert(diag(
                    vec![],
                    DiagKind::Structure,
                    "control structure too large to verify".into(),
                ));
                return false;
            }
            let here = full(prefix, cur);
            let node = match step {
                Step::Async(_, body) => {
                    let mut inner = Cursor::new(body, cur.env().clone());
                    if !run(&mut inner, &here, w, diags) {
                        return false;
                    }
                    continue;
                }
                Step::Prim(n) => n,
            };
            let mut bounds = |v: &ViewRef| {
                let Some(&(rows, cols)) = w.shapes.get(&v.base) else {
                    return;
                };
                match (cur.eval(&v.row_offset), cur.eval(&v.col_offset)) {
                    (Ok(r), Ok(c)) => {
                        let ok = r >= 0
                            && c >= 0
                            && r + i64::from(v.row_count) <= i64::from(rows)
                            && c + i64::from(v.col_count) <= i64::from(cols);
                        if !ok {
                            diags.insert(diag(
                                here.clone(),
                                DiagKind::Bounds,
                                format!("view of {} out of bounds", v.base),
                            ));
                        }
                    }
                    _ => {
                        diags.insert(diag(
                            here.clone(),
                            DiagKind::Structure,
                            "unbound induction variable".into(),
                        ));
                    }
                }
            };
            match &node.op {
                Op::AllocTcm { decl } => {
                    w.shapes.insert(&decl.id, (decl.rows, decl.cols));
                }
                Op::Copy { src, dst } => {
                    bounds(src);
                    bounds(dst);
                }
                Op::Compute { inputs, output, .. } => {
                    inputs.iter().for_each(&mut bounds);
                    bounds(output);
                }
                Op::DmaStart { src, dst, tag } => {
                    bounds(src);
                    bounds(dst);
                    if w.in_flight.insert(tag.id, here.clone()).is_some() {
                        diags.insert(diag(
                            here.clone(),
                            DiagKind::TagBalance,
                            format!("tag {} restarted while in flight", tag.id),
                        ));
                    }
                }
                Op::DmaWait { tag } => {
                    if w.in_flight.remove(&tag.id).is_none() {
                        diags.insert(diag(
                            here.clone(),
                            DiagKind::TagBalance,
                            format!("wait on idle tag {}", tag.id),
                        ));
                    }
                }
                Op::FreeTag { tag } => {
                    if let Some(start) = w.in_flight.remove(&tag.id) {
                        diags.insert(unbalanced(start, tag.id));
                    }
                }
                _ => {}
            }
        }
    }

    fn full(prefix: &[u32], cur: &Cursor<'_>) -> Vec<u32> {
        let mut p = prefix.to_vec();
        p.extend(cur.path());
        p
    }

    let mut w = Walk {
        shapes: m
            .buffers
            .iter()
            .map(|b| (&b.id, (b.rows, b.cols)))
            .collect(),
        in_flight: BTreeMap::new(),
        steps: 0,
    };
    let mut cur = Cursor::new(&m.body, Vec::new());
    if run(&mut cur, &[], &mut w, diags) {
        for (tag, start) in std::mem::take(&mut w.in_flight) {
            diags.insert(unbalanced(start, tag));
        }
    }
}

fn unbalanced(path: Vec<u32>, tag: u32) -> Diagnostic {
    diag(path, DiagKind::TagBalance, format!("unbalanced tag {tag}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Affine, Expr, LoopVar, Metadata, TagRole};

    fn ddr(id: &str) -> BufferDecl {
        BufferDecl::new(id, MemSpace::Ddr, 4, 256)
    }

    fn module(body: Vec<Node>) -> TileModule {
        TileModule {
            name: "t".into(),
            buffers: vec![ddr("A"), ddr("C")],
            inputs: vec![BufferId::new("A")],
            outputs: vec![BufferId::new("C")],
            body,
            metadata: Metadata::default(),
        }
    }

    fn tile_loop(body: Vec<Node>) -> Node {
        Node::new(Op::ForTiles {
            iv: LoopVar(0),
            tile_count: 4,
            toggle: false,
            body,
        })
    }

    fn row(id: &str) -> ViewRef {
        ViewRef::new(
            BufferId::new(id),
            Affine::var(LoopVar(0), 1, 0),
            1,
            Affine::constant(0),
            256,
        )
    }

    #[test]
    fn missing_wait_reports_one_unbalanced_tag() {
        let tag = DmaTag::new(3, TagRole::Plain);
        let m = module(vec![
            Node::new(Op::AllocTag { tag }),
            tile_loop(vec![Node::new(Op::Copy {
                src: row("A"),
                dst: row("C"),
            })]),
            Node::new(Op::DmaStart {
                src: ddr("A").full_view(),
                dst: ddr("C").full_view(),
                tag,
            }),
            Node::new(Op::FreeTag { tag }),
        ]);
        let d = verify_module(&m, &MachineConfig::default());
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].message, "unbalanced tag 3");
    }

    #[test]
    fn two_large_live_buffers_exceed_capacity_once() {
        // 160 KiB each: 40 rows x 1024 cols x 4 bytes.
        let a = BufferDecl::new("x", MemSpace::Tcm, 40, 1024);
        let b = BufferDecl::new("y", MemSpace::Tcm, 40, 1024);
        assert_eq!(a.bytes(), 160 * 1024);
        let m = module(vec![tile_loop(vec![
            Node::new(Op::AllocTcm { decl: a }),
            Node::new(Op::AllocTcm { decl: b }),
            Node::new(Op::DeallocTcm {
                id: BufferId::new("y"),
            }),
            Node::new(Op::DeallocTcm {
                id: BufferId::new("x"),
            }),
        ])]);
        let cfg = MachineConfig {
            tcm_capacity: 256 * 1024,
            ..MachineConfig::default()
        };
        let d = verify_module(&m, &cfg);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].kind, DiagKind::Capacity);
        assert!(d[0].message.contains("327680"));
    }

    #[test]
    fn out_of_bounds_row_is_caught_per_iteration() {
        let mut bad = row("A");
        bad.row_offset = Affine::var(LoopVar(0), 1, 1);
        let m = module(vec![tile_loop(vec![Node::new(Op::Copy {
            src: bad,
            dst: row("C"),
        })])]);
        let d = verify_module(&m, &MachineConfig::default());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagKind::Bounds);
    }

    #[test]
    fn toggle_ops_need_a_toggled_loop() {
        let m = module(vec![tile_loop(vec![Node::new(Op::FlipToggle)])]);
        let d = verify_module(&m, &MachineConfig::default());
        assert!(d.iter().any(|x| x.kind == DiagKind::Toggle));
    }

    #[test]
    fn shape_and_vector_factor_violations() {
        let mut short = row("C");
        short.col_count = 128;
        let m = module(vec![tile_loop(vec![Node::new(Op::Compute {
            inputs: vec![row("A")],
            output: short,
            expr: Expr::input(0),
            vector_factor: 0,
        })])]);
        let kinds: Vec<DiagKind> = verify_module(&m, &MachineConfig::default())
            .iter()
            .map(|d| d.kind)
            .collect();
        assert!(kinds.contains(&DiagKind::Shape));
        assert!(kinds.contains(&DiagKind::VectorFactor));
    }

    #[test]
    fn diagnostics_are_ordered_by_position() {
        let m = module(vec![tile_loop(vec![
            Node::new(Op::DeallocTcm {
                id: BufferId::new("nope"),
            }),
            Node::new(Op::FlipToggle),
        ])]);
        let d = verify_module(&m, &MachineConfig::default());
        assert_eq!(d.len(), 2);
        assert!(d[0].path < d[1].path);
    }
}
