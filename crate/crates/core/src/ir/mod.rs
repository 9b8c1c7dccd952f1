//! Tile-level intermediate representation.
//!
//! A [`TileModule`] is a kernel program over explicit DDR and TCM buffers.
//! The op vocabulary is closed: tiled loops, structured parallel loops,
//! fork–join primitives, copies, asynchronous DMA with tags, and elementwise
//! compute regions. Offsets into buffers are affine in the enclosing loop
//! induction variables, so every access can be resolved exactly for every
//! iteration.

mod expr;
mod normal_form;
mod print;
mod verify;
pub(crate) mod walk;

use std::fmt;

pub use expr::Expr;
pub use normal_form::{match_normal_form, InputTriple, NormalFormDescriptor, OutputPair};
pub use print::{print_module, print_ops};
pub use verify::{verify_module, DiagKind, Diagnostic};
pub use walk::{dynamic_trace, TraceStep};

/// Bytes per F32 element.
pub const F32_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum ElemType {
    #[default]
    F32,
}

impl ElemType {
    pub const fn size_bytes(self) -> u64 {
        match self {
            ElemType::F32 => F32_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemSpace {
    Ddr,
    Tcm,
}

/// Name of a buffer. DDR buffers are module-wide; TCM buffers are scoped to
/// the execution context that allocated them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub String);

impl BufferId {
    pub fn new(name: impl Into<String>) -> Self {
        BufferId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BufferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BufferDecl {
    pub id: BufferId,
    pub space: MemSpace,
    pub rows: u32,
    pub cols: u32,
    pub elem: ElemType,
}

impl BufferDecl {
    pub fn new(id: impl Into<String>, space: MemSpace, rows: u32, cols: u32) -> Self {
        BufferDecl {
            id: BufferId::new(id),
            space,
            rows,
            cols,
            elem: ElemType::F32,
        }
    }

    pub fn elements(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }

    pub fn bytes(&self) -> u64 {
        self.elements() * self.elem.size_bytes()
    }

    /// A view covering the whole buffer.
    pub fn full_view(&self) -> ViewRef {
        ViewRef::new(
            self.id.clone(),
            Affine::constant(0),
            self.rows,
            Affine::constant(0),
            self.cols,
        )
    }
}

/// Loop induction variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoopVar(pub u32);

impl fmt::Display for LoopVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%i{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub u32);

/// Integer affine form `Σ coeff·iv + constant`. Terms are kept sorted by
/// variable with nonzero coefficients so structural equality is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Affine {
    terms: Vec<(LoopVar, i64)>,
    constant: i64,
}

impl Affine {
    pub fn constant(c: i64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    /// `scale·iv + offset`
    pub fn var(iv: LoopVar, scale: i64, offset: i64) -> Self {
        Affine::constant(offset).plus_term(iv, scale)
    }

    pub fn terms(&self) -> &[(LoopVar, i64)] {
        &self.terms
    }

    pub fn constant_part(&self) -> i64 {
        self.constant
    }

    pub fn coeff(&self, iv: LoopVar) -> i64 {
        self.terms
            .iter()
            .find(|(v, _)| *v == iv)
            .map_or(0, |(_, c)| *c)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn plus_term(mut self, iv: LoopVar, coeff: i64) -> Self {
        match self.terms.binary_search_by_key(&iv, |(v, _)| *v) {
            Ok(i) => {
                self.terms[i].1 += coeff;
                if self.terms[i].1 == 0 {
                    self.terms.remove(i);
                }
            }
            Err(i) if coeff != 0 => self.terms.insert(i, (iv, coeff)),
            Err(_) => {}
        }
        self
    }

    pub fn plus_const(mut self, c: i64) -> Self {
        self.constant += c;
        self
    }

    pub fn add(&self, other: &Affine) -> Affine {
        let mut out = self.clone().plus_const(other.constant);
        for &(v, c) in &other.terms {
            out = out.plus_term(v, c);
        }
        out
    }

    pub fn scale(&self, k: i64) -> Affine {
        let mut out = Affine::constant(self.constant * k);
        for &(v, c) in &self.terms {
            out = out.plus_term(v, c * k);
        }
        out
    }

    /// Replaces `iv` by `with`.
    pub fn substitute(&self, iv: LoopVar, with: &Affine) -> Affine {
        let c = self.coeff(iv);
        if c == 0 {
            return self.clone();
        }
        let rest = self.clone().plus_term(iv, -c);
        rest.add(&with.scale(c))
    }

    /// Evaluates under `lookup`; `None` when a variable is unbound.
    pub fn eval(&self, lookup: impl Fn(LoopVar) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for &(v, c) in &self.terms {
            acc += c * lookup(v)?;
        }
        Some(acc)
    }
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "{}", self.constant);
        }
        for (i, (v, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            if *c == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{c}*{v}")?;
            }
        }
        if self.constant != 0 {
            write!(f, " + {}", self.constant)?;
        }
        Ok(())
    }
}

/// A rectangular region of a 2D buffer. Offsets are affine in enclosing
/// induction variables; extents are static.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ViewRef {
    pub base: BufferId,
    pub row_offset: Affine,
    pub row_count: u32,
    pub col_offset: Affine,
    pub col_count: u32,
}

impl ViewRef {
    pub fn new(
        base: BufferId,
        row_offset: Affine,
        row_count: u32,
        col_offset: Affine,
        col_count: u32,
    ) -> Self {
        ViewRef {
            base,
            row_offset,
            row_count,
            col_offset,
            col_count,
        }
    }

    pub fn elements(&self) -> u64 {
        u64::from(self.row_count) * u64::from(self.col_count)
    }

    pub fn bytes(&self) -> u64 {
        self.elements() * F32_BYTES
    }

    pub fn substitute(&self, iv: LoopVar, with: &Affine) -> ViewRef {
        ViewRef {
            base: self.base.clone(),
            row_offset: self.row_offset.substitute(iv, with),
            row_count: self.row_count,
            col_offset: self.col_offset.substitute(iv, with),
            col_count: self.col_count,
        }
    }

    pub fn with_base(&self, base: BufferId) -> ViewRef {
        ViewRef {
            base,
            ..self.clone()
        }
    }
}

impl fmt::Display for ViewRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}, {}][{} x {}]",
            self.base, self.row_offset, self.col_offset, self.row_count, self.col_count
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagRole {
    Ping,
    Pong,
    Storeback,
    Plain,
}

impl TagRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TagRole::Ping => "ping",
            TagRole::Pong => "pong",
            TagRole::Storeback => "storeback",
            TagRole::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DmaTag {
    pub id: u32,
    pub role: TagRole,
}

impl DmaTag {
    pub fn new(id: u32, role: TagRole) -> Self {
        DmaTag { id, role }
    }
}

impl fmt::Display for DmaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}:{}", self.id, self.role.as_str())
    }
}

/// Work distribution of a structured parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistPolicy {
    Block,
    BlockCyclic,
}

impl DistPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            DistPolicy::Block => "block",
            DistPolicy::BlockCyclic => "block_cyclic",
        }
    }
}

/// Role markers attached by double-buffering stage 1 and consumed by stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Anchor {
    Prefetch,
    Compute,
    Storeback,
}

impl Anchor {
    pub fn as_str(self) -> &'static str {
        match self {
            Anchor::Prefetch => "db.prefetch",
            Anchor::Compute => "db.compute",
            Anchor::Storeback => "db.storeback",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Sequential tiled loop. With `toggle`, carries a boolean initialised to
    /// false (ping) that `IfToggle` reads and `FlipToggle` inverts.
    ForTiles {
        iv: LoopVar,
        tile_count: u32,
        toggle: bool,
        body: Vec<Node>,
    },
    /// Structured parallel loop with no cross-iteration dependences.
    Forall {
        iv: LoopVar,
        tile_count: u32,
        policy: DistPolicy,
        body: Vec<Node>,
    },
    AsyncExecute {
        token: TokenId,
        body: Vec<Node>,
    },
    AddToGroup {
        token: TokenId,
        group: GroupId,
    },
    AwaitAll {
        group: GroupId,
    },
    AllocTcm {
        decl: BufferDecl,
    },
    DeallocTcm {
        id: BufferId,
    },
    Copy {
        src: ViewRef,
        dst: ViewRef,
    },
    AllocTag {
        tag: DmaTag,
    },
    FreeTag {
        tag: DmaTag,
    },
    DmaStart {
        src: ViewRef,
        dst: ViewRef,
        tag: DmaTag,
    },
    DmaWait {
        tag: DmaTag,
    },
    Compute {
        inputs: Vec<ViewRef>,
        output: ViewRef,
        expr: Expr,
        vector_factor: u32,
    },
    /// Runs `body` iff `lo <= index < hi`.
    IfInRange {
        index: Affine,
        lo: i64,
        hi: i64,
        body: Vec<Node>,
    },
    /// Selects an arm on the nearest enclosing toggle-carrying loop.
    IfToggle {
        ping: Vec<Node>,
        pong: Vec<Node>,
    },
    FlipToggle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub anchor: Option<Anchor>,
}

impl Node {
    pub fn new(op: Op) -> Self {
        Node { op, anchor: None }
    }

    pub fn anchored(op: Op, anchor: Anchor) -> Self {
        Node {
            op,
            anchor: Some(anchor),
        }
    }

    /// Nested op lists, in program order.
    pub fn regions(&self) -> Vec<&Vec<Node>> {
        match &self.op {
            Op::ForTiles { body, .. }
            | Op::Forall { body, .. }
            | Op::AsyncExecute { body, .. }
            | Op::IfInRange { body, .. } => vec![body],
            Op::IfToggle { ping, pong } => vec![ping, pong],
            _ => Vec::new(),
        }
    }

    pub fn regions_mut(&mut self) -> Vec<&mut Vec<Node>> {
        match &mut self.op {
            Op::ForTiles { body, .. }
            | Op::Forall { body, .. }
            | Op::AsyncExecute { body, .. }
            | Op::IfInRange { body, .. } => vec![body],
            Op::IfToggle { ping, pong } => vec![ping, pong],
            _ => Vec::new(),
        }
    }

    /// Rewrites every view and affine index under this node, replacing `iv`.
    pub fn substitute(&self, iv: LoopVar, with: &Affine) -> Node {
        let op = match &self.op {
            Op::Copy { src, dst } => Op::Copy {
                src: src.substitute(iv, with),
                dst: dst.substitute(iv, with),
            },
            Op::DmaStart { src, dst, tag } => Op::DmaStart {
                src: src.substitute(iv, with),
                dst: dst.substitute(iv, with),
                tag: *tag,
            },
            Op::Compute {
                inputs,
                output,
                expr,
                vector_factor,
            } => Op::Compute {
                inputs: inputs.iter().map(|v| v.substitute(iv, with)).collect(),
                output: output.substitute(iv, with),
                expr: expr.clone(),
                vector_factor: *vector_factor,
            },
            Op::IfInRange {
                index,
                lo,
                hi,
                body,
            } => Op::IfInRange {
                index: index.substitute(iv, with),
                lo: *lo,
                hi: *hi,
                body: substitute_all(body, iv, with),
            },
            other => {
                let mut n = Node::new(other.clone());
                for region in n.regions_mut() {
                    *region = substitute_all(region, iv, with);
                }
                n.op
            }
        };
        Node {
            op,
            anchor: self.anchor,
        }
    }
}

pub fn substitute_all(nodes: &[Node], iv: LoopVar, with: &Affine) -> Vec<Node> {
    nodes.iter().map(|n| n.substitute(iv, with)).collect()
}

/// Visits every node in program order (pre-order).
pub fn visit<'a>(nodes: &'a [Node], f: &mut impl FnMut(&'a Node)) {
    for n in nodes {
        f(n);
        for r in n.regions() {
            visit(r, f);
        }
    }
}

/// Descriptive metadata carried alongside the program.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metadata {
    /// Kernel label, e.g. `vec-add-2d[64x16384]`.
    pub kernel: String,
    /// Names of passes applied so far, in order.
    pub passes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileModule {
    pub name: String,
    /// DDR inputs and outputs.
    pub buffers: Vec<BufferDecl>,
    pub inputs: Vec<BufferId>,
    pub outputs: Vec<BufferId>,
    pub body: Vec<Node>,
    pub metadata: Metadata,
}

impl TileModule {
    pub fn buffer(&self, id: &BufferId) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| &b.id == id)
    }

    pub fn has_op(&self, pred: impl Fn(&Op) -> bool) -> bool {
        let mut found = false;
        visit(&self.body, &mut |n| found |= pred(&n.op));
        found
    }

    pub fn count_ops(&self, pred: impl Fn(&Node) -> bool) -> usize {
        let mut count = 0;
        visit(&self.body, &mut |n| {
            if pred(n) {
                count += 1;
            }
        });
        count
    }

    pub fn fresh_var(&self) -> LoopVar {
        let mut max = None;
        visit(&self.body, &mut |n| match &n.op {
            Op::ForTiles { iv, .. } | Op::Forall { iv, .. } => max = max.max(Some(iv.0)),
            _ => {}
        });
        LoopVar(max.map_or(0, |m| m + 1))
    }

    pub fn fresh_token(&self) -> TokenId {
        let mut max = None;
        visit(&self.body, &mut |n| {
            if let Op::AsyncExecute { token, .. } | Op::AddToGroup { token, .. } = &n.op {
                max = max.max(Some(token.0));
            }
        });
        TokenId(max.map_or(0, |m| m + 1))
    }

    pub fn fresh_group(&self) -> GroupId {
        let mut max = None;
        visit(&self.body, &mut |n| {
            if let Op::AddToGroup { group, .. } | Op::AwaitAll { group } = &n.op {
                max = max.max(Some(group.0));
            }
        });
        GroupId(max.map_or(0, |m| m + 1))
    }

    pub fn fresh_tag_id(&self) -> u32 {
        let mut max = None;
        visit(&self.body, &mut |n| match &n.op {
            Op::AllocTag { tag }
            | Op::FreeTag { tag }
            | Op::DmaWait { tag }
            | Op::DmaStart { tag, .. } => max = max.max(Some(tag.id)),
            _ => {}
        });
        max.map_or(0, |m| m + 1)
    }

    /// Peak TCM bytes live in program order (alloc-to-dealloc spans).
    pub fn tcm_footprint(&self) -> u64 {
        fn walk(nodes: &[Node], live: &mut u64, peak: &mut u64, sizes: &mut Vec<(BufferId, u64)>) {
            for n in nodes {
                match &n.op {
                    Op::AllocTcm { decl } => {
                        *live += decl.bytes();
                        *peak = (*peak).max(*live);
                        sizes.push((decl.id.clone(), decl.bytes()));
                    }
                    Op::DeallocTcm { id } => {
                        if let Some(pos) = sizes.iter().rposition(|(b, _)| b == id) {
                            *live -= sizes.remove(pos).1;
                        }
                    }
                    _ => {
                        for r in n.regions() {
                            walk(r, live, peak, sizes);
                        }
                    }
                }
            }
        }
        let (mut live, mut peak) = (0, 0);
        walk(&self.body, &mut live, &mut peak, &mut Vec::new());
        peak
    }
}
