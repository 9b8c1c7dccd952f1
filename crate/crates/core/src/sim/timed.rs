//! Deterministic discrete-event execution.
//!
//! Context 0 is the control context that runs the module body. Contexts
//! `1..=threads` are hardware worker threads that pick up async regions.
//! One DMA channel serves transfers in FIFO order; because requests are
//! issued in nondecreasing simulated time, each transfer's completion time
//! is known when it is enqueued.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::Serialize;

use crate::error::SimError;
use crate::ir::walk::{Cursor, Env, Step};
use crate::ir::{GroupId, Node, Op, TileModule, TokenId};

use super::store::Store;
use super::{Arrays, MachineConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub total_cycles: u64,
    /// `total_cycles / clock_hz · 1e6`, unrounded.
    pub total_us: f64,
    pub compute_busy_cycles: u64,
    pub dma_busy_cycles: u64,
    /// Cycles contexts spent blocked on copies or DMA waits.
    pub stall_cycles: u64,
    /// Fork plus join cycles.
    pub overhead_cycles: u64,
    /// Compute plus overhead cycles per context; entry 0 is the control
    /// context, entries `1..=threads` the workers.
    pub per_thread_busy: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Dispatch(usize),
    Resume(usize),
}

struct Region<'m> {
    body: &'m [Node],
    env: Env,
    parent_scope: u32,
    done: bool,
}

struct Ctx<'m> {
    cursor: Option<Cursor<'m>>,
    scope: u32,
    region: Option<usize>,
    /// Step to retry when the context is woken.
    pending: Option<Step<'m>>,
    awaiting: Option<GroupId>,
    last_token: BTreeMap<TokenId, usize>,
    groups: BTreeMap<GroupId, Vec<usize>>,
    busy: u64,
}

impl<'m> Ctx<'m> {
    fn idle() -> Self {
        Ctx {
            cursor: None,
            scope: 0,
            region: None,
            pending: None,
            awaiting: None,
            last_token: BTreeMap::new(),
            groups: BTreeMap::new(),
            busy: 0,
        }
    }
}

struct Engine<'m, 'c> {
    cfg: &'c MachineConfig,
    store: Store,
    ctxs: Vec<Ctx<'m>>,
    regions: Vec<Region<'m>>,
    backlog: VecDeque<usize>,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    channel_free_at: u64,
    main_done: bool,
    now: u64,
    report: TimingReport,
}

/// Runs `m` on the timed machine model. Outputs equal
/// [`super::interpret_functional`]'s outputs exactly.
pub fn simulate_timed(
    m: &TileModule,
    inputs: &Arrays,
    cfg: &MachineConfig,
) -> Result<(Arrays, TimingReport), SimError> {
    let threads = cfg.threads.max(1) as usize;
    let mut ctxs: Vec<Ctx<'_>> = (0..=threads).map(|_| Ctx::idle()).collect();
    ctxs[0].cursor = Some(Cursor::new(&m.body, Vec::new()));
    let mut e = Engine {
        cfg,
        store: Store::new(m, inputs)?,
        ctxs,
        regions: Vec::new(),
        backlog: VecDeque::new(),
        queue: BinaryHeap::new(),
        seq: 0,
        channel_free_at: 0,
        main_done: false,
        now: 0,
        report: TimingReport {
            total_cycles: 0,
            total_us: 0.0,
            compute_busy_cycles: 0,
            dma_busy_cycles: 0,
            stall_cycles: 0,
            overhead_cycles: 0,
            per_thread_busy: vec![0; threads + 1],
        },
    };
    e.schedule(0, Event::Resume(0));
    while let Some(Reverse((t, _, ev))) = e.queue.pop() {
        e.now = t;
        match ev {
            Event::Dispatch(r) => e.dispatch(r),
            Event::Resume(c) => e.resume(c)?,
        }
    }
    if !e.main_done || e.regions.iter().any(|r| !r.done) {
        return Err(SimError::Deadlock);
    }
    e.store.check_quiescent()?;
    let mut report = e.report;
    report.total_cycles = e.now;
    report.total_us = e.now as f64 / cfg.clock_hz * 1e6;
    report.per_thread_busy = e.ctxs.iter().map(|c| c.busy).collect();
    Ok((e.store.outputs(m), report))
}

impl<'m> Engine<'m, '_> {
    fn schedule(&mut self, at: u64, ev: Event) {
        self.queue.push(Reverse((at, self.seq, ev)));
        self.seq += 1;
    }

    fn enqueue_transfer(&mut self, bytes: u64) -> u64 {
        let cost = self.cfg.transfer_cycles(bytes);
        let start = self.now.max(self.channel_free_at);
        self.channel_free_at = start + cost;
        self.report.dma_busy_cycles += cost;
        self.channel_free_at
    }

    fn dispatch(&mut self, region: usize) {
        match (1..self.ctxs.len()).find(|&w| self.ctxs[w].cursor.is_none()) {
            Some(w) => self.start_region(w, region),
            None => self.backlog.push_back(region),
        }
    }

    fn start_region(&mut self, worker: usize, region: usize) {
        let r = &self.regions[region];
        let (body, env, parent) = (r.body, r.env.clone(), r.parent_scope);
        let scope = self.store.child_scope(parent);
        let ctx = &mut self.ctxs[worker];
        ctx.cursor = Some(Cursor::new(body, env));
        ctx.scope = scope;
        ctx.region = Some(region);
        self.schedule(self.now, Event::Resume(worker));
    }

    fn group_done(&self, c: usize, g: GroupId) -> bool {
        self.ctxs[c]
            .groups
            .get(&g)
            .is_none_or(|members| members.iter().all(|&r| self.regions[r].done))
    }

    fn finish(&mut self, c: usize) {
        self.ctxs[c].cursor = None;
        let Some(region) = self.ctxs[c].region.take() else {
            self.main_done = true;
            return;
        };
        self.regions[region].done = true;
        for waiter in 0..self.ctxs.len() {
            if let Some(g) = self.ctxs[waiter].awaiting {
                if self.group_done(waiter, g) {
                    self.ctxs[waiter].awaiting = None;
                    self.schedule(self.now, Event::Resume(waiter));
                }
            }
        }
        if let Some(next) = self.backlog.pop_front() {
            self.start_region(c, next);
        }
    }

    /// Runs context `c` from the current time until it blocks, spends time,
    /// or finishes.
    fn resume(&mut self, c: usize) -> Result<(), SimError> {
        let now = self.now;
        loop {
            let step = match self.ctxs[c].pending.take() {
                Some(s) => Some(s),
                None => self.ctxs[c]
                    .cursor
                    .as_mut()
                    .expect("running context")
                    .next_step()?,
            };
            let Some(step) = step else {
                self.finish(c);
                return Ok(());
            };
            let scope = self.ctxs[c].scope;
            let node = match step {
                Step::Async(node, body) => {
                    let Op::AsyncExecute { token, .. } = &node.op else {
                        unreachable!()
                    };
                    let env = self.ctxs[c].cursor.as_ref().expect("cursor").env().clone();
                    self.regions.push(Region {
                        body,
                        env,
                        parent_scope: scope,
                        done: false,
                    });
                    let id = self.regions.len() - 1;
                    self.ctxs[c].last_token.insert(*token, id);
                    let fork = self.cfg.fork_cost;
                    self.report.overhead_cycles += fork;
                    self.ctxs[c].busy += fork;
                    self.schedule(now + fork, Event::Dispatch(id));
                    self.schedule(now + fork, Event::Resume(c));
                    return Ok(());
                }
                Step::Prim(n) => n,
            };
            let cur = self.ctxs[c].cursor.as_ref().expect("cursor");
            let env = cur.env().clone();
            match &node.op {
                Op::AllocTcm { decl } => self.store.alloc(scope, decl),
                Op::DeallocTcm { id } => self.store.dealloc(scope, id)?,
                Op::AllocTag { .. } => {}
                Op::FreeTag { tag } => self.store.free_tag(scope, tag.id)?,
                Op::Compute {
                    inputs,
                    output,
                    expr,
                    vector_factor,
                } => {
                    let n = self.store.compute(scope, inputs, output, expr, &env)?;
                    let cost = self
                        .cfg
                        .compute_cycles(n, expr.ops_per_element(), *vector_factor);
                    self.report.compute_busy_cycles += cost;
                    self.ctxs[c].busy += cost;
                    self.schedule(now + cost, Event::Resume(c));
                    return Ok(());
                }
                Op::Copy { src, dst } => {
                    let bytes = self.store.copy(scope, src, dst, &env)?;
                    let done = self.enqueue_transfer(bytes);
                    self.report.stall_cycles += done - now;
                    self.schedule(done, Event::Resume(c));
                    return Ok(());
                }
                Op::DmaStart { src, dst, tag } => {
                    let bytes = dst.bytes();
                    let done = self.enqueue_transfer(bytes);
                    self.store.dma_start(scope, src, dst, tag.id, &env, done)?;
                }
                Op::DmaWait { tag } => {
                    let done = self
                        .store
                        .dma_done_at(scope, tag.id)
                        .ok_or(SimError::IdleWait(tag.id))?;
                    if done > now {
                        self.report.stall_cycles += done - now;
                        self.ctxs[c].pending = Some(step);
                        self.schedule(done, Event::Resume(c));
                        return Ok(());
                    }
                    self.store.dma_wait(scope, tag.id)?;
                }
                Op::AddToGroup { token, group } => {
                    let ctx = &mut self.ctxs[c];
                    let region = *ctx.last_token.get(token).ok_or(SimError::UnknownToken)?;
                    ctx.groups.entry(*group).or_default().push(region);
                }
                Op::AwaitAll { group } => {
                    if !self.group_done(c, *group) {
                        self.ctxs[c].pending = Some(step);
                        self.ctxs[c].awaiting = Some(*group);
                        return Ok(());
                    }
                    self.ctxs[c].groups.remove(group);
                    let join = self.cfg.join_cost;
                    self.report.overhead_cycles += join;
                    self.ctxs[c].busy += join;
                    self.schedule(now + join, Event::Resume(c));
                    return Ok(());
                }
                _ => unreachable!("cursor yields only leaf ops"),
            }
        }
    }
}
