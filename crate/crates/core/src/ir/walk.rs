//! Control-flow cursor shared by the verifier, the functional interpreter
//! and the timed simulator. It unrolls loops, guards and toggles, and hands
//! back primitive ops one at a time together with the induction-variable
//! environment they execute under.

use super::{Affine, LoopVar, Node, Op};

pub(crate) type Env = Vec<(LoopVar, i64)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum WalkError {
    ToggleOutsideLoop,
    UnboundVar(LoopVar),
}

#[derive(Debug, Clone)]
enum FrameKind {
    Seq,
    Loop {
        iv: LoopVar,
        trip: u32,
        idx: u32,
        toggle: Option<bool>,
    },
}

#[derive(Debug, Clone)]
struct Frame<'m> {
    ops: &'m [Node],
    pc: usize,
    arm: Option<u32>,
    kind: FrameKind,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Step<'m> {
    /// Leaf op: allocation, copy, DMA, compute, tag or group management.
    Prim(&'m Node),
    /// `AsyncExecute`; the cursor does not descend into its body.
    Async(&'m Node, &'m [Node]),
}

#[derive(Debug, Clone)]
pub(crate) struct Cursor<'m> {
    frames: Vec<Frame<'m>>,
    env: Env,
}

impl<'m> Cursor<'m> {
    pub(crate) fn new(ops: &'m [Node], env: Env) -> Self {
        Cursor {
            frames: vec![Frame {
                ops,
                pc: 0,
                arm: None,
                kind: FrameKind::Seq,
            }],
            env,
        }
    }

    pub(crate) fn env(&self) -> &Env {
        &self.env
    }

    pub(crate) fn lookup(&self, v: LoopVar) -> Option<i64> {
        lookup(&self.env, v)
    }

    pub(crate) fn eval(&self, a: &Affine) -> Result<i64, WalkError> {
        a.eval(|v| self.lookup(v)).ok_or_else(|| {
            let missing = a
                .terms()
                .iter()
                .map(|(v, _)| *v)
                .find(|v| self.lookup(*v).is_none());
            WalkError::UnboundVar(missing.unwrap_or(LoopVar(u32::MAX)))
        })
    }

    /// Position of the op most recently returned, as indices through the
    /// nesting (toggle arms contribute an extra arm index).
    pub(crate) fn path(&self) -> Vec<u32> {
        let mut p = Vec::with_capacity(self.frames.len() + 1);
        for f in &self.frames {
            if let Some(a) = f.arm {
                p.push(a);
            }
            p.push(f.pc.saturating_sub(1) as u32);
        }
        p
    }

    fn toggle_frame(&mut self) -> Option<&mut Option<bool>> {
        self.frames
            .iter_mut()
            .rev()
            .find_map(|f| match &mut f.kind {
                FrameKind::Loop {
                    toggle: t @ Some(_),
                    ..
                } => Some(t),
                _ => None,
            })
    }

    pub(crate) fn next_step(&mut self) -> Result<Option<Step<'m>>, WalkError> {
        loop {
            let Some(top) = self.frames.last_mut() else {
                return Ok(None);
            };
            if top.pc >= top.ops.len() {
                let finished = self.frames.pop().expect("frame");
                if let FrameKind::Loop {
                    iv,
                    trip,
                    idx,
                    toggle,
                } = finished.kind
                {
                    if idx + 1 < trip {
                        set(&mut self.env, iv, i64::from(idx + 1));
                        self.frames.push(Frame {
                            pc: 0,
                            kind: FrameKind::Loop {
                                iv,
                                trip,
                                idx: idx + 1,
                                toggle,
                            },
                            ..finished
                        });
                    } else {
                        self.env.pop();
                    }
                }
                continue;
            }
            let node = &top.ops[top.pc];
            top.pc += 1;
            match &node.op {
                Op::ForTiles {
                    iv,
                    tile_count,
                    toggle,
                    body,
                } => self.enter_loop(*iv, *tile_count, toggle.then_some(false), body),
                Op::Forall {
                    iv,
                    tile_count,
                    body,
                    ..
                } => self.enter_loop(*iv, *tile_count, None, body),
                Op::IfInRange {
                    index,
                    lo,
                    hi,
                    body,
                } => {
                    let v = self.eval(index)?;
                    if (*lo..*hi).contains(&v) {
                        self.push_seq(body, None);
                    }
                }
                Op::IfToggle { ping, pong } => {
                    let state = self.toggle_frame().ok_or(WalkError::ToggleOutsideLoop)?;
                    if state.expect("toggle") {
                        self.push_seq(pong, Some(1));
                    } else {
                        self.push_seq(ping, Some(0));
                    }
                }
                Op::FlipToggle => {
                    let state = self.toggle_frame().ok_or(WalkError::ToggleOutsideLoop)?;
                    *state = Some(!state.expect("toggle"));
                }
                Op::AsyncExecute { body, .. } => return Ok(Some(Step::Async(node, body))),
                _ => return Ok(Some(Step::Prim(node))),
            }
        }
    }

    fn enter_loop(&mut self, iv: LoopVar, trip: u32, toggle: Option<bool>, body: &'m [Node]) {
        if trip == 0 {
            return;
        }
        self.env.push((iv, 0));
        self.frames.push(Frame {
            ops: body,
            pc: 0,
            arm: None,
            kind: FrameKind::Loop {
                iv,
                trip,
                idx: 0,
                toggle,
            },
        });
    }

    fn push_seq(&mut self, ops: &'m [Node], arm: Option<u32>) {
        self.frames.push(Frame {
            ops,
            pc: 0,
            arm,
            kind: FrameKind::Seq,
        });
    }
}

/// One executed leaf op and the induction variables bound at that point.
#[derive(Debug, Clone)]
pub struct TraceStep<'m> {
    pub node: &'m Node,
    pub env: Vec<(LoopVar, i64)>,
}

impl TraceStep<'_> {
    pub fn eval(&self, a: &Affine) -> Option<i64> {
        a.eval(|v| lookup(&self.env, v))
    }
}

/// Leaf ops in dynamic execution order, with async region bodies inlined
/// at their launch point (the functional interpreter's schedule). The
/// `AsyncExecute` node itself precedes its body.
pub fn dynamic_trace(ops: &[Node]) -> Result<Vec<TraceStep<'_>>, String> {
    fn run<'m>(cur: &mut Cursor<'m>, out: &mut Vec<TraceStep<'m>>) -> Result<(), String> {
        while let Some(step) = cur.next_step().map_err(|e| format!("{e:?}"))? {
            let (node, body) = match step {
                Step::Prim(n) => (n, None),
                Step::Async(n, body) => (n, Some(body)),
            };
            out.push(TraceStep {
                node,
                env: cur.env().clone(),
            });
            if let Some(body) = body {
                run(&mut Cursor::new(body, cur.env().clone()), out)?;
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    run(&mut Cursor::new(ops, Vec::new()), &mut out)?;
    Ok(out)
}

pub(crate) fn lookup(env: &Env, v: LoopVar) -> Option<i64> {
    env.iter().rev().find(|(k, _)| *k == v).map(|(_, x)| *x)
}

fn set(env: &mut Env, v: LoopVar, x: i64) {
    if let Some(slot) = env.iter_mut().rev().find(|(k, _)| *k == v) {
        slot.1 = x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::DmaTag;
    use crate::ir::TagRole;

    fn wait(id: u32) -> Node {
        Node::new(Op::DmaWait {
            tag: DmaTag::new(id, TagRole::Plain),
        })
    }

    fn collect(ops: &[Node]) -> Vec<(u32, Env)> {
        let mut c = Cursor::new(ops, Vec::new());
        let mut out = Vec::new();
        while let Some(step) = c.next_step().unwrap() {
            if let Step::Prim(Node {
                op: Op::DmaWait { tag },
                ..
            }) = step
            {
                out.push((tag.id, c.env().clone()));
            }
        }
        out
    }

    #[test]
    fn toggled_loop_alternates_arms() {
        let body = vec![
            Node::new(Op::IfToggle {
                ping: vec![wait(0)],
                pong: vec![wait(1)],
            }),
            Node::new(Op::FlipToggle),
        ];
        let ops = vec![Node::new(Op::ForTiles {
            iv: LoopVar(0),
            tile_count: 5,
            toggle: true,
            body,
        })];
        let ids: Vec<u32> = collect(&ops).into_iter().map(|(t, _)| t).collect();
        assert_eq!(ids, vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn guard_skips_out_of_range_iterations() {
        let iv = LoopVar(3);
        let ops = vec![Node::new(Op::ForTiles {
            iv,
            tile_count: 4,
            toggle: false,
            body: vec![Node::new(Op::IfInRange {
                index: Affine::var(iv, 1, 1),
                lo: 0,
                hi: 4,
                body: vec![wait(7)],
            })],
        })];
        let ivs: Vec<i64> = collect(&ops).into_iter().map(|(_, env)| env[0].1).collect();
        assert_eq!(ivs, vec![0, 1, 2]);
    }

    #[test]
    fn toggle_outside_loop_is_an_error() {
        let ops = vec![Node::new(Op::FlipToggle)];
        let mut c = Cursor::new(&ops, Vec::new());
        assert_eq!(c.next_step().unwrap_err(), WalkError::ToggleOutsideLoop);
    }

    #[test]
    fn nested_loops_expose_both_variables() {
        let (a, b) = (LoopVar(0), LoopVar(1));
        let ops = vec![Node::new(Op::ForTiles {
            iv: a,
            tile_count: 2,
            toggle: false,
            body: vec![Node::new(Op::ForTiles {
                iv: b,
                tile_count: 3,
                toggle: false,
                body: vec![wait(0)],
            })],
        })];
        let envs: Vec<Env> = collect(&ops).into_iter().map(|(_, e)| e).collect();
        assert_eq!(envs.len(), 6);
        assert_eq!(envs[4], vec![(a, 1), (b, 1)]);
    }
}
