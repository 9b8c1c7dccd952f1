//! Memory state shared by both executors: DDR arrays, scoped TCM
//! allocations, and the set of DMA transfers not yet awaited.

use std::collections::BTreeMap;

use crate::error::SimError;
use crate::ir::walk::{lookup, Env};
use crate::ir::{Affine, BufferDecl, BufferId, Expr, TileModule, ViewRef};

use super::Arrays;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Ddr(BufferId),
    Tcm(u32, BufferId),
}

#[derive(Debug)]
struct Buf {
    rows: u32,
    cols: u32,
    data: Vec<f32>,
}

/// A resolved rectangle of a concrete buffer instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Region {
    key: Key,
    row0: u32,
    rows: u32,
    col0: u32,
    cols: u32,
}

impl Region {
    pub(crate) fn elements(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }

    fn name(&self) -> String {
        match &self.key {
            Key::Ddr(b) | Key::Tcm(_, b) => b.to_string(),
        }
    }

    fn overlaps(&self, o: &Region) -> bool {
        self.key == o.key
            && self.row0 < o.row0 + o.rows
            && o.row0 < self.row0 + self.rows
            && self.col0 < o.col0 + o.cols
            && o.col0 < self.col0 + self.cols
    }
}

#[derive(Debug)]
struct InFlight {
    scope: u32,
    tag: u32,
    src: Region,
    dst: Region,
    done_at: u64,
}

#[derive(Debug, Default)]
pub(crate) struct Store {
    bufs: BTreeMap<Key, Buf>,
    /// Parent of each scope; scope 0 is the root.
    parents: Vec<Option<u32>>,
    in_flight: Vec<InFlight>,
}

impl Store {
    pub(crate) fn new(m: &TileModule, inputs: &Arrays) -> Result<Store, SimError> {
        let mut bufs = BTreeMap::new();
        for b in &m.buffers {
            let n = b.elements() as usize;
            let data = if m.inputs.contains(&b.id) {
                let arr = inputs
                    .get(b.id.as_str())
                    .ok_or_else(|| SimError::MissingInput(b.id.as_str().to_string()))?;
                if arr.len() != n {
                    return Err(SimError::InputShape {
                        name: b.id.as_str().to_string(),
                        expected: n,
                        got: arr.len(),
                    });
                }
                arr.clone()
            } else {
                vec![0.0; n]
            };
            bufs.insert(
                Key::Ddr(b.id.clone()),
                Buf {
                    rows: b.rows,
                    cols: b.cols,
                    data,
                },
            );
        }
        Ok(Store {
            bufs,
            parents: vec![None],
            in_flight: Vec::new(),
        })
    }

    pub(crate) fn child_scope(&mut self, parent: u32) -> u32 {
        self.parents.push(Some(parent));
        (self.parents.len() - 1) as u32
    }

    pub(crate) fn outputs(&self, m: &TileModule) -> Arrays {
        m.outputs
            .iter()
            .filter_map(|id| {
                self.bufs
                    .get(&Key::Ddr(id.clone()))
                    .map(|b| (id.as_str().to_string(), b.data.clone()))
            })
            .collect()
    }

    fn key_for(&self, scope: u32, id: &BufferId) -> Option<Key> {
        let mut s = Some(scope);
        while let Some(cur) = s {
            let k = Key::Tcm(cur, id.clone());
            if self.bufs.contains_key(&k) {
                return Some(k);
            }
            s = self.parents[cur as usize];
        }
        let k = Key::Ddr(id.clone());
        self.bufs.contains_key(&k).then_some(k)
    }

    pub(crate) fn resolve(&self, scope: u32, v: &ViewRef, env: &Env) -> Result<Region, SimError> {
        let key = self
            .key_for(scope, &v.base)
            .ok_or_else(|| SimError::UnknownBuffer(v.base.to_string()))?;
        let buf = &self.bufs[&key];
        let eval = |a: &Affine| a.eval(|x| lookup(env, x)).ok_or(SimError::UnboundVar);
        let (r, c) = (eval(&v.row_offset)?, eval(&v.col_offset)?);
        let fits = r >= 0
            && c >= 0
            && r + i64::from(v.row_count) <= i64::from(buf.rows)
            && c + i64::from(v.col_count) <= i64::from(buf.cols);
        if !fits {
            return Err(SimError::OutOfBounds(v.base.to_string()));
        }
        Ok(Region {
            key,
            row0: r as u32,
            rows: v.row_count,
            col0: c as u32,
            cols: v.col_count,
        })
    }

    pub(crate) fn alloc(&mut self, scope: u32, decl: &BufferDecl) {
        self.bufs.insert(
            Key::Tcm(scope, decl.id.clone()),
            Buf {
                rows: decl.rows,
                cols: decl.cols,
                data: vec![0.0; decl.elements() as usize],
            },
        );
    }

    pub(crate) fn dealloc(&mut self, scope: u32, id: &BufferId) -> Result<(), SimError> {
        let key = match self.key_for(scope, id) {
            Some(k @ Key::Tcm(..)) => k,
            _ => return Err(SimError::UnknownBuffer(id.to_string())),
        };
        if let Some(t) = self
            .in_flight
            .iter()
            .find(|t| t.src.key == key || t.dst.key == key)
        {
            return Err(SimError::PendingTransfer(t.tag, "buffer deallocation"));
        }
        self.bufs.remove(&key);
        Ok(())
    }

    fn check_read(&self, r: &Region) -> Result<(), SimError> {
        match self.in_flight.iter().find(|t| t.dst.overlaps(r)) {
            Some(t) => Err(SimError::UnawaitedRead {
                buffer: r.name(),
                tag: t.tag,
            }),
            None => Ok(()),
        }
    }

    fn check_write(&self, r: &Region) -> Result<(), SimError> {
        match self
            .in_flight
            .iter()
            .find(|t| t.dst.overlaps(r) || t.src.overlaps(r))
        {
            Some(t) => Err(SimError::WriteHazard {
                buffer: r.name(),
                tag: t.tag,
            }),
            None => Ok(()),
        }
    }

    fn read(&self, r: &Region) -> Vec<f32> {
        let b = &self.bufs[&r.key];
        let mut out = Vec::with_capacity(r.elements() as usize);
        for row in r.row0..r.row0 + r.rows {
            let start = (row as usize) * (b.cols as usize) + r.col0 as usize;
            out.extend_from_slice(&b.data[start..start + r.cols as usize]);
        }
        out
    }

    fn write(&mut self, r: &Region, values: &[f32]) {
        let b = self.bufs.get_mut(&r.key).expect("resolved buffer");
        let cols = b.cols as usize;
        for (i, row) in (r.row0..r.row0 + r.rows).enumerate() {
            let start = row as usize * cols + r.col0 as usize;
            let w = r.cols as usize;
            b.data[start..start + w].copy_from_slice(&values[i * w..(i + 1) * w]);
        }
    }

    /// Synchronous copy; returns bytes moved.
    pub(crate) fn copy(
        &mut self,
        scope: u32,
        src: &ViewRef,
        dst: &ViewRef,
        env: &Env,
    ) -> Result<u64, SimError> {
        let (s, d) = (
            self.resolve(scope, src, env)?,
            self.resolve(scope, dst, env)?,
        );
        self.move_data(&s, &d)?;
        Ok(d.elements() * 4)
    }

    fn move_data(&mut self, s: &Region, d: &Region) -> Result<(), SimError> {
        if s.elements() != d.elements() {
            return Err(SimError::ShapeMismatch(format!(
                "{} -> {}",
                s.name(),
                d.name()
            )));
        }
        self.check_read(s)?;
        self.check_write(d)?;
        let data = self.read(s);
        self.write(d, &data);
        Ok(())
    }

    /// Starts an asynchronous transfer. Data lands immediately; the regions
    /// stay fenced until the tag is awaited. Returns bytes moved.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn dma_start(
        &mut self,
        scope: u32,
        src: &ViewRef,
        dst: &ViewRef,
        tag: u32,
        env: &Env,
        done_at: u64,
    ) -> Result<u64, SimError> {
        if self
            .in_flight
            .iter()
            .any(|t| t.scope == scope && t.tag == tag)
        {
            return Err(SimError::TagBusy(tag));
        }
        let (s, d) = (
            self.resolve(scope, src, env)?,
            self.resolve(scope, dst, env)?,
        );
        self.move_data(&s, &d)?;
        let bytes = d.elements() * 4;
        self.in_flight.push(InFlight {
            scope,
            tag,
            src: s,
            dst: d,
            done_at,
        });
        Ok(bytes)
    }

    pub(crate) fn dma_done_at(&self, scope: u32, tag: u32) -> Option<u64> {
        self.in_flight
            .iter()
            .find(|t| t.scope == scope && t.tag == tag)
            .map(|t| t.done_at)
    }

    pub(crate) fn dma_wait(&mut self, scope: u32, tag: u32) -> Result<(), SimError> {
        match self
            .in_flight
            .iter()
            .position(|t| t.scope == scope && t.tag == tag)
        {
            Some(i) => {
                self.in_flight.remove(i);
                Ok(())
            }
            None => Err(SimError::IdleWait(tag)),
        }
    }

    pub(crate) fn free_tag(&self, scope: u32, tag: u32) -> Result<(), SimError> {
        if self.dma_done_at(scope, tag).is_some() {
            return Err(SimError::PendingTransfer(tag, "tag deallocation"));
        }
        Ok(())
    }

    pub(crate) fn check_quiescent(&self) -> Result<(), SimError> {
        match self.in_flight.first() {
            Some(t) => Err(SimError::PendingTransfer(t.tag, "program end")),
            None => Ok(()),
        }
    }

    /// Evaluates `expr` elementwise in double precision and stores the
    /// result rounded to F32. Returns the element count.
    pub(crate) fn compute(
        &mut self,
        scope: u32,
        inputs: &[ViewRef],
        output: &ViewRef,
        expr: &Expr,
        env: &Env,
    ) -> Result<u64, SimError> {
        let out = self.resolve(scope, output, env)?;
        let n = out.elements() as usize;
        let mut cols = Vec::with_capacity(inputs.len());
        for v in inputs {
            let r = self.resolve(scope, v, env)?;
            if r.elements() as usize != n {
                return Err(SimError::ShapeMismatch(format!(
                    "{} vs {}",
                    r.name(),
                    out.name()
                )));
            }
            self.check_read(&r)?;
            cols.push(
                self.read(&r)
                    .into_iter()
                    .map(f64::from)
                    .collect::<Vec<f64>>(),
            );
        }
        self.check_write(&out)?;
        let result: Vec<f32> = expr
            .eval_columns(&cols, n)
            .into_iter()
            .map(|x| x as f32)
            .collect();
        self.write(&out, &result);
        Ok(n as u64)
    }
}
