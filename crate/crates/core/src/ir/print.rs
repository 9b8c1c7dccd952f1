use std::fmt::Write;

use super::{MemSpace, Node, Op, TileModule};

const INDENT: &str = "  ";

/// Deterministic line-oriented rendering of a module.
pub fn print_module(m: &TileModule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "module @{} {{", m.name);
    if !m.metadata.kernel.is_empty() {
        let _ = writeln!(out, "{INDENT}// kernel: {}", m.metadata.kernel);
    }
    if !m.metadata.passes.is_empty() {
        let _ = writeln!(out, "{INDENT}// passes: {}", m.metadata.passes.join(", "));
    }
    for b in &m.buffers {
        let role = if m.inputs.contains(&b.id) {
            " input"
        } else if m.outputs.contains(&b.id) {
            " output"
        } else {
            ""
        };
        let space = match b.space {
            MemSpace::Ddr => "ddr",
            MemSpace::Tcm => "tcm",
        };
        let _ = writeln!(
            out,
            "{INDENT}buffer {} : {space} [{} x {}] f32{role}",
            b.id, b.rows, b.cols
        );
    }
    write_ops(&mut out, &m.body, 1);
    out.push_str("}\n");
    out
}

/// Renders an op list without the module wrapper, starting at column zero.
pub fn print_ops(ops: &[Node]) -> String {
    let mut out = String::new();
    write_ops(&mut out, ops, 0);
    out
}

fn write_ops(out: &mut String, ops: &[Node], depth: usize) {
    if ops.is_empty() {
        line(out, depth, "<empty>");
    }
    for n in ops {
        write_node(out, n, depth);
    }
}

fn line(out: &mut String, depth: usize, text: &str) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
    out.push_str(text);
    out.push('\n');
}

fn write_node(out: &mut String, n: &Node, depth: usize) {
    let anchor = n
        .anchor
        .map(|a| format!(" [{}]", a.as_str()))
        .unwrap_or_default();
    match &n.op {
        Op::ForTiles {
            iv,
            tile_count,
            toggle,
            body,
        } => {
            let carried = if *toggle {
                " iter_args(%toggle = false)"
            } else {
                ""
            };
            line(
                out,
                depth,
                &format!("for {iv} = 0 to {tile_count}{carried} {{{anchor}"),
            );
            write_ops(out, body, depth + 1);
            line(out, depth, "}");
        }
        Op::Forall {
            iv,
            tile_count,
            policy,
            body,
        } => {
            line(
                out,
                depth,
                &format!(
                    "forall {iv} = 0 to {tile_count} {{mt.policy = {}}} {{{anchor}",
                    policy.as_str()
                ),
            );
            write_ops(out, body, depth + 1);
            line(out, depth, "}");
        }
        Op::AsyncExecute { token, body } => {
            line(
                out,
                depth,
                &format!("%t{} = async.execute {{{anchor}", token.0),
            );
            write_ops(out, body, depth + 1);
            line(out, depth, "}");
        }
        Op::AddToGroup { token, group } => line(
            out,
            depth,
            &format!("async.add_to_group %t{}, %g{}{anchor}", token.0, group.0),
        ),
        Op::AwaitAll { group } => line(
            out,
            depth,
            &format!("async.await_all %g{}{anchor}", group.0),
        ),
        Op::AllocTcm { decl } => line(
            out,
            depth,
            &format!(
                "{} = alloc_tcm [{} x {}] f32{anchor}",
                decl.id, decl.rows, decl.cols
            ),
        ),
        Op::DeallocTcm { id } => line(out, depth, &format!("dealloc_tcm {id}{anchor}")),
        Op::Copy { src, dst } => line(out, depth, &format!("copy {src} -> {dst}{anchor}")),
        Op::AllocTag { tag } => line(out, depth, &format!("dma.alloc_tag {tag}{anchor}")),
        Op::FreeTag { tag } => line(out, depth, &format!("dma.free_tag {tag}{anchor}")),
        Op::DmaStart { src, dst, tag } => line(
            out,
            depth,
            &format!("dma.start {src} -> {dst} tag {tag}{anchor}"),
        ),
        Op::DmaWait { tag } => line(out, depth, &format!("dma.wait {tag}{anchor}")),
        Op::Compute {
            inputs,
            output,
            expr,
            vector_factor,
        } => {
            let ins: Vec<String> = inputs.iter().map(ToString::to_string).collect();
            line(
                out,
                depth,
                &format!(
                    "compute {output} = {expr} ins({}) vf={vector_factor}{anchor}",
                    ins.join(", ")
                ),
            );
        }
        Op::IfInRange {
            index,
            lo,
            hi,
            body,
        } => {
            let cond = if *hi == i64::MAX {
                format!("{index} >= {lo}")
            } else {
                format!("{index} in [{lo}, {hi})")
            };
            line(out, depth, &format!("if {cond} {{{anchor}"));
            write_ops(out, body, depth + 1);
            line(out, depth, "}");
        }
        Op::IfToggle { ping, pong } => {
            line(out, depth, &format!("if_toggle {{{anchor}"));
            write_ops(out, ping, depth + 1);
            line(out, depth, "} else {");
            write_ops(out, pong, depth + 1);
            line(out, depth, "}");
        }
        Op::FlipToggle => line(out, depth, &format!("flip_toggle{anchor}")),
    }
}
