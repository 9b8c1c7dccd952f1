//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;

use common::*;
use tilelab::bench::{compare_outputs, default_sweep_sizes, run_ladder, run_rung, run_sweep};
use tilelab::ir::{dynamic_trace, Anchor, DistPolicy, Op};
use tilelab::kernels::{
    build_kernel, build_vec_add_2d, generate_inputs, reference_output, KernelKind, KernelSpec,
};
use tilelab::passes::{assignments, db_stage1, db_stage2, run_passes, LadderRung, PipelineSpec};
use tilelab::sim::{
    compute_floor, dma_floor, latency_lower_bound, simulate_timed, KernelStats, MachineConfig,
};
use tilelab::PassError;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn stats(spec: &KernelSpec, cfg: &MachineConfig) -> KernelStats {
    KernelStats::from_module(&build_kernel(spec, cfg).unwrap()).unwrap()
}

/// (kernel label, rung, total cycles, lower bound) for every timed run.
type Floors = Vec<(String, LadderRung, u64, u64)>;

fn equivalence(floors: &mut Floors) -> Outcome {
    let cfg = MachineConfig::default();
    let mut jobs = Vec::new();
    for kind in [KernelKind::VecAdd2d, KernelKind::Gelu] {
        for seed in [1u64, 2, 3] {
            for rung in LadderRung::ALL {
                jobs.push((KernelSpec::default_for(kind).with_seed(seed), rung));
            }
        }
    }
    let results: Vec<Result<(String, LadderRung, u64, u64), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(spec, rung)| {
                let cfg = &cfg;
                s.spawn(move || {
                    let inputs = generate_inputs(spec);
                    let want = reference_output(spec, &inputs).map_err(|e| e.to_string())?;
                    let p = PipelineSpec::for_machine(*rung, cfg);
                    let run = run_rung(spec, cfg, &p, *rung, &inputs).map_err(|e| e.to_string())?;
                    let label = format!("{} seed {}", spec.label(), spec.seed);
                    compare_outputs(spec.kind, &run.outputs, &want)
                        .map_err(|e| format!("{label} {rung}: {e}"))?;
                    let bound = latency_lower_bound(&stats(spec, cfg), cfg, *rung);
                    Ok((label, *rung, run.timing.total_cycles, bound))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let n = results.len();
    for r in results {
        floors.push(r?);
    }
    Ok(format!(
        "{n} runs match the reference (vec-add exact, gelu rel 1e-6)"
    ))
}

fn ladder(floors: &mut Floors) -> Outcome {
    let cfg = MachineConfig::default();
    let spec = KernelSpec::vec_add_2d();
    let report = run_ladder(
        &spec,
        &cfg,
        &PipelineSpec::for_machine(LadderRung::Scalar, &cfg),
    )
    .map_err(|e| e.to_string())?;
    let c: Vec<u64> = report.rows.iter().map(|r| r.cycles).collect();
    for row in &report.rows {
        floors.push((spec.label(), row.rung, row.cycles, row.lower_bound_cycles));
    }
    let lat: Vec<f64> = report.rows.iter().map(|r| r.latency_us).collect();
    ensure(c.windows(2).all(|w| w[1] < w[0]), || {
        format!("latencies not strictly decreasing: {lat:?}")
    })?;
    let ratio = |i: usize| c[i] as f64 / c[i + 1] as f64;
    let (r0, r1, r2) = (ratio(0), ratio(1), ratio(2));
    ensure((8.0..=64.0).contains(&r0), || {
        format!("Scalar/Vec = {r0:.3} outside [8, 64]")
    })?;
    for (name, r) in [("Vec/VecMT", r1), ("VecMT/VecMTDB", r2)] {
        ensure((1.01..=4.0).contains(&r), || {
            format!("{name} = {r:.4} outside [1.01, 4]")
        })?;
    }
    Ok(format!(
        "latencies {lat:?} us; Scalar/Vec {r0:.3}, Vec/VecMT {r1:.3}, VecMT/VecMTDB {r2:.3}"
    ))
}

fn sweep(floors: &mut Floors) -> Outcome {
    let cfg = MachineConfig::default();
    let sizes = default_sweep_sizes();
    let kernel = KernelSpec::gelu(sizes[0]);
    let p = PipelineSpec::for_machine(LadderRung::Vec, &cfg);
    let report = run_sweep(&kernel, &sizes, &cfg, &p).map_err(|e| e.to_string())?;
    for pt in &report.points {
        let st = stats(&KernelSpec::gelu(pt.n_elements), &cfg);
        let label = format!("gelu[{}]", pt.n_elements);
        floors.push((
            label.clone(),
            LadderRung::Vec,
            pt.single_cycles,
            latency_lower_bound(&st, &cfg, LadderRung::Vec),
        ));
        floors.push((
            label,
            LadderRung::VecMt,
            pt.multi_cycles,
            latency_lower_bound(&st, &cfg, LadderRung::VecMt),
        ));
    }
    let s: Vec<f64> = report.points.iter().map(|p| p.speedup).collect();
    ensure(
        sizes.first() == Some(&4096) && sizes.last() == Some(&1_048_576),
        || format!("grid {sizes:?}"),
    )?;
    ensure(s.windows(2).all(|w| w[1] >= w[0] * 0.98), || {
        format!("speedup drops by more than 2%: {s:?}")
    })?;
    let threads = f64::from(cfg.threads);
    ensure(s.iter().all(|&x| x <= threads), || {
        format!("speedup above {threads}: {s:?}")
    })?;
    let last = *s.last().unwrap();
    ensure(last >= 3.2, || format!("speedup at 1048576 is {last}"))?;
    Ok(format!("speedups {s:?}"))
}

fn floor(floors: &Floors) -> Outcome {
    for (label, rung, cycles, bound) in floors {
        ensure(cycles >= bound, || {
            format!("{label} {rung}: {cycles} < bound {bound}")
        })?;
    }
    let cfg = MachineConfig {
        dma_bandwidth: 1,
        ..MachineConfig::default()
    };
    let spec = KernelSpec::vec_add_2d();
    let inputs = generate_inputs(&spec);
    let p = PipelineSpec::for_machine(LadderRung::VecMtDb, &cfg);
    let run = run_rung(&spec, &cfg, &p, LadderRung::VecMtDb, &inputs).map_err(|e| e.to_string())?;
    let t_dma = dma_floor(&stats(&spec, &cfg), &cfg);
    let ratio = run.timing.total_cycles as f64 / t_dma as f64;
    ensure(ratio <= 1.10, || {
        format!("bw=1 VecMTDB is {ratio:.4} x the transfer floor")
    })?;
    Ok(format!(
        "{} runs above their floor; bw=1 VecMTDB = {:.4} x transfer floor",
        floors.len(),
        ratio
    ))
}

fn structure() -> Outcome {
    let mut partitions = 0;
    for policy in [DistPolicy::Block, DistPolicy::BlockCyclic] {
        for threads in 1..=8u32 {
            for tiles in 1..=64u32 {
                let mut seen = assignments(tiles, threads, policy).concat();
                seen.sort_unstable();
                ensure(seen == (0..tiles).collect::<Vec<_>>(), || {
                    format!("{policy:?} T={tiles} threads={threads}: {seen:?}")
                })?;
                partitions += 1;
            }
        }
    }
    for tiles in [1u32, 2, 3, 8] {
        let m = db_stage1(&build_vec_add_2d(&vec_add(tiles, 64, 1, 1)).unwrap())
            .map_err(|e| e.to_string())?;
        let trace = dynamic_trace(&m.body)?;
        for input in ["A", "B"] {
            let rows: Vec<i64> = trace
                .iter()
                .filter(|s| s.node.anchor == Some(Anchor::Prefetch))
                .filter_map(|s| match &s.node.op {
                    Op::Copy { src, .. } if src.base.as_str() == input => s.eval(&src.row_offset),
                    _ => None,
                })
                .collect();
            ensure(rows == (0..i64::from(tiles)).collect::<Vec<_>>(), || {
                format!("stage 1, T={tiles}: prefetches of {input} cover tiles {rows:?}")
            })?;
        }
        for storeback in [true, false] {
            let s2 = db_stage2(&m, storeback).map_err(|e| e.to_string())?;
            check_tag_discipline(&s2).map_err(|e| format!("stage 2, T={tiles}: {e}"))?;
        }
        for threads in 1..=4u32 {
            let full = run_passes(
                &build_vec_add_2d(&vec_add(tiles, 64, 1, 1)).unwrap(),
                LadderRung::VecMtDb.passes(),
                &pipeline(LadderRung::VecMtDb, 8, threads, None),
            )
            .map_err(|e| e.to_string())?;
            check_tag_discipline(&full)
                .map_err(|e| format!("vec-mt-db, T={tiles}, threads={threads}: {e}"))?;
        }
    }
    let base = build_vec_add_2d(&vec_add(4, 64, 1, 1)).unwrap();
    let staged = db_stage1(&base).map_err(|e| e.to_string())?;
    ensure(
        matches!(db_stage1(&staged), Err(PassError::NotNormalForm(_))),
        || "db-stage1 accepted its own output".into(),
    )?;
    ensure(
        db_stage2(&base, true) == Err(PassError::MissingAnchors),
        || "db-stage2 accepted anchor-free input".into(),
    )?;
    Ok(format!(
        "{partitions} partitions exact; prefetch counts and tag discipline hold for T in {{1, 2, 3, 8}}; both rejections fire"
    ))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |sub: &str, kernel: &str, dir: &str| -> Result<(), String> {
        let out = tmp.path().join(dir);
        let status = Command::new(env!("CARGO_BIN_EXE_tilelab"))
            .args([
                sub,
                "--kernel",
                kernel,
                "--out",
                out.to_str().unwrap(),
                "--format",
                "csv,svg",
            ])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("{sub} failed: {}", String::from_utf8_lossy(&status.stderr))
        })
    };
    for (sub, kernel, files) in [
        ("ladder", "vec-add-2d", &["ladder.csv", "ladder.svg"][..]),
        (
            "sweep",
            "gelu",
            &["sweep.csv", "sweep_latency.svg", "sweep_speedup.svg"][..],
        ),
    ] {
        run(sub, kernel, "a")?;
        run(sub, kernel, "b")?;
        for f in files {
            let a = std::fs::read(tmp.path().join("a").join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(tmp.path().join("b").join(f)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{f} differs between runs"))?;
        }
    }
    Ok("ladder and sweep CSV/SVG byte-identical across two CLI runs".into())
}

fn overlap() -> Outcome {
    let base_cfg = MachineConfig::default();
    let spec = KernelSpec::vec_add_2d();
    let st = stats(&spec, &base_cfg);
    let t_compute = compute_floor(&st, &base_cfg, LadderRung::Vec);
    let gap = |bw: u64| {
        let cfg = MachineConfig {
            dma_bandwidth: bw,
            ..base_cfg.clone()
        };
        let t_dma = dma_floor(&st, &cfg);
        (
            t_dma.abs_diff(t_compute) as f64 / t_dma.max(t_compute) as f64,
            t_dma,
        )
    };
    let bw = (1..=4096u64)
        .min_by(|&a, &b| gap(a).0.total_cmp(&gap(b).0))
        .unwrap();
    let (g, t_dma) = gap(bw);
    ensure(g <= 0.10, || {
        format!("no bandwidth balances transfer and compute (best gap {g:.3})")
    })?;
    let cfg = MachineConfig {
        dma_bandwidth: bw,
        ..base_cfg
    };
    let inputs = generate_inputs(&spec);
    let p = PipelineSpec::for_machine(LadderRung::VecMtDb, &cfg);
    let sim = |passes: &[tilelab::passes::PassKind]| -> Result<u64, String> {
        let m = run_passes(&build_kernel(&spec, &cfg).unwrap(), passes, &p)
            .map_err(|e| e.to_string())?;
        Ok(simulate_timed(&m, &inputs, &cfg)
            .map_err(|e| e.to_string())?
            .1
            .total_cycles)
    };
    let single = sim(LadderRung::Vec.passes())?;
    let db = sim(&DB_ONLY)?;
    let ratio = db as f64 / single as f64;
    ensure(ratio <= 0.75, || format!("bw={bw}: DB/single = {ratio:.4}"))?;
    Ok(format!(
        "bw={bw}: T_dma {t_dma}, T_compute {t_compute}; DB {db} vs single-buffered {single} cycles ({ratio:.3})"
    ))
}

fn main() {
    let mut floors = Floors::new();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    {
        let mut guarded = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
            let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
            results.push((n, name, r));
        };
        guarded(1, "functional equivalence", &mut || {
            equivalence(&mut floors)
        });
        guarded(2, "ladder monotonicity", &mut || ladder(&mut floors));
        guarded(3, "gelu sweep", &mut || sweep(&mut floors));
        guarded(4, "simulator floor", &mut || floor(&floors));
        guarded(5, "pass structural invariants", &mut structure);
        guarded(6, "determinism", &mut determinism);
        guarded(7, "double-buffer overlap", &mut overlap);
    }
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
