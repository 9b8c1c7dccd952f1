//! Ablation ladder and size sweep, with CSV, JSON and SVG reports.

mod csv;
mod svg;

use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::ir::{verify_module, TileModule};
use crate::kernels::{build_kernel, generate_inputs, KernelKind, KernelSpec};
use crate::passes::{run_pipeline, LadderRung, PipelineSpec};
use crate::sim::{
    cycles_to_us, latency_lower_bound, round3, simulate_timed, Arrays, KernelStats, MachineConfig,
    TimingReport,
};

pub use csv::{ladder_csv, parse_ladder_csv, parse_sweep_csv, sweep_csv};
pub use svg::{ladder_svg, sweep_latency_svg, sweep_speedup_svg};

/// Relative tolerance for transcendental kernels.
pub const GELU_REL_TOL: f64 = 1e-6;

/// Default sweep grid: powers of two from 4096 to 1,048,576.
pub fn default_sweep_sizes() -> Vec<u32> {
    (12..=20).map(|k| 1u32 << k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub rung: LadderRung,
    pub latency_us: f64,
    pub speedup_vs_scalar: f64,
    pub cycles: u64,
    pub lower_bound_cycles: u64,
    pub timing: TimingReport,
}

/// Published hardware measurements, carried for trend comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReference {
    pub latencies_us: [f64; 4],
    pub scalar_over_vec: f64,
    pub vec_over_vec_mt: f64,
    pub vec_mt_over_vec_mt_db: f64,
}

impl Default for LadderReference {
    fn default() -> Self {
        LadderReference {
            latencies_us: [132_479.0, 3_210.0, 3_000.0, 2_689.0],
            scalar_over_vec: 41.3,
            vec_over_vec_mt: 1.07,
            vec_mt_over_vec_mt_db: 1.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderReport {
    pub kernel: String,
    pub machine_digest: String,
    pub machine: MachineConfig,
    pub pipeline: PipelineSpec,
    pub rows: Vec<LadderRow>,
    pub reference: LadderReference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n_elements: u32,
    pub single_thread_us: f64,
    pub multi_thread_us: f64,
    pub speedup: f64,
    pub single_cycles: u64,
    pub multi_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReference {
    pub n_elements: u32,
    pub single_thread_us: f64,
    pub multi_thread_us: f64,
    pub speedup: f64,
}

impl Default for SweepReference {
    fn default() -> Self {
        SweepReference {
            n_elements: 1_048_576,
            single_thread_us: 12_947.0,
            multi_thread_us: 3_313.0,
            speedup: 3.91,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub kernel: String,
    pub machine_digest: String,
    pub machine: MachineConfig,
    /// Grid used; recorded because it is a run choice.
    pub sizes: Vec<u32>,
    pub points: Vec<SweepPoint>,
    pub reference: SweepReference,
}

/// Speedup of two reported latencies, re-rounded so the CSV is
/// self-consistent.
pub fn reported_speedup(base_us: f64, us: f64) -> f64 {
    if us == 0.0 {
        return 1.0;
    }
    round3(base_us / us)
}

/// Output of one rung on one kernel.
#[derive(Debug, Clone)]
pub struct RungRun {
    pub module: TileModule,
    pub outputs: Arrays,
    pub timing: TimingReport,
}

/// Build, transform, verify against `cfg`, and simulate one rung.
pub fn run_rung(
    kernel: &KernelSpec,
    cfg: &MachineConfig,
    pipeline: &PipelineSpec,
    rung: LadderRung,
    inputs: &Arrays,
) -> Result<RungRun, BenchError> {
    let base = build_kernel(kernel, cfg)?;
    let spec = PipelineSpec { rung, ..*pipeline };
    let named = |source| BenchError::Pass {
        rung: rung.name().into(),
        source,
    };
    let module = run_pipeline(&base, &spec).map_err(named)?;
    if let Some(d) = verify_module(&module, cfg).first() {
        return Err(BenchError::Verify {
            rung: rung.name().into(),
            first: d.to_string(),
        });
    }
    let (outputs, timing) =
        simulate_timed(&module, inputs, cfg).map_err(|source| BenchError::Sim {
            rung: rung.name().into(),
            source,
        })?;
    Ok(RungRun {
        module,
        outputs,
        timing,
    })
}

/// Compares two output sets: exact for vec-add, relative tolerance for GELU.
pub fn compare_outputs(kind: KernelKind, got: &Arrays, want: &Arrays) -> Result<(), String> {
    for (name, w) in want {
        let g = got
            .get(name)
            .ok_or_else(|| format!("missing output {name}"))?;
        if g.len() != w.len() {
            return Err(format!(
                "{name}: {} elements, expected {}",
                g.len(),
                w.len()
            ));
        }
        for (i, (&a, &b)) in g.iter().zip(w).enumerate() {
            let ok = match kind {
                KernelKind::VecAdd2d => a.to_bits() == b.to_bits() || a == b,
                KernelKind::Gelu => {
                    let (a, b) = (f64::from(a), f64::from(b));
                    (a - b).abs() <= GELU_REL_TOL * a.abs().max(b.abs())
                }
            };
            if !ok {
                return Err(format!("{name}[{i}] = {a}, expected {b}"));
            }
        }
    }
    Ok(())
}

fn validate(
    kernel: &KernelSpec,
    cfg: &MachineConfig,
    pipeline: &PipelineSpec,
) -> Result<(), BenchError> {
    cfg.validate()?;
    if pipeline.lanes != cfg.lanes || pipeline.mt.threads != cfg.threads {
        return Err(BenchError::Usage(
            "pipeline lanes/threads must match the machine configuration".into(),
        ));
    }
    build_kernel(kernel, cfg)?;
    Ok(())
}

/// Runs all four rungs (in parallel), gates every rung's outputs against the
/// scalar rung, and reports latencies in ladder order.
pub fn run_ladder(
    kernel: &KernelSpec,
    cfg: &MachineConfig,
    pipeline: &PipelineSpec,
) -> Result<LadderReport, BenchError> {
    validate(kernel, cfg, pipeline)?;
    let inputs = generate_inputs(kernel);
    let runs: Vec<Result<RungRun, BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = LadderRung::ALL
            .iter()
            .map(|&rung| {
                let inputs = &inputs;
                s.spawn(move || run_rung(kernel, cfg, pipeline, rung, inputs))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rung worker panicked"))
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let stats = KernelStats::from_module(&build_kernel(kernel, cfg)?).map_err(|source| {
        BenchError::Pass {
            rung: LadderRung::Scalar.name().into(),
            source,
        }
    })?;
    let scalar_out = &runs[0].outputs;
    let scalar_us = cycles_to_us(runs[0].timing.total_cycles, cfg);
    let mut rows = Vec::with_capacity(runs.len());
    for (rung, run) in LadderRung::ALL.into_iter().zip(&runs) {
        compare_outputs(kernel.kind, &run.outputs, scalar_out).map_err(|detail| {
            BenchError::Mismatch {
                rung: rung.name().into(),
                detail,
            }
        })?;
        let latency_us = cycles_to_us(run.timing.total_cycles, cfg);
        rows.push(LadderRow {
            rung,
            latency_us,
            speedup_vs_scalar: if rung == LadderRung::Scalar {
                1.0
            } else {
                reported_speedup(scalar_us, latency_us)
            },
            cycles: run.timing.total_cycles,
            lower_bound_cycles: latency_lower_bound(&stats, cfg, rung),
            timing: run.timing.clone(),
        });
    }
    Ok(LadderReport {
        kernel: kernel.label(),
        machine_digest: cfg.digest(),
        machine: cfg.clone(),
        pipeline: *pipeline,
        rows,
        reference: LadderReference::default(),
    })
}

/// Runs the single-threaded (Vec) and multi-threaded (VecMT) arms at each
/// size. `kernel` supplies everything but the element count.
pub fn run_sweep(
    kernel: &KernelSpec,
    sizes: &[u32],
    cfg: &MachineConfig,
    pipeline: &PipelineSpec,
) -> Result<SweepReport, BenchError> {
    if kernel.kind != KernelKind::Gelu {
        return Err(BenchError::Usage(
            "sweep is defined for the gelu kernel only".into(),
        ));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Usage(
            "sweep sizes must be nonempty and strictly increasing".into(),
        ));
    }
    let specs: Vec<KernelSpec> = sizes
        .iter()
        .map(|&n| KernelSpec {
            rows: 1,
            cols: n,
            ..*kernel
        })
        .collect();
    for spec in &specs {
        validate(spec, cfg, pipeline)?;
    }
    let arms = [LadderRung::Vec, LadderRung::VecMt];
    let runs: Vec<Result<[RungRun; 2], BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| {
                s.spawn(move || {
                    let inputs = generate_inputs(spec);
                    let single = run_rung(spec, cfg, pipeline, arms[0], &inputs)?;
                    let multi = run_rung(spec, cfg, pipeline, arms[1], &inputs)?;
                    compare_outputs(spec.kind, &multi.outputs, &single.outputs).map_err(
                        |detail| BenchError::Mismatch {
                            rung: arms[1].name().into(),
                            detail,
                        },
                    )?;
                    Ok([single, multi])
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut points = Vec::with_capacity(sizes.len());
    for (&n, run) in sizes.iter().zip(runs) {
        let [single, multi] = run?;
        let single_us = cycles_to_us(single.timing.total_cycles, cfg);
        let multi_us = cycles_to_us(multi.timing.total_cycles, cfg);
        points.push(SweepPoint {
            n_elements: n,
            single_thread_us: single_us,
            multi_thread_us: multi_us,
            speedup: reported_speedup(single_us, multi_us),
            single_cycles: single.timing.total_cycles,
            multi_cycles: multi.timing.total_cycles,
        });
    }
    Ok(SweepReport {
        kernel: kernel.kind.name().into(),
        machine_digest: cfg.digest(),
        machine: cfg.clone(),
        sizes: sizes.to_vec(),
        points,
        reference: SweepReference::default(),
    })
}

pub fn ladder_json(r: &LadderReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}

pub fn sweep_json(r: &SweepReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}
