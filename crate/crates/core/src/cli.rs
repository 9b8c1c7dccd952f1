//! `tilelab` command line: ladder, sweep, dump-ir, verify.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{
    compare_outputs, default_sweep_sizes, ladder_csv, ladder_json, ladder_svg, run_ladder,
    run_rung, run_sweep, sweep_csv, sweep_json, sweep_latency_svg, sweep_speedup_svg,
};
use crate::error::BenchError;
use crate::ir::{print_module, DistPolicy};
use crate::kernels::{build_kernel, generate_inputs, reference_output, KernelKind, KernelSpec};
use crate::passes::{run_passes, LadderRung, MtProfitability, PassKind, PipelineSpec};
use crate::sim::{interpret_functional, MachineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "tilelab",
    version,
    about = "Tile IR passes on a timed NPU simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run Scalar, Vec, Vec+MT and Vec+MT+DB on one kernel.
    Ladder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of csv,json,svg.
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<Format>,
        /// Run N times and require identical reports.
        #[arg(long, default_value_t = 1)]
        repeat: u32,
    },
    /// Single- vs multi-threaded latency over a size grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated element counts, strictly increasing.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<Format>,
        #[arg(long, default_value_t = 1)]
        repeat: u32,
    },
    /// Print the module after a rung's passes (or after one stage of them).
    DumpIr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rung: String,
        #[arg(long)]
        stage: Option<String>,
    },
    /// Check a rung's outputs against the double-precision reference.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rung: String,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// vec-add-2d or gelu.
    #[arg(long)]
    kernel: String,
    /// Machine configuration JSON; defaults apply to missing keys.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Kernel specification JSON overriding the kernel's defaults.
    #[arg(long)]
    kernel_spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Auto)]
    policy: PolicyArg,
    #[arg(long)]
    min_tiles: Option<u32>,
    #[arg(long)]
    min_total_elements: Option<u64>,
    /// Keep the double-buffered storeback synchronous.
    #[arg(long)]
    sync_storeback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Auto,
    Block,
    BlockCyclic,
}

struct Resolved {
    kernel: KernelSpec,
    cfg: MachineConfig,
    pipeline: PipelineSpec,
}

fn usage(msg: impl Into<String>) -> BenchError {
    BenchError::Usage(msg.into())
}

fn resolve(c: &Common) -> Result<Resolved, BenchError> {
    let kind = KernelKind::parse(&c.kernel)
        .ok_or_else(|| usage(format!("unknown kernel {:?}", c.kernel)))?;
    let cfg = match &c.machine {
        Some(p) => MachineConfig::from_json(&fs::read_to_string(p)?)?,
        None => MachineConfig::default(),
    };
    let mut kernel = match &c.kernel_spec {
        Some(p) => serde_json::from_str::<KernelSpec>(&fs::read_to_string(p)?)
            .map_err(|e| usage(format!("kernel spec: {e}")))?,
        None => KernelSpec::default_for(kind),
    };
    if kernel.kind != kind {
        return Err(usage("--kernel does not match the kernel spec file"));
    }
    if let Some(seed) = c.seed {
        kernel.seed = seed;
    }
    let mut pipeline = PipelineSpec::for_machine(LadderRung::Scalar, &cfg);
    pipeline.mt.kind = match c.policy {
        PolicyArg::Auto => None,
        PolicyArg::Block => Some(DistPolicy::Block),
        PolicyArg::BlockCyclic => Some(DistPolicy::BlockCyclic),
    };
    let defaults = MtProfitability::default();
    pipeline.prof = MtProfitability {
        min_tiles: c.min_tiles.unwrap_or(defaults.min_tiles),
        min_total_elements: c.min_total_elements.unwrap_or(defaults.min_total_elements),
    };
    if pipeline.prof.min_tiles == 0 || pipeline.prof.min_total_elements == 0 {
        return Err(usage("profitability thresholds must be >= 1"));
    }
    pipeline.db_storeback_async = !c.sync_storeback;
    Ok(Resolved {
        kernel,
        cfg,
        pipeline,
    })
}

fn rung(name: &str) -> Result<LadderRung, BenchError> {
    LadderRung::parse(name).ok_or_else(|| {
        usage(format!(
            "unknown rung {name:?} (scalar, vec, vec-mt, vec-mt-db)"
        ))
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), BenchError> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn repeated<T: PartialEq>(
    repeat: u32,
    mut run: impl FnMut() -> Result<T, BenchError>,
) -> Result<T, BenchError> {
    let first = run()?;
    for _ in 1..repeat {
        if run()? != first {
            return Err(BenchError::Mismatch {
                rung: "all".into(),
                detail: "repeated run produced a different report".into(),
            });
        }
    }
    Ok(first)
}

fn execute(cmd: Command) -> Result<i32, BenchError> {
    match cmd {
        Command::Ladder {
            common,
            out,
            format,
            repeat,
        } => {
            let r = resolve(&common)?;
            let report = repeated(repeat, || run_ladder(&r.kernel, &r.cfg, &r.pipeline))?;
            fs::create_dir_all(&out)?;
            let csv = ladder_csv(&report);
            for f in &format {
                match f {
                    Format::Csv => write(&out, "ladder.csv", &csv)?,
                    Format::Json => write(&out, "ladder.json", &ladder_json(&report))?,
                    Format::Svg => write(&out, "ladder.svg", &ladder_svg(&report))?,
                }
            }
            print!("{csv}");
            Ok(EXIT_OK)
        }
        Command::Sweep {
            common,
            out,
            sizes,
            format,
            repeat,
        } => {
            let r = resolve(&common)?;
            if r.kernel.kind != KernelKind::Gelu {
                return Err(usage("sweep is defined for --kernel gelu only"));
            }
            let sizes = sizes.unwrap_or_else(default_sweep_sizes);
            let report = repeated(repeat, || run_sweep(&r.kernel, &sizes, &r.cfg, &r.pipeline))?;
            fs::create_dir_all(&out)?;
            let csv = sweep_csv(&report);
            for f in &format {
                match f {
                    Format::Csv => write(&out, "sweep.csv", &csv)?,
                    Format::Json => write(&out, "sweep.json", &sweep_json(&report))?,
                    Format::Svg => {
                        write(&out, "sweep_latency.svg", &sweep_latency_svg(&report))?;
                        write(&out, "sweep_speedup.svg", &sweep_speedup_svg(&report))?;
                    }
                }
            }
            print!("{csv}");
            Ok(EXIT_OK)
        }
        Command::DumpIr {
            common,
            rung: name,
            stage,
        } => {
            let r = resolve(&common)?;
            let rung = rung(&name)?;
            let passes = rung.passes();
            let upto = match stage {
                None => passes.len(),
                Some(s) => {
                    let kind =
                        PassKind::parse(&s).ok_or_else(|| usage(format!("unknown stage {s:?}")))?;
                    1 + passes
                        .iter()
                        .position(|p| *p == kind)
                        .ok_or_else(|| usage(format!("rung {rung} does not run stage {s}")))?
                }
            };
            let base = build_kernel(&r.kernel, &r.cfg)?;
            let spec = PipelineSpec { rung, ..r.pipeline };
            let m =
                run_passes(&base, &passes[..upto], &spec).map_err(|source| BenchError::Pass {
                    rung: rung.name().into(),
                    source,
                })?;
            print!("{}", print_module(&m));
            Ok(EXIT_OK)
        }
        Command::Verify { common, rung: name } => {
            let r = resolve(&common)?;
            let rung = rung(&name)?;
            let inputs = generate_inputs(&r.kernel);
            let want = reference_output(&r.kernel, &inputs)?;
            let run = match run_rung(&r.kernel, &r.cfg, &r.pipeline, rung, &inputs) {
                Ok(run) => run,
                Err(e @ (BenchError::Usage(_) | BenchError::Config(_) | BenchError::Kernel(_))) => {
                    return Err(e)
                }
                Err(e) => {
                    eprintln!("verify {rung}: FAIL: {e}");
                    return Ok(EXIT_FAILURE);
                }
            };
            let functional = interpret_functional(&run.module, &inputs);
            let checks = [
                ("timed", Ok(run.outputs)),
                ("functional", functional.map_err(|e| e.to_string())),
            ];
            for (what, got) in checks {
                if let Err(detail) = got.and_then(|g| compare_outputs(r.kernel.kind, &g, &want)) {
                    eprintln!("verify {rung}: FAIL ({what}): {detail}");
                    return Ok(EXIT_FAILURE);
                }
            }
            println!("verify {rung}: ok ({})", r.kernel.label());
            Ok(EXIT_OK)
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code: 0 success, 1 verification or run failure, 2 usage.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                BenchError::Usage(_) | BenchError::Config(_) | BenchError::Kernel(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}
