//! C ABI over the tilelab kernel builders, pass pipeline and timed
//! simulator.
//!
//! Every function returns a [`TlStatus`]. On failure the message is kept
//! per thread and can be read with [`tl_last_error`]. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use tilelab::bench::{compare_outputs, run_rung};
use tilelab::ir::{print_module, TileModule};
use tilelab::kernels::{build_kernel, generate_inputs, reference_output, KernelKind, KernelSpec};
use tilelab::passes::{run_pipeline, LadderRung, PipelineSpec};
use tilelab::sim::{simulate_timed, MachineConfig, TimingReport};
use tilelab::{BenchError, PassError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Kernel = 5,
    Pass = 6,
    Verify = 7,
    Simulation = 8,
    Mismatch = 9,
    Panic = 10,
}

/// Machine configuration.
pub struct TlMachine {
    cfg: MachineConfig,
}

/// A tile module together with the kernel it was built from.
pub struct TlModule {
    kernel: KernelSpec,
    module: TileModule,
}

/// Timing of one simulated run.
pub struct TlTiming {
    report: TimingReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(bytes).unwrap_or_default());
}

type Failure = (TlStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TlStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside tilelab");
            TlStatus::Panic
        }
    }
}

fn bench_failure(e: BenchError) -> Failure {
    let status = match &e {
        BenchError::Config(_) => TlStatus::Config,
        BenchError::Kernel(_) => TlStatus::Kernel,
        BenchError::Pass { .. } => TlStatus::Pass,
        BenchError::Verify { .. } => TlStatus::Verify,
        BenchError::Sim { .. } => TlStatus::Simulation,
        BenchError::Mismatch { .. } => TlStatus::Mismatch,
        BenchError::Usage(_) | BenchError::Io(_) => TlStatus::InvalidArgument,
    };
    (status, e.to_string())
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((TlStatus::NullArgument, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (TlStatus::InvalidUtf8, e.to_string()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or((TlStatus::NullArgument, "null handle".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err((TlStatus::NullArgument, "null output pointer".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err((TlStatus::NullArgument, "null output pointer".into()));
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default machine configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tl_machine_default(out: *mut *mut TlMachine) -> TlStatus {
    guard(|| {
        put(
            out,
            TlMachine {
                cfg: MachineConfig::default(),
            },
        )
    })
}

/// Machine configuration from JSON; missing keys take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` as in [`tl_machine_default`].
#[no_mangle]
pub unsafe extern "C" fn tl_machine_from_json(
    json: *const c_char,
    out: *mut *mut TlMachine,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let cfg =
            MachineConfig::from_json(text(json)?).map_err(|e| (TlStatus::Config, e.to_string()))?;
        put(out, TlMachine { cfg })
    })
}

/// Serializes the configuration as JSON. Release with [`tl_string_free`].
///
/// # Safety
/// `machine` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_machine_to_json(
    machine: *const TlMachine,
    out: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let m = handle(machine)?;
        *out = CString::new(m.cfg.to_json()).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// # Safety
/// `machine` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_machine_free(machine: *mut TlMachine) {
    if !machine.is_null() {
        drop(Box::from_raw(machine));
    }
}

/// Builds the untransformed module of a kernel. `kernel` is `vec-add-2d` or
/// `gelu` with default sizes; `spec_json`, if not null, is a full kernel
/// specification that overrides them.
///
/// # Safety
/// `kernel` must be a NUL-terminated string, `spec_json` null or one,
/// `machine` a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_kernel_build(
    kernel: *const c_char,
    spec_json: *const c_char,
    seed: u64,
    machine: *const TlMachine,
    out: *mut *mut TlModule,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let name = text(kernel)?;
        let kind = KernelKind::parse(name).ok_or_else(|| {
            (
                TlStatus::InvalidArgument,
                format!("unknown kernel {name:?}"),
            )
        })?;
        let spec = if spec_json.is_null() {
            KernelSpec::default_for(kind)
        } else {
            let s: KernelSpec = serde_json::from_str(text(spec_json)?)
                .map_err(|e| (TlStatus::Kernel, e.to_string()))?;
            if s.kind != kind {
                return Err((
                    TlStatus::InvalidArgument,
                    "kernel name does not match the spec".into(),
                ));
            }
            s
        }
        .with_seed(seed);
        let cfg = &handle(machine)?.cfg;
        let module = build_kernel(&spec, cfg).map_err(|e| (TlStatus::Kernel, e.to_string()))?;
        put(
            out,
            TlModule {
                kernel: spec,
                module,
            },
        )
    })
}

/// Applies the passes of `rung` (`scalar`, `vec`, `vec-mt`, `vec-mt-db`) to
/// a freshly built module and writes the transformed module to `out`.
///
/// # Safety
/// `module` and `machine` must be live handles, `rung` a NUL-terminated
/// string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_module_run_pipeline(
    module: *const TlModule,
    machine: *const TlMachine,
    rung: *const c_char,
    out: *mut *mut TlModule,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let m = handle(module)?;
        let cfg = &handle(machine)?.cfg;
        let name = text(rung)?;
        let rung = LadderRung::parse(name)
            .ok_or_else(|| (TlStatus::InvalidArgument, format!("unknown rung {name:?}")))?;
        let transformed = run_pipeline(&m.module, &PipelineSpec::for_machine(rung, cfg)).map_err(
            |e| match e {
                PassError::Verify(_) => (TlStatus::Verify, e.to_string()),
                _ => (TlStatus::Pass, e.to_string()),
            },
        )?;
        put(
            out,
            TlModule {
                kernel: m.kernel,
                module: transformed,
            },
        )
    })
}

/// Textual form of the module. Release with [`tl_string_free`].
///
/// # Safety
/// `module` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_module_print(
    module: *const TlModule,
    out: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let m = handle(module)?;
        *out = CString::new(print_module(&m.module))
            .unwrap_or_default()
            .into_raw();
        Ok(())
    })
}

/// Simulates the module on the kernel's seeded inputs, checks the outputs
/// against the double-precision reference, and returns the timing.
///
/// # Safety
/// `module` and `machine` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_module_simulate(
    module: *const TlModule,
    machine: *const TlMachine,
    out: *mut *mut TlTiming,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let m = handle(module)?;
        let cfg = &handle(machine)?.cfg;
        let inputs = generate_inputs(&m.kernel);
        let want =
            reference_output(&m.kernel, &inputs).map_err(|e| (TlStatus::Kernel, e.to_string()))?;
        let (got, report) = simulate_timed(&m.module, &inputs, cfg)
            .map_err(|e| (TlStatus::Simulation, e.to_string()))?;
        compare_outputs(m.kernel.kind, &got, &want).map_err(|e| (TlStatus::Mismatch, e))?;
        put(out, TlTiming { report })
    })
}

/// Builds, transforms, verifies and simulates one rung in a single call.
///
/// # Safety
/// As for [`tl_kernel_build`] and [`tl_module_simulate`].
#[no_mangle]
pub unsafe extern "C" fn tl_run_rung(
    kernel: *const c_char,
    seed: u64,
    machine: *const TlMachine,
    rung: *const c_char,
    out: *mut *mut TlTiming,
) -> TlStatus {
    guard(|| {
        check_out(out)?;
        let name = text(kernel)?;
        let kind = KernelKind::parse(name).ok_or_else(|| {
            (
                TlStatus::InvalidArgument,
                format!("unknown kernel {name:?}"),
            )
        })?;
        let spec = KernelSpec::default_for(kind).with_seed(seed);
        let cfg = &handle(machine)?.cfg;
        let rname = text(rung)?;
        let rung = LadderRung::parse(rname)
            .ok_or_else(|| (TlStatus::InvalidArgument, format!("unknown rung {rname:?}")))?;
        let inputs = generate_inputs(&spec);
        let want =
            reference_output(&spec, &inputs).map_err(|e| (TlStatus::Kernel, e.to_string()))?;
        let run = run_rung(
            &spec,
            cfg,
            &PipelineSpec::for_machine(rung, cfg),
            rung,
            &inputs,
        )
        .map_err(bench_failure)?;
        compare_outputs(kind, &run.outputs, &want).map_err(|e| (TlStatus::Mismatch, e))?;
        put(out, TlTiming { report: run.timing })
    })
}

/// # Safety
/// `module` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_module_free(module: *mut TlModule) {
    if !module.is_null() {
        drop(Box::from_raw(module));
    }
}

/// Total simulated cycles; 0 for a null handle.
///
/// # Safety
/// `timing` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_timing_cycles(timing: *const TlTiming) -> u64 {
    timing.as_ref().map_or(0, |t| t.report.total_cycles)
}

/// Total simulated latency in microseconds; 0 for a null handle.
///
/// # Safety
/// `timing` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_timing_us(timing: *const TlTiming) -> f64 {
    timing.as_ref().map_or(0.0, |t| t.report.total_us)
}

/// Cycles the DMA channel was busy; 0 for a null handle.
///
/// # Safety
/// `timing` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_timing_dma_busy(timing: *const TlTiming) -> u64 {
    timing.as_ref().map_or(0, |t| t.report.dma_busy_cycles)
}

/// # Safety
/// `timing` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_timing_free(timing: *mut TlTiming) {
    if !timing.is_null() {
        drop(Box::from_raw(timing));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by a `tl_*` function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn errors_are_cleared_by_success() {
        set_error("boom\0tail");
        let msg = unsafe { CStr::from_ptr(tl_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "boomtail");
        let mut m = ptr::null_mut();
        assert_eq!(unsafe { tl_machine_default(&mut m) }, TlStatus::Ok);
        assert!(unsafe { CStr::from_ptr(tl_last_error()) }
            .to_bytes()
            .is_empty());
        unsafe { tl_machine_free(m) };
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("inside")), TlStatus::Panic);
    }
}
