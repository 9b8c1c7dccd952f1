#ifndef TILELAB_H
#define TILELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_ARGUMENT = 1,
  TL_STATUS_INVALID_UTF8 = 2,
  TL_STATUS_INVALID_ARGUMENT = 3,
  TL_STATUS_CONFIG = 4,
  TL_STATUS_KERNEL = 5,
  TL_STATUS_PASS = 6,
  TL_STATUS_VERIFY = 7,
  TL_STATUS_SIMULATION = 8,
  TL_STATUS_MISMATCH = 9,
  TL_STATUS_PANIC = 10,
} TlStatus;

/**
 * Machine configuration.
 */
typedef struct TlMachine TlMachine;

/**
 * A tile module together with the kernel it was built from.
 */
typedef struct TlModule TlModule;

/**
 * Timing of one simulated run.
 */
typedef struct TlTiming TlTiming;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *tl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tl_version(void);

/**
 * Default machine configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum TlStatus tl_machine_default(struct TlMachine **out);

/**
 * Machine configuration from JSON; missing keys take their defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` as in [`tl_machine_default`].
 */
enum TlStatus tl_machine_from_json(const char *json, struct TlMachine **out);

/**
 * Serializes the configuration as JSON. Release with [`tl_string_free`].
 *
 * # Safety
 * `machine` must be a live handle; `out` a valid pointer.
 */
enum TlStatus tl_machine_to_json(const struct TlMachine *machine, char **out);

/**
 * # Safety
 * `machine` must be null or a handle not yet freed.
 */
void tl_machine_free(struct TlMachine *machine);

/**
 * Builds the untransformed module of a kernel. `kernel` is `vec-add-2d` or
 * `gelu` with default sizes; `spec_json`, if not null, is a full kernel
 * specification that overrides them.
 *
 * # Safety
 * `kernel` must be a NUL-terminated string, `spec_json` null or one,
 * `machine` a live handle and `out` a valid pointer.
 */
enum TlStatus tl_kernel_build(const char *kernel,
                              const char *spec_json,
                              uint64_t seed,
                              const struct TlMachine *machine,
                              struct TlModule **out);

/**
 * Applies the passes of `rung` (`scalar`, `vec`, `vec-mt`, `vec-mt-db`) to
 * a freshly built module and writes the transformed module to `out`.
 *
 * # Safety
 * `module` and `machine` must be live handles, `rung` a NUL-terminated
 * string and `out` a valid pointer.
 */
enum TlStatus tl_module_run_pipeline(const struct TlModule *module,
                                     const struct TlMachine *machine,
                                     const char *rung,
                                     struct TlModule **out);

/**
 * Textual form of the module. Release with [`tl_string_free`].
 *
 * # Safety
 * `module` must be a live handle; `out` a valid pointer.
 */
enum TlStatus tl_module_print(const struct TlModule *module, char **out);

/**
 * Simulates the module on the kernel's seeded inputs, checks the outputs
 * against the double-precision reference, and returns the timing.
 *
 * # Safety
 * `module` and `machine` must be live handles; `out` a valid pointer.
 */
enum TlStatus tl_module_simulate(const struct TlModule *module,
                                 const struct TlMachine *machine,
                                 struct TlTiming **out);

/**
 * Builds, transforms, verifies and simulates one rung in a single call.
 *
 * # Safety
 * As for [`tl_kernel_build`] and [`tl_module_simulate`].
 */
enum TlStatus tl_run_rung(const char *kernel,
                          uint64_t seed,
                          const struct TlMachine *machine,
                          const char *rung,
                          struct TlTiming **out);

/**
 * # Safety
 * `module` must be null or a handle not yet freed.
 */
void tl_module_free(struct TlModule *module);

/**
 * Total simulated cycles; 0 for a null handle.
 *
 * # Safety
 * `timing` must be null or a live handle.
 */
uint64_t tl_timing_cycles(const struct TlTiming *timing);

/**
 * Total simulated latency in microseconds; 0 for a null handle.
 *
 * # Safety
 * `timing` must be null or a live handle.
 */
double tl_timing_us(const struct TlTiming *timing);

/**
 * Cycles the DMA channel was busy; 0 for a null handle.
 *
 * # Safety
 * `timing` must be null or a live handle.
 */
uint64_t tl_timing_dma_busy(const struct TlTiming *timing);

/**
 * # Safety
 * `timing` must be null or a handle not yet freed.
 */
void tl_timing_free(struct TlTiming *timing);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned by a `tl_*` function, not yet freed.
 */
void tl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TILELAB_H */
