#ifndef CHUNKPLAN_H
#define CHUNKPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpDevice {
  CP_DEVICE_GPU = 0,
  CP_DEVICE_CPU = 1,
} CpDevice;

// Result codes. Zero is success.
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  CP_STATUS_NULL_POINTER = 1,
  CP_STATUS_INVALID_UTF8 = 2,
  CP_STATUS_PARSE = 3,
  CP_STATUS_VALIDATION = 4,
  CP_STATUS_CONSISTENCY = 5,
  CP_STATUS_INFEASIBLE = 6,
  CP_STATUS_UNDEFINED_STRATEGY = 7,
  CP_STATUS_INVALID_ARGUMENT = 8,
  CP_STATUS_IO = 9,
  CP_STATUS_PANIC = 10,
} CpStatus;

typedef enum CpStrategy {
  CP_STRATEGY_DDP = 0,
  CP_STRATEGY_ZERO1 = 1,
  CP_STRATEGY_ZERO2 = 2,
  CP_STRATEGY_ZERO3 = 3,
  CP_STRATEGY_RCACHE_MAX = 4,
  CP_STRATEGY_RCACHE_MIN = 5,
} CpStrategy;

// Opaque hardware profile handle.
typedef struct CpHardwareProfile CpHardwareProfile;

// Opaque model profile handle.
typedef struct CpModelProfile CpModelProfile;

// Opaque plan handle.
typedef struct CpPlan CpPlan;

// Byte widths of compute values and optimizer states.
typedef struct CpPrecision {
  uint64_t compute_bytes;
  uint64_t optimizer_bytes;
  uint64_t optimizer_factor;
} CpPrecision;

// Planner knobs. `u_allowed` is used only when `has_u_allowed` is true.
typedef struct CpPlanOptions {
  double f_alloc;
  double f_frag;
  bool has_u_allowed;
  uint64_t u_allowed;
  size_t grid_points;
} CpPlanOptions;

typedef struct CpPlanSummary {
  uint64_t chunk_length;
  size_t n_block;
  size_t n_chunks;
  size_t working_set_blocks;
  size_t gpu_chunks;
  uint32_t gpu_count;
  uint64_t u_allowed;
  uint64_t total_bytes;
  double waste_rate;
  double benefit_rcache_block;
  double benefit_chunk_upload;
  bool upload_first;
  bool fallback;
  // When false the traffic fields below are zero.
  bool has_estimates;
  uint64_t g2g_bytes;
  uint64_t g2c_bytes;
  uint64_t c2g_bytes;
  double estimated_seconds;
} CpPlanSummary;

typedef struct CpCostRow {
  uint64_t gpu_mem_per_gpu;
  uint64_t g2c_comm;
  uint64_t g2g_comm;
} CpCostRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or NULL if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *cp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *cp_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void cp_string_free(char *s);

struct CpPrecision cp_precision_default(void);

struct CpPlanOptions cp_plan_options_default(void);

// Parses a model profile document.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum CpStatus cp_model_profile_load_json(const char *json, struct CpModelProfile **out);

// Synthesizes a GPT-2 style profile. Zero for `vocab`, `seq_len` or `batch` selects the default.
//
// # Safety
// `out` must be writable.
enum CpStatus cp_model_profile_synthesize(uint64_t hidden,
                                          uint64_t layers,
                                          uint64_t heads,
                                          uint64_t vocab,
                                          uint64_t seq_len,
                                          uint64_t batch,
                                          struct CpModelProfile **out);

// # Safety
// `profile` must be NULL or a live handle from this library.
void cp_model_profile_free(struct CpModelProfile *profile);

// # Safety
// `profile` must be a live handle; `out` must be writable.
enum CpStatus cp_model_profile_total_elements(const struct CpModelProfile *profile, uint64_t *out);

// Parses a hardware profile document (rates in GB/s).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum CpStatus cp_hardware_profile_load_json(const char *json, struct CpHardwareProfile **out);

// The bundled 4 x 80 GB A100 development server profile.
//
// # Safety
// `out` must be writable.
enum CpStatus cp_hardware_profile_dev_server(struct CpHardwareProfile **out);

// Selects the data-parallel GPU count used by later calls.
//
// # Safety
// `hw` must be a live handle.
enum CpStatus cp_hardware_profile_set_gpu_count(struct CpHardwareProfile *hw, uint32_t gpus);

// # Safety
// `hw` must be NULL or a live handle from this library.
void cp_hardware_profile_free(struct CpHardwareProfile *hw);

// Runs the configuration search. `options` may be NULL for defaults.
//
// A plan whose working set does not fit is still returned, with
// `fallback` set in its summary.
//
// # Safety
// `profile` and `hw` must be live handles; `out` must be writable.
enum CpStatus cp_plan_build(const struct CpModelProfile *profile,
                            const struct CpHardwareProfile *hw,
                            struct CpPrecision precision,
                            const struct CpPlanOptions *options,
                            struct CpPlan **out);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum CpStatus cp_plan_load_json(const char *json, struct CpPlan **out);

// Serializes a plan; free the result with [`cp_string_free`].
//
// # Safety
// `plan` must be a live handle; `out` must be writable.
enum CpStatus cp_plan_to_json(const struct CpPlan *plan, char **out);

// # Safety
// `plan` must be a live handle; `out` must be writable.
enum CpStatus cp_plan_summary(const struct CpPlan *plan, struct CpPlanSummary *out);

// Home device of chunk `chunk`.
//
// # Safety
// `plan` must be a live handle; `out` must be writable.
enum CpStatus cp_plan_chunk_home(const struct CpPlan *plan, size_t chunk, enum CpDevice *out);

// # Safety
// `plan` must be NULL or a live handle from this library.
void cp_plan_free(struct CpPlan *plan);

// Per-GPU memory and communication of one strategy.
//
// `epsilon_bytes` is only read for offloaded ZeRO-3 and must then be positive.
//
// # Safety
// `out` must be writable.
enum CpStatus cp_strategy_costs(enum CpStrategy strategy,
                                bool offload,
                                uint64_t epsilon_bytes,
                                uint64_t model_elements,
                                uint64_t gpus,
                                uint64_t aggregate_chunk_elements,
                                uint64_t chunk_length,
                                struct CpPrecision precision,
                                struct CpCostRow *out);

// Normalized benefit of one more rCache block with `n` processes.
//
// # Safety
// `hw` must be a live handle; `out` must be writable.
enum CpStatus cp_benefit_i(const struct CpHardwareProfile *hw,
                           uint32_t n,
                           uint64_t chunk_length,
                           struct CpPrecision precision,
                           double *out);

// Normalized benefit of keeping one more chunk on GPU with `n` processes.
//
// # Safety
// `hw` must be a live handle; `out` must be writable.
enum CpStatus cp_benefit_j(const struct CpHardwareProfile *hw,
                           uint32_t n,
                           uint64_t chunk_length,
                           struct CpPrecision precision,
                           double *out);

// # Safety
// `out` must be writable.
enum CpStatus cp_allowed_memory(uint64_t capacity_bytes,
                                uint64_t buffer_bytes,
                                uint64_t activation_bytes,
                                double f_alloc,
                                double f_frag,
                                uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHUNKPLAN_H */
