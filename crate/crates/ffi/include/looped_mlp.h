#ifndef LOOPED_MLP_H
#define LOOPED_MLP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LmBackend {
  LM_BACKEND_MLP = 0,
  LM_BACKEND_MLP_LOWERED = 1,
  LM_BACKEND_ORACLE = 2,
} LmBackend;

typedef enum LmStatus {
  LM_STATUS_OK = 0,
  LM_STATUS_NULL_POINTER = 1,
  LM_STATUS_INVALID_UTF8 = 2,
  LM_STATUS_INVALID_ARGUMENT = 3,
  LM_STATUS_ASSEMBLY = 4,
  LM_STATUS_CONFIG = 5,
  LM_STATUS_RUNTIME = 6,
  LM_STATUS_PANIC = 7,
} LmStatus;

/**
 * Opaque machine handle.
 */
typedef struct LmMachine LmMachine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. Valid until
 * the next failing call on this thread.
 */
const char *lm_last_error_message(void);

/**
 * Assembles `source` (NUL-terminated) and loads it. `backend_id` is an
 * [`LmBackend`] value.
 *
 * # Safety
 * `source` must be a valid C string and `out` a valid pointer.
 */
enum LmStatus lm_machine_new(const char *source,
                             size_t w,
                             size_t d,
                             size_t k,
                             size_t m,
                             uint32_t backend_id,
                             struct LmMachine **out);

/**
 * One iteration. `halted` (optional) receives 1 if the PC is now at EOF.
 *
 * # Safety
 * `machine` must come from [`lm_machine_new`]; `halted` may be null.
 */
enum LmStatus lm_machine_step(struct LmMachine *machine, int32_t *halted);

/**
 * Runs until halted or `max_iters` iterations. Both out-pointers are optional.
 *
 * # Safety
 * `machine` must come from [`lm_machine_new`].
 */
enum LmStatus lm_machine_run(struct LmMachine *machine,
                             uint64_t max_iters,
                             uint64_t *iterations,
                             int32_t *halted);

/**
 * Value of data slot `slot`.
 *
 * # Safety
 * `machine` must come from [`lm_machine_new`] and `out` be valid.
 */
enum LmStatus lm_machine_read_word(const struct LmMachine *machine, size_t slot, int64_t *out);

/**
 * Value of the data slot declared as `name`.
 *
 * # Safety
 * `machine` must come from [`lm_machine_new`], `name` be a C string and
 * `out` be valid.
 */
enum LmStatus lm_machine_read_symbol(const struct LmMachine *machine,
                                     const char *name,
                                     int64_t *out);

/**
 * Current program counter (a unified slot index).
 *
 * # Safety
 * `machine` must come from [`lm_machine_new`] and `out` be valid.
 */
enum LmStatus lm_machine_pc(const struct LmMachine *machine, size_t *out);

/**
 * # Safety
 * `machine` must come from [`lm_machine_new`] and not be used afterwards.
 * Null is ignored.
 */
void lm_machine_free(struct LmMachine *machine);

/**
 * Counted layers of the SUBLEQ core at this configuration.
 *
 * # Safety
 * `out` must be valid.
 */
enum LmStatus lm_core_counted_layers(size_t w, size_t d, size_t k, size_t m, uint32_t *out);

/**
 * The core's weights as a JSON document, NUL-terminated; free with
 * [`lm_string_free`]. Nonzero `lowered` lowers gates first.
 *
 * # Safety
 * `out` must be valid.
 */
enum LmStatus lm_core_export_weights(size_t w,
                                     size_t d,
                                     size_t k,
                                     size_t m,
                                     int32_t lowered,
                                     char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void lm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOOPED_MLP_H */
