#ifndef DLHARMONIZE_H
#define DLHARMONIZE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 1–8 mirror the library error codes.
 */
typedef enum DlhStatus {
  DLH_STATUS_OK = 0,
  DLH_STATUS_IO = 1,
  DLH_STATUS_FORMAT = 2,
  DLH_STATUS_ARGUMENT = 3,
  DLH_STATUS_EXTRACTION = 4,
  DLH_STATUS_INIT = 5,
  DLH_STATUS_FIT = 6,
  DLH_STATUS_DEGENERATE = 7,
  DLH_STATUS_EVALUATION = 8,
  DLH_STATUS_NULL_POINTER = 9,
  DLH_STATUS_INVALID_UTF8 = 10,
  DLH_STATUS_PANIC = 11,
} DlhStatus;

/**
 * Lambda selection rule for [`dlh_sparse_code`].
 */
typedef enum DlhSelection {
  DLH_SELECTION_AIC = 0,
  DLH_SELECTION_CV = 1,
} DlhSelection;

/**
 * A loaded 4D volume with its gradient table and brain mask.
 */
typedef struct DlhDataset DlhDataset;

/**
 * A trained or loaded dictionary.
 */
typedef struct DlhDictionary DlhDictionary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlh_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread; do not free.
 */
const char *dlh_last_error(void);

/**
 * Loads a NIfTI volume, FSL bvals/bvecs and a mask.
 *
 * # Safety
 * Path arguments must be valid NUL-terminated strings; `out` must be writable.
 */
enum DlhStatus dlh_dataset_load(const char *input,
                                const char *bvals,
                                const char *bvecs,
                                const char *mask,
                                struct DlhDataset **out);

/**
 * Writes the 4D shape (x, y, z, volumes) into `dims[0..4]`.
 *
 * # Safety
 * `ds` must come from [`dlh_dataset_load`]; `dims` must hold four values.
 */
enum DlhStatus dlh_dataset_shape(const struct DlhDataset *ds, size_t *dims);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void dlh_dataset_free(struct DlhDataset *ds);

/**
 * # Safety
 * `path_` must be a valid NUL-terminated string; `out` must be writable.
 */
enum DlhStatus dlh_dictionary_read(const char *path_, struct DlhDictionary **out);

/**
 * # Safety
 * `d` must be a live handle; `path_` a valid NUL-terminated string.
 */
enum DlhStatus dlh_dictionary_write(const struct DlhDictionary *d, const char *path_);

/**
 * Atom length `m` and atom count `p`.
 *
 * # Safety
 * `d` must be a live handle; `m` and `p` must be writable.
 */
enum DlhStatus dlh_dictionary_dims(const struct DlhDictionary *d, size_t *m, size_t *p);

/**
 * # Safety
 * `d` must be null or a handle not yet freed.
 */
void dlh_dictionary_free(struct DlhDictionary *d);

/**
 * Trains a dictionary on the pooled patches of `n` datasets. `config_json`
 * is a run configuration in the command-line tool's format, or null.
 *
 * # Safety
 * `datasets` must point to `n` live handles; `out` must be writable.
 */
enum DlhStatus dlh_train(const struct DlhDataset *const *datasets,
                         size_t n,
                         const char *config_json,
                         struct DlhDictionary **out);

/**
 * Reconstructs `ds` with `d` and writes the result to `out_path` (NIfTI).
 *
 * # Safety
 * Handles must be live; strings valid and NUL-terminated (`config_json` may be null).
 */
enum DlhStatus dlh_harmonize(const struct DlhDictionary *d,
                             const struct DlhDataset *ds,
                             const char *config_json,
                             const char *out_path);

/**
 * Sparse-codes one signal `x` (length `m`) against the atoms of `d`, writing
 * `p` coefficients to `alpha` and the selected λ and nonzero count to
 * `lambda` and `df` (either may be null).
 *
 * # Safety
 * `x` must hold `x_len` values and `alpha` `alpha_len` writable values.
 */
enum DlhStatus dlh_sparse_code(const struct DlhDictionary *d,
                               const double *x,
                               size_t x_len,
                               enum DlhSelection selection,
                               uint64_t seed,
                               double *alpha,
                               size_t alpha_len,
                               double *lambda,
                               size_t *df);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLHARMONIZE_H */
