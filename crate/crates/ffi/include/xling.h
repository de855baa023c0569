#ifndef XLING_H
#define XLING_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum XlingStatus {
  XLING_STATUS_OK = 0,
  XLING_STATUS_NULL_ARGUMENT = 1,
  XLING_STATUS_INVALID_UTF8 = 2,
  XLING_STATUS_BUFFER_TOO_SMALL = 3,
  XLING_STATUS_CONFIG = 4,
  XLING_STATUS_IO = 5,
  XLING_STATUS_PARSE = 6,
  XLING_STATUS_TOKENIZER = 7,
  XLING_STATUS_CONTEXT = 8,
  XLING_STATUS_UNDEFINED = 9,
  XLING_STATUS_STAGE = 10,
  XLING_STATUS_OTHER = 11,
  XLING_STATUS_PANIC = 12,
} XlingStatus;

/**
 * Smoothed n-gram model over token ids.
 */
typedef struct XlingNgram XlingNgram;

/**
 * Trained BPE tokenizer.
 */
typedef struct XlingTokenizer XlingTokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *xling_last_error(void);

/**
 * Library version as a static string.
 */
const char *xling_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void xling_string_free(char *s);

/**
 * Trains a tokenizer on `n_lines` lines over the a-z initial alphabet.
 *
 * # Safety
 * `lines` must point to `n_lines` NUL-terminated strings; `out` must be writable.
 */
enum XlingStatus xling_tokenizer_train(const char *const *lines,
                                       size_t n_lines,
                                       size_t vocab_size,
                                       bool balanced,
                                       uint64_t seed,
                                       struct XlingTokenizer **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum XlingStatus xling_tokenizer_load(const char *path, struct XlingTokenizer **out);

/**
 * # Safety
 * `t` must be a live tokenizer handle and `path` a NUL-terminated string.
 */
enum XlingStatus xling_tokenizer_save(const struct XlingTokenizer *t, const char *path);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tokenizer handle.
 */
size_t xling_tokenizer_vocab_size(const struct XlingTokenizer *t);

/**
 * Encodes `text` into `ids`. `*n_ids` always receives the required length;
 * `BUFFER_TOO_SMALL` is returned when it exceeds `capacity`.
 *
 * # Safety
 * `ids` must have room for `capacity` values (may be null when it is 0).
 */
enum XlingStatus xling_tokenizer_encode(const struct XlingTokenizer *t,
                                        const char *text,
                                        uint32_t *ids,
                                        size_t capacity,
                                        size_t *n_ids);

/**
 * Decodes ids into a newly allocated string.
 *
 * # Safety
 * `ids` must hold `n_ids` values; `out` must be writable.
 */
enum XlingStatus xling_tokenizer_decode(const struct XlingTokenizer *t,
                                        const uint32_t *ids,
                                        size_t n_ids,
                                        char **out);

/**
 * # Safety
 * `t` must be null or a handle not yet freed.
 */
void xling_tokenizer_free(struct XlingTokenizer *t);

/**
 * Fits an add-k n-gram model. Sequence `i` occupies the next `lens[i]`
 * entries of `ids`.
 *
 * # Safety
 * `lens` must hold `n_seqs` values and `ids` their sum; `out` must be writable.
 */
enum XlingStatus xling_ngram_fit(const uint32_t *ids,
                                 const size_t *lens,
                                 size_t n_seqs,
                                 size_t order,
                                 double k,
                                 size_t vocab_size,
                                 struct XlingNgram **out);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void xling_ngram_free(struct XlingNgram *m);

/**
 * Whether some target sequence can be produced from `prompt` by picking a
 * top-`k` token at every step. A `frontier_cap` of 0 uses the default.
 *
 * # Safety
 * `prompt` must hold `n_prompt` ids; targets are laid out as in
 * [`xling_ngram_fit`]; `reached` must be writable.
 */
enum XlingStatus xling_ngram_reachable(const struct XlingNgram *m,
                                       const uint32_t *prompt,
                                       size_t n_prompt,
                                       const uint32_t *target_ids,
                                       const size_t *target_lens,
                                       size_t n_targets,
                                       size_t k,
                                       size_t frontier_cap,
                                       bool *reached);

/**
 * First step whose value exceeds `threshold`. `*found` is false when no
 * step does, in which case `*step` is left untouched.
 *
 * # Safety
 * `steps` and `values` must hold `n` values; `step` and `found` must be writable.
 */
enum XlingStatus xling_emergence_step(const size_t *steps,
                                      const double *values,
                                      size_t n,
                                      double threshold,
                                      size_t *step,
                                      bool *found);

/**
 * Runs the full pipeline for one seed pair. `config_path` may be null for
 * the desk profile; `out_dir` may be null to keep the configured one. The
 * run directory is returned as a newly allocated string.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `run_dir` must be writable.
 */
enum XlingStatus xling_run_pipeline(const char *config_path,
                                    const char *out_dir,
                                    uint64_t data_seed,
                                    uint64_t model_seed,
                                    char **run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XLING_H */
