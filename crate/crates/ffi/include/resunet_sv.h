#ifndef RESUNET_SV_H
#define RESUNET_SV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum RsvStatus {
  RSV_STATUS_OK = 0,
  RSV_STATUS_NULL_POINTER = 1,
  RSV_STATUS_INVALID_ARGUMENT = 2,
  RSV_STATUS_IO = 3,
  RSV_STATUS_FORMAT = 4,
  RSV_STATUS_DATA = 5,
  RSV_STATUS_PANIC = 6,
} RsvStatus;

/**
 * Opaque network handle.
 */
typedef struct RsvNetwork RsvNetwork;

/**
 * Network shape. `se_reduction` of 0 selects the default.
 */
typedef struct RsvNetworkConfig {
  size_t residual_blocks;
  size_t base_channels;
  size_t embed_dim;
  size_t n_mels;
  size_t se_reduction;
} RsvNetworkConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a randomly initialized network.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum RsvStatus rsv_network_new(struct RsvNetworkConfig config,
                               uint64_t seed,
                               struct RsvNetwork **out);

/**
 * Loads a checkpoint that must match `config`.
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string; `out` as in [`rsv_network_new`].
 */
enum RsvStatus rsv_network_load(const char *path,
                                struct RsvNetworkConfig config,
                                struct RsvNetwork **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void rsv_network_free(struct RsvNetwork *net);

/**
 * Embedding size of a network, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t rsv_network_embed_dim(const struct RsvNetwork *net);

/**
 * Embeds one utterance. `features` is frame-major, `frames * n_mels` values;
 * `out_len` must equal the embedding size.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum RsvStatus rsv_network_forward(const struct RsvNetwork *net,
                                   const float *features,
                                   size_t frames,
                                   size_t n_mels,
                                   float *out,
                                   size_t out_len);

/**
 * Cosine similarity of two vectors of length `n`.
 *
 * # Safety
 * `a` and `b` must hold `n` values; `out` must be writable.
 */
enum RsvStatus rsv_cosine(const float *a, const float *b, size_t n, double *out);

/**
 * Equal error rate as a fraction, and the threshold where it occurs.
 * Nonzero labels mark target trials. `out_threshold` may be null.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out_eer` must be writable.
 */
enum RsvStatus rsv_eer(const double *scores,
                       const uint8_t *labels,
                       size_t n,
                       double *out_eer,
                       double *out_threshold);

/**
 * Minimum normalized detection cost.
 *
 * # Safety
 * As for [`rsv_eer`].
 */
enum RsvStatus rsv_min_dcf(const double *scores,
                           const uint8_t *labels,
                           size_t n,
                           double p_target,
                           double c_miss,
                           double c_fa,
                           double *out);

/**
 * Message of the last failed call on this thread, or null after a success.
 * Valid until the next call on the same thread.
 */
const char *rsv_last_error_message(void);

/**
 * Library version, nul-terminated and static.
 */
const char *rsv_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESUNET_SV_H */
