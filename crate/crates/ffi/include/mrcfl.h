#ifndef MRCFL_H
#define MRCFL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum MrcflStatus {
  MRCFL_STATUS_OK = 0,
  MRCFL_STATUS_NULL_POINTER = 1,
  MRCFL_STATUS_INVALID_ARGUMENT = 2,
  MRCFL_STATUS_CONFIG_ERROR = 3,
  MRCFL_STATUS_RUNTIME_ERROR = 4,
  MRCFL_STATUS_PANIC = 5,
} MrcflStatus;

/**
 * Opaque simulation handle.
 */
typedef struct MrcflSimulation MrcflSimulation;

/**
 * Metrics of one simulated round.
 */
typedef struct MrcflRoundMetrics {
  uint64_t round;
  /**
   * NaN when the round was not evaluated.
   */
  double accuracy;
  double loss;
  uint64_t uplink_bits;
  uint64_t downlink_bits;
  double kl_ul_mean;
  double kl_dl_mean;
} MrcflRoundMetrics;

/**
 * Bits per parameter, per client and per round.
 */
typedef struct MrcflCostReport {
  double bpp_total;
  double bpp_broadcast;
  double bpp_uplink;
  double bpp_downlink;
  double bpp_setup;
} MrcflCostReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mrcfl_last_error(void);

/**
 * Probability that MRC with `n` candidates decodes a 1 for posterior
 * `Ber(q)` and prior `Ber(p)`.
 *
 * # Safety
 * `out` must be null or writable.
 */
enum MrcflStatus mrcfl_exact_marginal(double q, double p, size_t n, double *out);

/**
 * `KL(Ber(q) || Ber(p))` in nats.
 *
 * # Safety
 * `out` must be null or writable.
 */
enum MrcflStatus mrcfl_kl_bernoulli(double q, double p, double *out);

/**
 * Encodes one block of `len` Bernoulli parameters with `n_candidates`
 * candidates drawn from the stream keyed by `(seed, block)`.
 *
 * # Safety
 * `posterior` and `prior` must hold `len` values; `out_index` must be writable.
 */
enum MrcflStatus mrcfl_encode_block(const double *posterior,
                                    const double *prior,
                                    size_t len,
                                    size_t n_candidates,
                                    uint64_t seed,
                                    uint64_t block,
                                    uint32_t *out_index);

/**
 * Regenerates candidate `index` of the block keyed by `(seed, block)` and
 * writes its `len` bits (0 or 1) to `out_bits`.
 *
 * # Safety
 * `prior` must hold `len` values and `out_bits` must have room for `len` bytes.
 */
enum MrcflStatus mrcfl_decode_block(uint32_t index,
                                    const double *prior,
                                    size_t len,
                                    size_t n_candidates,
                                    uint64_t seed,
                                    uint64_t block,
                                    uint8_t *out_bits);

/**
 * Creates a simulation from `key = value` configuration text (null or
 * empty for the defaults).
 *
 * # Safety
 * `config_text` must be null or NUL-terminated; `out` must be writable.
 */
enum MrcflStatus mrcfl_simulation_new(const char *config_text, struct MrcflSimulation **out);

/**
 * Runs one round. Rounds past the configured count are still executed.
 *
 * # Safety
 * `sim` must come from [`mrcfl_simulation_new`]; `out` must be null or writable.
 */
enum MrcflStatus mrcfl_simulation_step(struct MrcflSimulation *sim, struct MrcflRoundMetrics *out);

/**
 * Communication rates accumulated so far.
 *
 * # Safety
 * `sim` must come from [`mrcfl_simulation_new`]; `out` must be writable.
 */
enum MrcflStatus mrcfl_simulation_report(const struct MrcflSimulation *sim,
                                         struct MrcflCostReport *out);

/**
 * Releases a simulation. Null is ignored.
 *
 * # Safety
 * `sim` must be null or come from [`mrcfl_simulation_new`], and must not be
 * used afterwards.
 */
void mrcfl_simulation_free(struct MrcflSimulation *sim);

/**
 * Analytic per-round cost of `variant` on a `dim`-parameter model, with the
 * remaining settings taken from `config_text` (null for the defaults).
 *
 * # Safety
 * Strings must be null or NUL-terminated; `out` must be writable.
 */
enum MrcflStatus mrcfl_cost_report(const char *variant,
                                   const char *config_text,
                                   size_t dim,
                                   struct MrcflCostReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRCFL_H */
