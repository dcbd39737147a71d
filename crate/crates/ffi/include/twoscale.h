#ifndef TWOSCALE_H
#define TWOSCALE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_BUFFER_TOO_SMALL = 3,
  TS_STATUS_PARSE = 4,
  TS_STATUS_IO = 5,
  TS_STATUS_INVALID_KERNEL = 6,
  TS_STATUS_REDUCIBLE_CHAIN = 7,
  TS_STATUS_SINGULAR = 8,
  TS_STATUS_NO_CONVERGENCE = 9,
  TS_STATUS_DIVERGED = 10,
  TS_STATUS_CONFIG = 11,
  TS_STATUS_PANIC = 12,
} TsStatus;

/**
 * Base norm of a Moreau envelope.
 */
typedef enum TsNorm {
  TS_NORM_EUCLIDEAN = 0,
  TS_NORM_MAX_ABS = 1,
  TS_NORM_WEIGHTED_MAX = 2,
} TsNorm;

/**
 * Finite Markov chain.
 */
typedef struct TsChain TsChain;

/**
 * Quadratic game with linear coupling constraints.
 */
typedef struct TsGame TsGame;

/**
 * Finite MDP with a sampling policy.
 */
typedef struct TsMdp TsMdp;

/**
 * Least-squares fit of `ln value` against `ln n`.
 */
typedef struct TsRateFit {
  double slope;
  double intercept;
  double r_squared;
  uint64_t n_lo;
  uint64_t n_hi;
} TsRateFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (nul-terminated, truncated to
 * `len - 1` bytes) and returns the full message length plus one. Pass a null `buf` to query
 * the size.
 */
size_t ts_last_error(char *buf, size_t len);

/**
 * Builds a chain from a row-major `n × n` kernel.
 */
enum TsStatus ts_chain_new(size_t n, const double *kernel, struct TsChain **out);

/**
 * Loads a chain from a kernel file (`n` followed by `n` rows).
 */
enum TsStatus ts_chain_load(const char *file, struct TsChain **out);

void ts_chain_free(struct TsChain *chain);

enum TsStatus ts_chain_n_states(const struct TsChain *chain, size_t *out);

/**
 * Writes the stationary distribution (`n` entries).
 */
enum TsStatus ts_chain_stationary(const struct TsChain *chain, double *out, size_t len);

/**
 * Solves the Poisson equation `V − PV = h` for a centered row-major `n × d` table `h`, pinned
 * by `V(reference_state) = 0`, and writes `V` (`n · d` entries) together with the residual.
 */
enum TsStatus ts_chain_poisson(const struct TsChain *chain,
                               const double *h,
                               size_t d,
                               size_t reference_state,
                               double *v_out,
                               size_t len,
                               double *residual);

/**
 * Evaluates the Moreau envelope `min_v ½‖v‖² + (1/2q)‖x − v‖₂²` of the chosen norm at `x`.
 * `weights` is read only for `TS_NORM_WEIGHTED_MAX`. `prox_out` may be null.
 */
enum TsStatus ts_envelope_eval(enum TsNorm norm,
                               const double *weights,
                               size_t dim,
                               double q,
                               const double *x,
                               double *value_out,
                               double *prox_out);

/**
 * Loads an MDP model file.
 */
enum TsStatus ts_mdp_load(const char *file, struct TsMdp **out);

/**
 * Random MDP with `branching` successors per state-action pair and a uniform policy.
 */
enum TsStatus ts_mdp_garnet(size_t states,
                            size_t actions,
                            size_t branching,
                            size_t reference_state,
                            uint64_t seed,
                            struct TsMdp **out);

void ts_mdp_free(struct TsMdp *mdp);

/**
 * Number of state-action pairs, the length of every Q-vector.
 */
enum TsStatus ts_mdp_n_pairs(const struct TsMdp *mdp, size_t *out);

/**
 * Optimal average cost `ρ*` and relative Q-values pinned at the model's reference state.
 */
enum TsStatus ts_mdp_avgcost(const struct TsMdp *mdp, double *rho_out, double *q_out, size_t len);

/**
 * Optimal discounted Q-values for `gamma ∈ [0, 1)`.
 */
enum TsStatus ts_mdp_discounted(const struct TsMdp *mdp, double gamma, double *q_out, size_t len);

/**
 * Loads a game file (`K d c_rows`, then `M`, `c`, `A`, `b`).
 */
enum TsStatus ts_game_load(const char *file, struct TsGame **out);

/**
 * Random strongly monotone quadratic game.
 */
enum TsStatus ts_game_random(size_t players,
                             size_t action_dim,
                             size_t constraints,
                             uint64_t seed,
                             struct TsGame **out);

void ts_game_free(struct TsGame *game);

/**
 * Joint action dimension `K · d` and number of constraint rows.
 */
enum TsStatus ts_game_dims(const struct TsGame *game, size_t *dim_out, size_t *constraints_out);

/**
 * Exact equilibrium `x*` and multipliers `y*`.
 */
enum TsStatus ts_game_kkt(const struct TsGame *game,
                          double *x_out,
                          size_t x_len,
                          double *y_out,
                          size_t y_len);

/**
 * Fits `ln value = intercept + slope · ln n` over checkpoints in `[lo, hi]`.
 */
enum TsStatus ts_fit_rate(const uint64_t *checkpoints,
                          const double *values,
                          size_t len,
                          uint64_t lo,
                          uint64_t hi,
                          struct TsRateFit *out);

/**
 * Runs the experiment described by a config file and writes its CSVs and report. The fit of
 * the fast-iterate error `err_x_sq` is stored in `fit_out` when it is not null.
 */
enum TsStatus ts_run_experiment(const char *config_file, struct TsRateFit *fit_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOSCALE_H */
