/* C ABI for the hifuse health-index library.
 *
 * Conventions:
 *   - Every function returns a status code (HIFUSE_OK = 0) unless it is a
 *     destructor or returns a borrowed string.
 *   - Matrix arguments are row-major double buffers with explicit
 *     dimensions.
 *   - On a non-zero return, hifuse_last_error_message() describes the
 *     failure; the pointer stays valid until the next failing call on the
 *     same thread.
 *   - Handles are created and destroyed only by this library; NULL handles
 *     are reported as errors, never dereferenced.
 */

#ifndef HIFUSE_H
#define HIFUSE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define HIFUSE_OK 0
/* Invalid configuration value (mirrors the CLI exit code). */
#define HIFUSE_ERR_CONFIG 2
/* Malformed or inconsistent data (mirrors the CLI exit code). */
#define HIFUSE_ERR_DATA 3
/* Numerical failure such as a singular solve (mirrors the CLI exit code). */
#define HIFUSE_ERR_NUMERICAL 4
/* NULL pointer, non-UTF-8 string, or a buffer length mismatch. */
#define HIFUSE_ERR_ARG 5
/* Call sequence violation (e.g. reading results before solving). */
#define HIFUSE_ERR_STATE 6
/* A panic was caught at the FFI boundary. */
#define HIFUSE_ERR_PANIC 7

/* Message for the most recent failure on this thread. Never NULL; empty
 * before the first failure. Valid until the next failing call here. */
const char *hifuse_last_error_message(void);

/* Library version as a static NUL-terminated string. */
const char *hifuse_version(void);

/* Pool-adjacent-violators: writes the nondecreasing least-squares fit of
 * v[0..len] into out[0..len] (buffers may alias). */
int32_t hifuse_pava(const double *v, size_t len, double *out);

/* ------------------------------------------------------------------ */
/* Embedding model                                                     */

typedef struct HifuseModel HifuseModel;

/* Loads a model saved by `hifuse train` (JSON). On success writes a handle
 * to *out; release it with hifuse_model_free. */
int32_t hifuse_model_load(const char *path, HifuseModel **out);

/* Releases a model handle. NULL is a no-op. */
void hifuse_model_free(HifuseModel *m);

/* Writes the model's input feature count and embedding dimension. */
int32_t hifuse_model_dims(const HifuseModel *m, size_t *f_dim, size_t *k);

/* Embeds a trajectory: standardizes features (row-major t_len x f_dim)
 * with the model's stored scaler, applies the network, subtracts the
 * center. Writes row-major t_len x k values to out. */
int32_t hifuse_model_embed(const HifuseModel *m, const double *features,
                           size_t t_len, size_t f_dim, double *out);

/* Squared embedding norm per timestep (the raw anomaly score), written to
 * out[0..t_len]. */
int32_t hifuse_model_anomaly_score(const HifuseModel *m,
                                   const double *features, size_t t_len,
                                   size_t f_dim, double *out);

/* ------------------------------------------------------------------ */
/* Fusion                                                              */

typedef struct HifuseFusion HifuseFusion;

/* Creates a fusion problem. beta is the ridge weight, iters the iteration
 * cap, tol the early-exit threshold on the objective decrease, isotonic
 * nonzero to include the monotonicity constraint. Release with
 * hifuse_fusion_free. */
int32_t hifuse_fusion_new(double beta, size_t iters, double tol,
                          int32_t isotonic, HifuseFusion **out);

/* Releases a fusion handle. NULL is a no-op. */
void hifuse_fusion_free(HifuseFusion *f);

/* Adds a run-to-failure training trajectory: condition indicators y
 * (row-major t_len x k), healthy for the first t_healthy steps and faulty
 * from step t_faulty on (1-based, t_healthy < t_faulty <= t_len).
 * Invalidates any previous solve. */
int32_t hifuse_fusion_add_train(HifuseFusion *f, const double *y,
                                size_t t_len, size_t k, size_t t_healthy,
                                size_t t_faulty);

/* Sets the test trajectory, constrained only over its healthy prefix of
 * t_healthy steps. Invalidates any previous solve. */
int32_t hifuse_fusion_set_test(HifuseFusion *f, const double *y,
                               size_t t_len, size_t k, size_t t_healthy);

/* Runs the alternating solver on the trajectories added so far. Requires
 * at least one training trajectory and a test trajectory, all with the
 * same k. */
int32_t hifuse_fusion_solve(HifuseFusion *f);

/* Writes the solved dimensions: fusion weight count k and test-HI length
 * t_test. Fails with HIFUSE_ERR_STATE before a successful solve. */
int32_t hifuse_fusion_dims(const HifuseFusion *f, size_t *k, size_t *t_test);

/* Copies the fusion weights into out[0..k] (k from hifuse_fusion_dims). */
int32_t hifuse_fusion_weights(const HifuseFusion *f, double *out, size_t k);

/* Copies the fused test health index (the projected, monotone z) into
 * out[0..t_test]. */
int32_t hifuse_fusion_test_hi(const HifuseFusion *f, double *out,
                              size_t t_test);

/* Copies training trajectory idx's fused health index into out[0..t_len],
 * where t_len is that trajectory's length. */
int32_t hifuse_fusion_train_hi(const HifuseFusion *f, size_t idx,
                               double *out, size_t t_len);

#ifdef __cplusplus
}
#endif

#endif /* HIFUSE_H */
