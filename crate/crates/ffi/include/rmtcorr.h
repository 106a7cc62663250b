#ifndef RMTCORR_H
#define RMTCORR_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RmtStatus {
  RMT_STATUS_OK = 0,
  RMT_STATUS_NULL_POINTER = 1,
  RMT_STATUS_INVALID_PARAMETER = 2,
  RMT_STATUS_NUMERIC = 3,
  RMT_STATUS_DATA = 4,
  RMT_STATUS_DOMAIN = 5,
  RMT_STATUS_IO = 6,
  RMT_STATUS_FORMAT = 7,
  // Output buffer shorter than required.
  RMT_STATUS_BUFFER_TOO_SMALL = 8,
  RMT_STATUS_PANIC = 9,
} RmtStatus;

typedef enum RmtComponent {
  RMT_COMPONENT_MARKET = 0,
  RMT_COMPONENT_GROUP = 1,
  RMT_COMPONENT_RANDOM = 2,
} RmtComponent;

// Opaque correlation matrix.
typedef struct RmtCorrelation RmtCorrelation;

// Opaque mode decomposition.
typedef struct RmtModes RmtModes;

// Summary statistics of one correlation matrix. Missing values are NaN
// (and `neg_count` is -1).
typedef struct RmtEpochStats {
  double mean_c;
  double mean_abs_c;
  double df;
  double variance;
  double skewness;
  double kurtosis;
  double lambda_max;
  double lambda_min_emerging;
  int64_t neg_count;
} RmtEpochStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (nul-terminated,
// truncated to `len`). Returns the full message length, 0 if there is none.
size_t rmt_last_error(char *buf, size_t len);

// Library version as a static nul-terminated string.
const char *rmt_version(void);

// Marchenko-Pastur support edges for `Q = T/N` and variance `sigma2`.
enum RmtStatus rmt_mp_bounds(double q, double sigma2, double *lambda_min, double *lambda_max);

// Continuous part of the Marchenko-Pastur density.
double rmt_mp_density(double lambda, double q, double sigma2);

// `sign(x) |x|^(1 + epsilon)`.
double rmt_power_map_value(double x, double epsilon);

// Correlation of the epoch of length `epoch_len` ending at return index `tau`.
//
// `returns` is `n x t`, row-major, one row per asset.
enum RmtStatus rmt_correlation_epoch(const double *returns,
                                     size_t n,
                                     size_t t,
                                     size_t tau,
                                     size_t epoch_len,
                                     struct RmtCorrelation **out);

// Wraps an existing `n x n` row-major correlation matrix estimated from
// `epoch_len` observations.
enum RmtStatus rmt_correlation_from_matrix(const double *values,
                                           size_t n,
                                           size_t epoch_len,
                                           struct RmtCorrelation **out);

void rmt_correlation_free(struct RmtCorrelation *c);

// Dimension `N`, or 0 for a null handle.
size_t rmt_correlation_dim(const struct RmtCorrelation *c);

// Copies the `N x N` matrix, row-major, into `buf`.
enum RmtStatus rmt_correlation_values(const struct RmtCorrelation *c, double *buf, size_t len);

// Eigenvalues in descending order.
enum RmtStatus rmt_correlation_eigenvalues(const struct RmtCorrelation *c, double *buf, size_t len);

// Power-mapped copy of `c` as a new handle.
enum RmtStatus rmt_correlation_power_map(const struct RmtCorrelation *c,
                                         double epsilon,
                                         struct RmtCorrelation **out);

// Smallest emerging eigenvalue and negative-eigenvalue count after the power map.
enum RmtStatus rmt_emerging_spectrum(const struct RmtCorrelation *c,
                                     double epsilon,
                                     double *lambda_min,
                                     size_t *neg_count);

enum RmtStatus rmt_epoch_stats(const struct RmtCorrelation *c,
                               double epsilon,
                               struct RmtEpochStats *out);

// Splits `c` into market, group and random components; `n_group` counts
// the market mode plus the group modes.
enum RmtStatus rmt_modes_decompose(const struct RmtCorrelation *c,
                                   size_t n_group,
                                   struct RmtModes **out);

void rmt_modes_free(struct RmtModes *m);

// Copies one `N x N` component, row-major, into `buf`.
enum RmtStatus rmt_modes_component(const struct RmtModes *m,
                                   enum RmtComponent which,
                                   double *buf,
                                   size_t len);

// Eigenvalues above the Marchenko-Pastur edge for `q`, minus one, at least 1.
enum RmtStatus rmt_suggest_n_group(const double *eigenvalues, size_t len, double q, size_t *out);

// Classical MDS of an `n x n` row-major dissimilarity matrix into `k_dim`
// dimensions. `coords` receives `n x k_dim` values, row-major; `*dims_used`
// is the number of non-degenerate dimensions (the rest are zero).
enum RmtStatus rmt_classical_mds(const double *dissimilarity,
                                 size_t n,
                                 size_t k_dim,
                                 double *coords,
                                 size_t len,
                                 size_t *dims_used);

// Row-stochastic `k x k` transition probabilities of a 0-based state path.
enum RmtStatus rmt_transition_matrix(const size_t *path,
                                     size_t len,
                                     size_t k,
                                     double *probs,
                                     size_t probs_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMTCORR_H */
